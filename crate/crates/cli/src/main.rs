fn main() {
    std::process::exit(sumhess_cli::run(std::env::args_os()));
}
