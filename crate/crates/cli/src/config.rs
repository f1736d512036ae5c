//! Resolved run configuration and its `key = value` file format.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("{key}: cannot parse {value:?}")]
    Value { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Identities,
    Solve,
    Estimate,
    Rigidity,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Identities => "identities",
            Subcommand::Solve => "solve",
            Subcommand::Estimate => "estimate",
            Subcommand::Rigidity => "rigidity",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Subcommand::Identities, Subcommand::Solve, Subcommand::Estimate, Subcommand::Rigidity]
            .into_iter()
            .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    /// Interior nodes per axis.
    pub cells: usize,
    pub lo: f64,
    pub hi: f64,
    /// `f(x, u, |Du|²)`.
    pub rhs: String,
    /// Dirichlet trace as an expression in `x`.
    pub boundary: String,
    pub rtol: f64,
    pub max_iter: usize,
    /// Samples per configuration for sweeps.
    pub samples: usize,
    pub betas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub levels: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Negates every lemma margin (negative control).
    pub flip_signs: bool,
    /// Restricts the identities sweep to these reports; empty means all.
    pub reports: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subcommand: Subcommand::Identities,
            n: 2,
            k: 2,
            alpha: 1.0,
            cells: 15,
            lo: -1.0,
            hi: 1.0,
            rhs: "3".into(),
            boundary: "0".into(),
            rtol: 1e-8,
            max_iter: 60,
            samples: 1000,
            betas: vec![1.0, 1.1, 2.0, 4.0, 8.0],
            deltas: vec![0.1],
            levels: 3,
            seed: 0x5eed,
            out: PathBuf::from("out"),
            flip_signs: false,
            reports: Vec::new(),
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| ConfigError::Value {
                key: key.into(),
                value: value.into(),
            })
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
    })
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "subcommand" => {
                self.subcommand = Subcommand::parse(v).ok_or_else(|| ConfigError::Value {
                    key: key.into(),
                    value: value.into(),
                })?
            }
            "n" => self.n = parse_one(key, v)?,
            "k" => self.k = parse_one(key, v)?,
            "alpha" => self.alpha = parse_one(key, v)?,
            "cells" => self.cells = parse_one(key, v)?,
            "lo" => self.lo = parse_one(key, v)?,
            "hi" => self.hi = parse_one(key, v)?,
            "rhs" => self.rhs = v.to_string(),
            "boundary" => self.boundary = v.to_string(),
            "rtol" => self.rtol = parse_one(key, v)?,
            "max_iter" => self.max_iter = parse_one(key, v)?,
            "samples" => self.samples = parse_one(key, v)?,
            "betas" => self.betas = parse_list(key, v)?,
            "deltas" => self.deltas = parse_list(key, v)?,
            "levels" => self.levels = parse_one(key, v)?,
            "seed" => self.seed = parse_one(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "flip_signs" => self.flip_signs = parse_one(key, v)?,
            "reports" => {
                self.reports = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    /// `threads` is accepted and ignored here (it is read by the driver).
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let key = key.trim();
            if key == "threads" {
                continue;
            }
            self.set(key, value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line, key },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every key, one per line, in a fixed order. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let f = |x: f64| format!("{x:?}");
        let fl = |v: &[f64]| v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "subcommand = {}", self.subcommand.name());
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "alpha = {}", f(self.alpha));
        let _ = writeln!(s, "cells = {}", self.cells);
        let _ = writeln!(s, "lo = {}", f(self.lo));
        let _ = writeln!(s, "hi = {}", f(self.hi));
        let _ = writeln!(s, "rhs = {}", self.rhs);
        let _ = writeln!(s, "boundary = {}", self.boundary);
        let _ = writeln!(s, "rtol = {}", f(self.rtol));
        let _ = writeln!(s, "max_iter = {}", self.max_iter);
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "betas = {}", fl(&self.betas));
        let _ = writeln!(s, "deltas = {}", fl(&self.deltas));
        let _ = writeln!(s, "levels = {}", self.levels);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "flip_signs = {}", self.flip_signs);
        let _ = writeln!(s, "reports = {}", list(&self.reports));
        s
    }

    /// Range checks that do not need the numerical core.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=6).contains(&self.n) {
            return bad(format!("n = {} outside 1..=6", self.n));
        }
        if self.k == 0 || self.k > self.n {
            return bad(format!("k = {} outside 1..=n", self.k));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be positive", self.alpha));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return bad("need lo < hi".into());
        }
        if self.cells < 3 {
            return bad("cells must be at least 3".into());
        }
        if self.rtol.is_nan() || self.rtol <= 0.0 {
            return bad("rtol must be positive".into());
        }
        if self.max_iter == 0 || self.levels == 0 || self.samples == 0 {
            return bad("max_iter, levels and samples must be positive".into());
        }
        if self.betas.iter().chain(&self.deltas).any(|v| !v.is_finite() || *v < 0.0) {
            return bad("exponents must be finite and non-negative".into());
        }
        if self.rhs.contains('\n') || self.boundary.contains('\n') || self.rhs.contains('#') || self.boundary.contains('#') {
            return bad("expressions must be single-line and free of '#'".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn file_format() {
        let c = RunConfig::from_text("# comment\nsubcommand = solve\nrhs = 3 + 0.1*g2  # trailing\n\nbetas = 1, 2\nthreads = 2\n").unwrap();
        assert_eq!(c.subcommand, Subcommand::Solve);
        assert_eq!(c.rhs, "3 + 0.1*g2");
        assert_eq!(c.betas, vec![1.0, 2.0]);
        assert_eq!(RunConfig::from_text("n 3"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(RunConfig::from_text("\nbogus = 1"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(RunConfig::from_text("n = two"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.k = 3;
        assert!(c.validate().is_err());
        let c = RunConfig {
            alpha: 0.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn expr() -> impl Strategy<Value = String> {
            prop::collection::vec((-1e3f64..1e3, prop::sample::select(vec!["", "*x", "*y", "*u", "*g2"])), 1..4).prop_map(
                |terms| terms.iter().map(|(c, v)| format!("{c:?}{v}")).collect::<Vec<_>>().join(" + "),
            )
        }

        proptest! {
            #[test]
            fn text_round_trip(
                n in 1usize..7, k in 1usize..7, alpha in 1e-6f64..1e6, cells in 3usize..200,
                lo in -10f64..0.0, width in 1e-3f64..20.0, rhs in expr(), rtol in 1e-15f64..1e-2,
                samples in 1usize..100_000, betas in prop::collection::vec(0f64..16.0, 0..6),
                deltas in prop::collection::vec(0f64..1.0, 0..4), seed in any::<u64>(),
                flip in any::<bool>(), reports in prop::collection::vec("[a-z_]{1,12}", 0..4),
                sub in 0usize..4,
            ) {
                let subs = [Subcommand::Identities, Subcommand::Solve, Subcommand::Estimate, Subcommand::Rigidity];
                let c = RunConfig {
                    subcommand: subs[sub],
                    n, k, alpha, cells, lo, hi: lo + width, rhs, rtol, samples, betas, deltas, seed,
                    flip_signs: flip,
                    reports,
                    out: PathBuf::from(format!("runs/{seed}")),
                    ..RunConfig::default()
                };
                let back = RunConfig::from_text(&c.to_text()).unwrap();
                prop_assert_eq!(&back, &c);
                prop_assert_eq!(back.to_text(), c.to_text());
            }
        }
    }
}
