//! Right-hand side expressions: sums of products of constants, the
//! coordinates `x0 x1 x2` (aliases `x y z`), `u` and `g2 = |Du|²`, joined by
//! `+`, `-` and `*` (or `·`). Parsed into a polynomial so that the partial
//! derivatives in `u` and `Du` are exact.

use sumhess_core::solver::Rhs;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character {0:?} at offset {1}")]
    Char(char, usize),
    #[error("unknown variable {0:?}")]
    Variable(String),
    #[error("bad number {0:?}")]
    Number(String),
    #[error("expected a factor at offset {0}")]
    Missing(usize),
    #[error("{0} may not appear here")]
    Forbidden(&'static str),
    #[error("coordinate {0} exceeds the dimension {1}")]
    Dimension(usize, usize),
}

const X0: usize = 0;
const U: usize = 3;
const G2: usize = 4;
const VARS: usize = 5;

/// `coef · x0^a x1^b x2^c u^d g2^e`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Monomial {
    coef: f64,
    powers: [u32; VARS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    terms: Vec<Monomial>,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Var(usize),
    Plus,
    Minus,
    Times,
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push((Token::Plus, pos));
                i += 1;
            }
            '-' => {
                out.push((Token::Minus, pos));
                i += 1;
            }
            '*' | '·' => {
                out.push((Token::Times, pos));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() {
                    let d = chars[i].1;
                    let exp_sign = (d == '+' || d == '-') && matches!(chars[i - 1].1, 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().map(|c| c.1).collect();
                let v: f64 = text.parse().map_err(|_| ExprError::Number(text.clone()))?;
                out.push((Token::Num(v), pos));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].1.is_ascii_alphanumeric() {
                    i += 1;
                }
                let name: String = chars[start..i].iter().map(|c| c.1).collect();
                let var = match name.as_str() {
                    "x" | "x0" => X0,
                    "y" | "x1" => X0 + 1,
                    "z" | "x2" => X0 + 2,
                    "u" => U,
                    "g2" => G2,
                    _ => return Err(ExprError::Variable(name)),
                };
                out.push((Token::Var(var), pos));
            }
            other => return Err(ExprError::Char(other, pos)),
        }
    }
    Ok(out)
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(src)?;
        if tokens.is_empty() {
            return Err(ExprError::Empty);
        }
        let mut terms = Vec::new();
        let mut i = 0;
        let end = src.len();
        while i < tokens.len() {
            // Leading signs of a term.
            let mut sign = 1.0;
            let mut signed = false;
            while let Some((t @ (Token::Plus | Token::Minus), _)) = tokens.get(i) {
                if *t == Token::Minus {
                    sign = -sign;
                }
                signed = true;
                i += 1;
            }
            if !signed && !terms.is_empty() {
                return Err(ExprError::Missing(tokens[i].1));
            }
            let mut m = Monomial {
                coef: sign,
                powers: [0; VARS],
            };
            loop {
                match tokens.get(i) {
                    Some((Token::Num(v), _)) => m.coef *= v,
                    Some((Token::Var(k), _)) => m.powers[*k] += 1,
                    Some((_, pos)) => return Err(ExprError::Missing(*pos)),
                    None => return Err(ExprError::Missing(end)),
                }
                i += 1;
                match tokens.get(i) {
                    Some((Token::Times, _)) => i += 1,
                    _ => break,
                }
            }
            terms.push(m);
        }
        Ok(Expr { terms })
    }

    fn uses(&self, var: usize) -> bool {
        self.terms.iter().any(|m| m.powers[var] > 0)
    }

    pub fn uses_u(&self) -> bool {
        self.uses(U)
    }

    pub fn uses_gradient(&self) -> bool {
        self.uses(G2)
    }

    /// Highest coordinate index used, if any.
    pub fn max_coordinate(&self) -> Option<usize> {
        (0..3).rev().find(|&a| self.uses(X0 + a))
    }

    fn values(x: &[f64], u: f64, p: &[f64]) -> [f64; VARS] {
        let c = |a: usize| x.get(a).copied().unwrap_or(0.0);
        [c(0), c(1), c(2), u, p.iter().map(|v| v * v).sum()]
    }

    fn eval_at(&self, v: &[f64; VARS]) -> f64 {
        self.terms
            .iter()
            .map(|m| m.coef * (0..VARS).map(|k| v[k].powi(m.powers[k] as i32)).product::<f64>())
            .sum()
    }

    /// Derivative with respect to variable `var`, at `v`.
    fn partial_at(&self, var: usize, v: &[f64; VARS]) -> f64 {
        self.terms
            .iter()
            .filter(|m| m.powers[var] > 0)
            .map(|m| {
                let d = m.powers[var];
                let mut r = m.coef * d as f64 * v[var].powi(d as i32 - 1);
                for k in (0..VARS).filter(|&k| k != var) {
                    r *= v[k].powi(m.powers[k] as i32);
                }
                r
            })
            .sum()
    }

    pub fn eval(&self, x: &[f64], u: f64, p: &[f64]) -> f64 {
        self.eval_at(&Expr::values(x, u, p))
    }

    /// `f(x, u, p)` with exact partials `f_u` and `f_p = 2 p ∂f/∂g2`.
    pub fn to_rhs(&self, dim: usize) -> Result<Rhs, ExprError> {
        if let Some(a) = self.max_coordinate().filter(|&a| a >= dim) {
            return Err(ExprError::Dimension(a, dim));
        }
        let (f, fu, fp) = (self.clone(), self.clone(), self.clone());
        let rhs = Rhs::new(move |x, u, p| f.eval(x, u, p)).with_partials(
            move |x, u, p| fu.partial_at(U, &Expr::values(x, u, p)),
            move |x, u, p| {
                let d = fp.partial_at(G2, &Expr::values(x, u, p));
                p.iter().map(|v| 2.0 * v * d).collect()
            },
        );
        Ok(if self.uses_gradient() { rhs.gradient_dependent() } else { rhs })
    }

    /// A boundary trace may depend on `x` only.
    pub fn to_boundary(&self, dim: usize) -> Result<impl Fn(&[f64]) -> f64 + Send + Sync + Clone + 'static, ExprError> {
        if self.uses_u() {
            return Err(ExprError::Forbidden("u"));
        }
        if self.uses_gradient() {
            return Err(ExprError::Forbidden("g2"));
        }
        if let Some(a) = self.max_coordinate().filter(|&a| a >= dim) {
            return Err(ExprError::Dimension(a, dim));
        }
        let e = self.clone();
        Ok(move |x: &[f64]| e.eval(x, 0.0, &[]))
    }
}
