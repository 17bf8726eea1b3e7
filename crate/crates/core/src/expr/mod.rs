//! Scalar symbolic expressions over variables `x1..xN`.
//!
//! These trees hold the coefficient functions of vector fields and the
//! components of coordinate-change maps. They are deliberately small:
//! evaluation, symbolic differentiation, printing and a smoothness guard.
//! There is no simplification beyond constant folding at construction
//! time; correctness wins over canonical form.

mod parser;

pub use parser::parse;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Abs,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree. Variables are 1-based to match the `x1..xN` syntax.
///
/// Immutable after construction; evaluation is pure, so sharing across
/// threads is safe.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Arc<Expr>),
    Binary(BinaryOp, Arc<Expr>, Arc<Expr>),
}

/// Marker deciding whether Taylor-type operations may touch the expression.
///
/// The guard is syntactic and conservative: `abs`, `sqrt`, `ln`, division by
/// a variable-dependent expression and non-integer powers of one all trip it,
/// whether or not the particular composition happens to be smooth at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothnessFlag {
    SymbolicallySmoothAtZero,
    NonsmoothAtZero,
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(index: usize) -> Expr {
        assert!(index >= 1, "variables are 1-based");
        Expr::Var(index)
    }

    fn unary(op: UnaryOp, a: Expr) -> Expr {
        if let (UnaryOp::Neg, Expr::Const(c)) = (op, &a) {
            return Expr::Const(-c);
        }
        Expr::Unary(op, Arc::new(a))
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Neg, a)
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Sin, a)
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Cos, a)
    }

    pub fn exp(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Exp, a)
    }

    pub fn ln(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Ln, a)
    }

    pub fn abs(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Abs, a)
    }

    pub fn sqrt(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Sqrt, a)
    }

    /// Sum with constant folding and zero elision.
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            (Expr::Const(x), _) if *x == 0.0 => b,
            (_, Expr::Const(y)) if *y == 0.0 => a,
            _ => Expr::Binary(BinaryOp::Add, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            (_, Expr::Const(y)) if *y == 0.0 => a,
            (Expr::Const(x), _) if *x == 0.0 => Expr::neg(b),
            _ => Expr::Binary(BinaryOp::Sub, Arc::new(a), Arc::new(b)),
        }
    }

    /// Product with constant folding; `0 * e` collapses to `0`, which may
    /// enlarge the domain of derivative trees (standard for symbolic work).
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
            (_, Expr::Const(y)) if *y == 0.0 => Expr::Const(0.0),
            (Expr::Const(x), _) if *x == 1.0 => b,
            (_, Expr::Const(y)) if *y == 1.0 => a,
            _ => Expr::Binary(BinaryOp::Mul, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
            (_, Expr::Const(y)) if *y == 1.0 => a,
            (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
            _ => Expr::Binary(BinaryOp::Div, Arc::new(a), Arc::new(b)),
        }
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => {
                let v = pow_value(*x, *y);
                if v.is_finite() {
                    return Expr::Const(v);
                }
                Expr::Binary(BinaryOp::Pow, Arc::new(a), Arc::new(b))
            }
            (_, Expr::Const(y)) if *y == 0.0 => Expr::Const(1.0),
            (_, Expr::Const(y)) if *y == 1.0 => a,
            _ => Expr::Binary(BinaryOp::Pow, Arc::new(a), Arc::new(b)),
        }
    }

    /// Monomial `c * x^alpha` over `alpha.len()` variables.
    pub fn monomial(c: f64, alpha: &[usize]) -> Expr {
        let mut e = Expr::Const(c);
        for (i, &k) in alpha.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let p = if k == 1 {
                Expr::Var(i + 1)
            } else {
                Expr::pow(Expr::Var(i + 1), Expr::Const(k as f64))
            };
            e = Expr::mul(e, p);
        }
        e
    }

    pub fn depends_on_vars(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(_) => true,
            Expr::Unary(_, a) => a.depends_on_vars(),
            Expr::Binary(_, a, b) => a.depends_on_vars() || b.depends_on_vars(),
        }
    }

    /// Substitute `xi -> xi + offset[i-1]`, shifting the origin.
    pub fn shifted(&self, offset: &[f64]) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(i) => {
                let o = offset.get(*i - 1).copied().unwrap_or(0.0);
                if o == 0.0 {
                    self.clone()
                } else {
                    Expr::Binary(
                        BinaryOp::Add,
                        Arc::new(Expr::Var(*i)),
                        Arc::new(Expr::Const(o)),
                    )
                }
            }
            Expr::Unary(op, a) => Expr::Unary(*op, Arc::new(a.shifted(offset))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Arc::new(a.shifted(offset)),
                Arc::new(b.shifted(offset)),
            ),
        }
    }

    /// Largest variable index appearing in the tree (0 for constants).
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => *i,
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    /// Evaluate at `point` (`point[i-1]` is the value of `xi`).
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => {
                if *i == 0 || *i > point.len() {
                    return Err(Error::UnknownVariable {
                        name: format!("x{i}"),
                        dim: point.len(),
                    });
                }
                point[*i - 1]
            }
            Expr::Unary(op, a) => {
                let x = a.eval(point)?;
                match op {
                    UnaryOp::Neg => -x,
                    UnaryOp::Sin => x.sin(),
                    UnaryOp::Cos => x.cos(),
                    UnaryOp::Exp => x.exp(),
                    UnaryOp::Ln => {
                        if x <= 0.0 {
                            return Err(self.domain_error(point, "ln of non-positive value"));
                        }
                        x.ln()
                    }
                    UnaryOp::Abs => x.abs(),
                    UnaryOp::Sqrt => {
                        if x < 0.0 {
                            return Err(self.domain_error(point, "sqrt of negative value"));
                        }
                        x.sqrt()
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(point)?;
                match op {
                    BinaryOp::Add => x + b.eval(point)?,
                    BinaryOp::Sub => x - b.eval(point)?,
                    BinaryOp::Mul => x * b.eval(point)?,
                    BinaryOp::Div => {
                        let y = b.eval(point)?;
                        if y == 0.0 {
                            return Err(self.domain_error(point, "division by zero"));
                        }
                        x / y
                    }
                    BinaryOp::Pow => {
                        let v = if let Expr::Const(c) = **b {
                            pow_value(x, c)
                        } else {
                            x.powf(b.eval(point)?)
                        };
                        if !v.is_finite() {
                            return Err(self.domain_error(point, "power outside the real domain"));
                        }
                        v
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain_error(point, "non-finite result"))
        }
    }

    fn domain_error(&self, point: &[f64], reason: &str) -> Error {
        Error::Domain {
            node: self.to_string(),
            point: point.to_vec(),
            reason: reason.to_string(),
        }
    }

    /// Symbolic partial derivative with respect to `x{var}`.
    ///
    /// `abs` differentiates to `u/abs(u)` (the sign, undefined at 0), so
    /// derivatives of non-smooth trees stay within the grammar and fail
    /// loudly at the singular set instead of being approximated.
    pub fn derive(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Unary(op, a) => {
                let da = a.derive(var);
                let a = (**a).clone();
                match op {
                    UnaryOp::Neg => Expr::neg(da),
                    UnaryOp::Sin => Expr::mul(Expr::cos(a), da),
                    UnaryOp::Cos => Expr::mul(Expr::neg(Expr::sin(a)), da),
                    UnaryOp::Exp => Expr::mul(Expr::exp(a), da),
                    UnaryOp::Ln => Expr::div(da, a),
                    UnaryOp::Abs => {
                        let sign = Expr::div(a.clone(), Expr::abs(a));
                        Expr::mul(sign, da)
                    }
                    UnaryOp::Sqrt => {
                        Expr::div(da, Expr::mul(Expr::Const(2.0), Expr::sqrt(a)))
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    BinaryOp::Add => Expr::add(a.derive(var), b.derive(var)),
                    BinaryOp::Sub => Expr::sub(a.derive(var), b.derive(var)),
                    BinaryOp::Mul => Expr::add(
                        Expr::mul(a.derive(var), b.clone()),
                        Expr::mul(a, b.derive(var)),
                    ),
                    BinaryOp::Div => {
                        let num = Expr::sub(
                            Expr::mul(a.derive(var), b.clone()),
                            Expr::mul(a, b.derive(var)),
                        );
                        Expr::div(num, Expr::pow(b, Expr::Const(2.0)))
                    }
                    BinaryOp::Pow => {
                        if let Expr::Const(c) = b {
                            if c == 0.0 {
                                return Expr::Const(0.0);
                            }
                            // c * u^(c-1) * u'
                            return Expr::mul(
                                Expr::mul(
                                    Expr::Const(c),
                                    Expr::pow(a.clone(), Expr::Const(c - 1.0)),
                                ),
                                a.derive(var),
                            );
                        }
                        // u^v * (v' ln u + v u'/u)
                        let term = Expr::add(
                            Expr::mul(b.derive(var), Expr::ln(a.clone())),
                            Expr::mul(b.clone(), Expr::div(a.derive(var), a.clone())),
                        );
                        Expr::mul(Expr::pow(a, b), term)
                    }
                }
            }
        }
    }

    pub fn smoothness(&self) -> SmoothnessFlag {
        if self.is_nonsmooth_at_zero() {
            SmoothnessFlag::NonsmoothAtZero
        } else {
            SmoothnessFlag::SymbolicallySmoothAtZero
        }
    }

    fn is_nonsmooth_at_zero(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Unary(op, a) => {
                let arg_nonsmooth = a.is_nonsmooth_at_zero();
                match op {
                    UnaryOp::Abs | UnaryOp::Sqrt | UnaryOp::Ln => {
                        a.depends_on_vars() || arg_nonsmooth
                    }
                    _ => arg_nonsmooth,
                }
            }
            Expr::Binary(op, a, b) => {
                let children = a.is_nonsmooth_at_zero() || b.is_nonsmooth_at_zero();
                match op {
                    BinaryOp::Div => b.depends_on_vars() || children,
                    BinaryOp::Pow => match **b {
                        Expr::Const(c) if c >= 0.0 && c.fract() == 0.0 => children,
                        _ => a.depends_on_vars() || b.depends_on_vars() || children,
                    },
                    _ => children,
                }
            }
        }
    }

    /// `D^alpha self (0)` by repeated symbolic differentiation.
    ///
    /// Refuses trees flagged [`SmoothnessFlag::NonsmoothAtZero`]; the
    /// counterexample functions are meant to be rejected here, not patched.
    pub fn partial_at_zero(&self, alpha: &[usize]) -> Result<f64> {
        if self.smoothness() == SmoothnessFlag::NonsmoothAtZero {
            return Err(Error::NonsmoothInput(self.to_string()));
        }
        let mut d = self.clone();
        for (i, &k) in alpha.iter().enumerate() {
            for _ in 0..k {
                d = d.derive(i + 1);
            }
        }
        d.eval(&vec![0.0; alpha.len().max(self.max_var())])
    }
}

fn pow_value(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

// Printing with minimal parentheses: `+ -` < `* /` < unary minus < `^`.
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 1,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 2,
        Expr::Unary(UnaryOp::Neg, _) => 3,
        // negative literals print with a leading minus and must be fenced
        // exactly like an explicit unary minus
        Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
        Expr::Binary(BinaryOp::Pow, _, _) => 4,
        _ => 5,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, need_parens: bool) -> fmt::Result {
            if need_parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                wrap(f, a, prec(a) < 3)
            }
            Expr::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Ln => "ln",
                    UnaryOp::Abs => "abs",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            Expr::Binary(op, a, b) => {
                let (sym, p) = match op {
                    BinaryOp::Add => (" + ", 1),
                    BinaryOp::Sub => (" - ", 1),
                    BinaryOp::Mul => ("*", 2),
                    BinaryOp::Div => ("/", 2),
                    BinaryOp::Pow => ("^", 4),
                };
                if *op == BinaryOp::Pow {
                    // right-associative and binds tightest
                    wrap(f, a, prec(a) <= 4)?;
                    write!(f, "{sym}")?;
                    wrap(f, b, prec(b) < 3)
                } else {
                    wrap(f, a, prec(a) < p)?;
                    write!(f, "{sym}")?;
                    let strict = matches!(op, BinaryOp::Sub | BinaryOp::Div);
                    wrap(f, b, prec(b) < p || (strict && prec(b) == p))
                }
            }
        }
    }
}
