//! Test functions of polynomial growth used in pairings `<X_t, f>`.
//!
//! A function carries its growth exponent `p` and a bound constant `c`
//! with `|f(n)| <= c n^p`; the bound is checked on an explicit prefix at
//! construction and the tail is given by the registered closed form.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Form {
    /// Constant one.
    One,
    /// `n^p`.
    Monomial { p: f64 },
    /// Indicator of a single size `m`.
    Indicator { m: u32 },
    /// `n^p` restricted to sizes strictly above `k`, zero otherwise.
    MonomialAbove { p: f64, k: u32 },
}

/// A test function on sizes with registered polynomial growth.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    form: Form,
    explicit: Vec<f64>,
    p: f64,
    bound_const: f64,
}

impl TestFunction {
    const EXPLICIT_LEN: u32 = 64;

    fn build(form: Form, p: f64, bound_const: f64) -> Result<Self> {
        if p <= 0.0 && !matches!(form, Form::One | Form::Indicator { .. }) {
            return Err(Error::InvalidArgument("growth exponent must be positive".into()));
        }
        let f = Self { form, explicit: Vec::new(), p: p.max(f64::MIN_POSITIVE), bound_const };
        let explicit: Vec<f64> = (1..=Self::EXPLICIT_LEN).map(|n| f.eval_form(n)).collect();
        for (i, &v) in explicit.iter().enumerate() {
            let n = (i + 1) as f64;
            if v.abs() > bound_const * n.powf(f.p) + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "|f({})| = {v} exceeds the registered bound {}",
                    i + 1,
                    bound_const * n.powf(f.p)
                )));
            }
        }
        Ok(Self { explicit, ..f })
    }

    /// The constant function `1`.
    pub fn one() -> Self {
        Self::build(Form::One, 1.0, 1.0).expect("constant is bounded")
    }

    /// The monomial `n^p` (`p = 1` gives the identity `[x]`).
    pub fn monomial(p: f64) -> Result<Self> {
        Self::build(Form::Monomial { p }, p, 1.0)
    }

    /// The identity `[x]`.
    pub fn identity() -> Self {
        Self::monomial(1.0).expect("identity is admissible")
    }

    /// Indicator of the size `m`.
    pub fn indicator(m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("sizes start at 1".into()));
        }
        Self::build(Form::Indicator { m }, 1.0, 1.0)
    }

    /// `n^p` above the threshold `k`: the truncated monomial used by the
    /// growth-only window bounds.
    pub fn monomial_above(p: f64, k: u32) -> Result<Self> {
        Self::build(Form::MonomialAbove { p, k }, p, 1.0)
    }

    fn eval_form(&self, n: u32) -> f64 {
        match self.form {
            Form::One => 1.0,
            Form::Monomial { p } => (n as f64).powf(p),
            Form::Indicator { m } => {
                if n == m {
                    1.0
                } else {
                    0.0
                }
            }
            Form::MonomialAbove { p, k } => {
                if n > k {
                    (n as f64).powf(p)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(&self, n: u32) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match self.explicit.get((n - 1) as usize) {
            Some(&v) => v,
            None => self.eval_form(n),
        }
    }

    /// Registered growth exponent.
    pub fn growth_exponent(&self) -> f64 {
        self.p
    }

    /// Constant `c` with `|f(n)| <= c n^p`.
    pub fn bound_const(&self) -> f64 {
        self.bound_const
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_forms_evaluate() {
        assert_eq!(TestFunction::one().eval(17), 1.0);
        assert_eq!(TestFunction::identity().eval(17), 17.0);
        let sq = TestFunction::monomial(2.0).unwrap();
        assert_eq!(sq.eval(5), 25.0);
        let ind = TestFunction::indicator(3).unwrap();
        assert_eq!(ind.eval(3), 1.0);
        assert_eq!(ind.eval(4), 0.0);
        let above = TestFunction::monomial_above(1.0, 2).unwrap();
        assert_eq!(above.eval(2), 0.0);
        assert_eq!(above.eval(3), 3.0);
    }

    #[test]
    fn explicit_prefix_matches_tail_form() {
        let sq = TestFunction::monomial(1.5).unwrap();
        assert_eq!(sq.eval(64), 64f64.powf(1.5));
        assert_eq!(sq.eval(65), 65f64.powf(1.5));
    }
}
