//! Closed-form learning-rate exponents.
//!
//! The general exponent is the minimum of five terms in `(r, beta, theta,
//! zeta)`; the quantile exponent follows from it with the
//! `lambda = n^{-4(p+1)/(3(p+2))}` schedule. The single-kernel Gaussian
//! exponents `alpha_ES` are the comparison baseline, with regularization
//! `lambda_n = n^{-beta_ES}`.

use std::fmt;

use crate::error::{Error, Result};

/// Average-type exponent `p in (0, inf]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pavg {
    Finite(f64),
    Infinite,
}

impl Pavg {
    pub fn new(p: f64) -> Result<Self> {
        if p == f64::INFINITY {
            return Ok(Pavg::Infinite);
        }
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::input(format!("p must lie in (0, inf], got {p}")));
        }
        Ok(Pavg::Finite(p))
    }

    fn check(self) -> Result<Self> {
        match self {
            Pavg::Finite(p) => Pavg::new(p),
            Pavg::Infinite => Ok(self),
        }
    }

    /// `p / (p + 1)`, equal to 1 at infinity.
    pub fn ratio(self) -> f64 {
        match self {
            Pavg::Finite(p) => p / (p + 1.0),
            Pavg::Infinite => 1.0,
        }
    }
}

impl fmt::Display for Pavg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pavg::Finite(p) => write!(f, "{p}"),
            Pavg::Infinite => write!(f, "inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub r: f64,
    pub beta: f64,
    pub theta: f64,
    pub zeta: f64,
}

impl RateParams {
    pub fn new(r: f64, beta: f64, theta: f64, zeta: f64) -> Result<Self> {
        let p = RateParams { r, beta, theta, zeta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 0.5) {
            return Err(Error::input(format!("r must lie in (0, 1/2], got {}", self.r)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::input(format!("beta must be positive, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::input(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(self.zeta > 0.0 && self.zeta < 2.0) {
            return Err(Error::input(format!("zeta must lie in (0, 2), got {}", self.zeta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult {
    pub value: f64,
    /// 1-based index of the smallest term.
    pub argmin_term: usize,
    pub terms: [f64; 5],
}

/// The five candidate exponents; the learning rate is their minimum.
pub fn rate_terms(p: &RateParams) -> [f64; 5] {
    let RateParams { r, beta, theta, zeta } = *p;
    let denom = 4.0 - 2.0 * theta + zeta * theta;
    let t1 = r * beta;
    let t2 = 0.5 + beta * (theta * (1.0 + r) / 4.0 - (1.0 - r) / 2.0);
    let t3 = 4.0 / denom - beta;
    let t4 = 2.0 / denom - (1.0 - r) * beta / 2.0;
    let t5 = t4 - (beta * (1.0 + r) * (1.0 - theta / 2.0) - 1.0) / 4.0;
    [t1, t2, t3, t4, t5]
}

pub fn alpha_general(p: &RateParams) -> Result<RateResult> {
    p.validate()?;
    let terms = rate_terms(p);
    let (idx, value) = terms
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    Ok(RateResult {
        value,
        argmin_term: idx + 1,
        terms,
    })
}

/// `2(p+1) / (3(p+2))`, with limit 2/3 at `p = inf`.
pub fn alpha_quantile(p: Pavg) -> Result<f64> {
    Ok(match p.check()? {
        Pavg::Finite(p) => 2.0 * (p + 1.0) / (3.0 * (p + 2.0)),
        Pavg::Infinite => 2.0 / 3.0,
    })
}

/// Regularization exponent `4(p+1) / (3(p+2))` of the quantile schedule.
pub fn beta_quantile(p: Pavg) -> Result<f64> {
    Ok(match p.check()? {
        Pavg::Finite(p) => 4.0 * (p + 1.0) / (3.0 * (p + 2.0)),
        Pavg::Infinite => 4.0 / 3.0,
    })
}

/// `min(2/q, p/(p+1))`.
pub fn theta_from_p(p: Pavg, q: f64) -> Result<f64> {
    if !(q > 1.0) {
        return Err(Error::input(format!("q must exceed 1, got {q}")));
    }
    Ok((2.0 / q).min(p.check()?.ratio()))
}

fn check_es(d: f64, alpha_smooth: f64) -> Result<()> {
    if !(d >= 1.0) {
        return Err(Error::input(format!("dimension must be at least 1, got {d}")));
    }
    if !(alpha_smooth >= 1.0 && alpha_smooth.is_finite()) {
        return Err(Error::input(format!("smoothness must be at least 1, got {alpha_smooth}")));
    }
    Ok(())
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::input(format!("theta must lie in [0, 1], got {theta}")));
    }
    Ok(())
}

/// `(2a + d) / (2a(2 - theta) + d)`. `d` may be `f64::INFINITY` for the
/// large-dimension limit.
pub fn beta_es(d: f64, alpha_smooth: f64, theta: f64) -> Result<f64> {
    check_es(d, alpha_smooth)?;
    check_theta(theta)?;
    if d.is_infinite() {
        return Ok(1.0);
    }
    Ok((2.0 * alpha_smooth + d) / (2.0 * alpha_smooth * (2.0 - theta) + d))
}

/// `2a / (2a + d)`.
pub fn alpha_es(d: f64, alpha_smooth: f64) -> Result<f64> {
    check_es(d, alpha_smooth)?;
    if d.is_infinite() {
        return Ok(0.0);
    }
    Ok(2.0 * alpha_smooth / (2.0 * alpha_smooth + d))
}

/// `2a / (2a(2 - theta) + d)`.
pub fn alpha_es_theta(d: f64, alpha_smooth: f64, theta: f64) -> Result<f64> {
    check_es(d, alpha_smooth)?;
    check_theta(theta)?;
    if d.is_infinite() {
        return Ok(0.0);
    }
    Ok(2.0 * alpha_smooth / (2.0 * alpha_smooth * (2.0 - theta) + d))
}

/// Exponent for clipped estimators under an eigenvalue decay
/// `lambda_i <= a i^{-1/xi}`:
/// `min{(p+1) r / ((p+2) r + (p+1-r) xi), 2r/(r+1)}`.
pub fn alpha_sc2(p: Pavg, r: f64, xi: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::input(format!("r must lie in (0, 1], got {r}")));
    }
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::input(format!("xi must lie in (0, 1), got {xi}")));
    }
    let first = match p.check()? {
        Pavg::Finite(p) => (p + 1.0) * r / ((p + 2.0) * r + (p + 1.0 - r) * xi),
        // divide through by p and let p -> inf
        Pavg::Infinite => r / (r + xi),
    };
    Ok(first.min(2.0 * r / (r + 1.0)))
}

/// Large-dimension limit entry: a number, or a qualitative sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LimitValue {
    Positive,
    Zero,
    Value(f64),
}

impl fmt::Display for LimitValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LimitValue::Positive => write!(f, "positive"),
            LimitValue::Zero => write!(f, "0"),
            LimitValue::Value(v) => write!(f, "{v:.3}"),
        }
    }
}

/// One row of the large-dimension comparison table, evaluated at a
/// particular `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub theta: String,
    pub zeta: String,
    pub r: f64,
    /// Limit of the single-kernel exponent, always 0.
    pub single_kernel: f64,
    pub additive: LimitValue,
    /// Closed-form expression the additive limit should equal, if any.
    pub expected: Option<f64>,
}

pub const TABLE1_R_GRID: [f64; 3] = [0.1, 0.25, 0.5];
/// Stand-in for `zeta -> 2`.
pub const ZETA_NEAR_TWO: f64 = 2.0 - 1e-9;

/// Large-`d` limits with `beta_ES -> 1`, evaluated on [`TABLE1_R_GRID`].
///
/// The qualitative "positive" row is checked on a grid of `theta in (0,1]`
/// and `zeta in (0,2)` and reported as positive only if every grid value is.
pub fn table1() -> Result<Vec<Table1Row>> {
    let mut rows = Vec::new();
    for &r in &TABLE1_R_GRID {
        let general = |theta: f64, zeta: f64| -> Result<f64> {
            Ok(alpha_general(&RateParams::new(r, 1.0, theta, zeta)?)?.value)
        };

        let mut all_positive = true;
        for i in 1..=10 {
            for j in 1..=19 {
                let theta = i as f64 / 10.0;
                let zeta = j as f64 / 10.0;
                if general(theta, zeta)? <= 0.0 {
                    all_positive = false;
                }
            }
        }
        rows.push(Table1Row {
            theta: ">0".into(),
            zeta: "fixed".into(),
            r,
            single_kernel: 0.0,
            additive: if all_positive { LimitValue::Positive } else { LimitValue::Zero },
            expected: None,
        });
        for (theta, zeta, tl, zl, expected) in [
            (1.0, 1.0, "1", "1", r.min(1.0 / 3.0)),
            (1.0, 1.5, "1", "3/2", r.min(1.0 / 7.0)),
            (0.5, 1.0, "1/2", "1", r.min(1.0 / 7.0)),
        ] {
            rows.push(Table1Row {
                theta: tl.into(),
                zeta: zl.into(),
                r,
                single_kernel: 0.0,
                additive: LimitValue::Value(general(theta, zeta)?),
                expected: Some(expected),
            });
        }
        // theta = 0 kills term three for every zeta
        rows.push(Table1Row {
            theta: "0".into(),
            zeta: "fixed".into(),
            r,
            single_kernel: 0.0,
            additive: LimitValue::Value(general(0.0, 1.0)?),
            expected: Some(0.0),
        });
        rows.push(Table1Row {
            theta: "1".into(),
            zeta: "->2".into(),
            r,
            single_kernel: 0.0,
            additive: LimitValue::Value(general(1.0, ZETA_NEAR_TWO)?),
            expected: Some(0.0),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table2Row {
    pub r: f64,
    pub theta: f64,
    pub zeta: f64,
    pub alpha: f64,
}

pub const TABLE2_R: [f64; 3] = [0.5, 0.25, 0.1];
pub const TABLE2_THETA: [f64; 3] = [1.0, 0.5, 0.1];
pub const TABLE2_ZETA: [f64; 3] = [0.1, 1.0, 1.9];

/// The 27 large-dimension limits on the `r x theta x zeta` grid (beta = 1).
pub fn table2() -> Result<Vec<Table2Row>> {
    let mut rows = Vec::with_capacity(27);
    for &r in &TABLE2_R {
        for &theta in &TABLE2_THETA {
            for &zeta in &TABLE2_ZETA {
                let alpha = alpha_general(&RateParams::new(r, 1.0, theta, zeta)?)?.value;
                rows.push(Table2Row { r, theta, zeta, alpha });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub d: usize,
    /// Additive exponent with `beta = beta_ES(d)`.
    pub ours: f64,
    /// Single Gaussian kernel exponent `alpha_ES(d)`.
    pub theirs: f64,
}

pub fn figure_curve(r: f64, theta: f64, zeta: f64, alpha_smooth: f64, d_max: usize) -> Result<Vec<CurvePoint>> {
    if d_max == 0 {
        return Err(Error::input("d_max must be at least 1"));
    }
    (1..=d_max)
        .map(|d| {
            let df = d as f64;
            let beta = beta_es(df, alpha_smooth, theta)?;
            let ours = alpha_general(&RateParams::new(r, beta, theta, zeta)?)?.value;
            Ok(CurvePoint {
                d,
                ours,
                theirs: alpha_es(df, alpha_smooth)?,
            })
        })
        .collect()
}

/// Rounds to the three decimals used in published tables.
pub fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn general(r: f64, b: f64, t: f64, z: f64) -> RateResult {
        alpha_general(&RateParams::new(r, b, t, z).unwrap()).unwrap()
    }

    #[test]
    fn general_examples() {
        let a = general(0.5, 1.0, 1.0, 1.0);
        assert!((a.value - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.argmin_term, 3);
        assert!((general(0.5, 1.0, 1.0, 1.9).value - 0.025_641_025_641).abs() < 1e-10);
        assert!((general(0.25, 1.0, 0.5, 1.0).value - (4.0 / 3.5 - 1.0)).abs() < 1e-15);
        assert!((general(0.1, 1.0, 0.1, 0.1).value - (4.0 / 3.81 - 1.0)).abs() < 1e-15);
        assert_eq!(round3(general(0.1, 1.0, 0.1, 0.1).value), 0.05);
        assert!(RateParams::new(0.6, 1.0, 1.0, 1.0).is_err());
        assert!(RateParams::new(0.5, 1.0, 1.0, 2.0).is_err());
        assert!(RateParams::new(0.5, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn result_is_consistent_min() {
        for &r in &[0.05, 0.2, 0.5] {
            for &t in &[0.0, 0.3, 1.0] {
                for &z in &[0.01, 1.0, 1.99] {
                    for &b in &[0.5, 1.0, 1.5] {
                        let res = general(r, b, t, z);
                        assert_eq!(res.value, res.terms[res.argmin_term - 1]);
                        assert!(res.terms.iter().all(|&v| v >= res.value));
                    }
                }
            }
        }
    }

    #[test]
    fn quantile_exponents() {
        assert_eq!(alpha_quantile(Pavg::Finite(2.0)).unwrap(), 0.5);
        assert_eq!(alpha_quantile(Pavg::Infinite).unwrap(), 2.0 / 3.0);
        assert!((alpha_quantile(Pavg::Finite(1e-12)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(beta_quantile(Pavg::Infinite).unwrap(), 4.0 / 3.0);
        assert_eq!(beta_quantile(Pavg::Finite(2.0)).unwrap(), 1.0);
        for p in [0.3, 1.0, 7.0, 1e6] {
            let p = Pavg::Finite(p);
            assert!((beta_quantile(p).unwrap() - 2.0 * alpha_quantile(p).unwrap()).abs() < 1e-15);
        }
        assert!(alpha_quantile(Pavg::Finite(0.0)).is_err());
        assert!(Pavg::new(-1.0).is_err());
        assert_eq!(Pavg::new(f64::INFINITY).unwrap(), Pavg::Infinite);
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta_from_p(Pavg::Infinite, 2.0).unwrap(), 1.0);
        assert!((theta_from_p(Pavg::Finite(2.0), 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(theta_from_p(Pavg::Infinite, 4.0).unwrap(), 0.5);
        assert!(theta_from_p(Pavg::Infinite, 1.0).is_err());
    }

    #[test]
    fn es_exponents() {
        for d in [1.0, 3.0, 50.0] {
            assert_eq!(beta_es(d, 2.0, 1.0).unwrap(), 1.0);
        }
        assert!((beta_es(1e12, 1.0, 0.3).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(beta_es(f64::INFINITY, 1.0, 0.3).unwrap(), 1.0);
        assert_eq!(beta_es(1.0, 1.0, 0.5).unwrap(), 0.75);
        assert_eq!(alpha_es(2.0, 1.0).unwrap(), 0.5);
        assert!(alpha_es(1e12, 5.0).unwrap() < 1e-10);
        assert_eq!(alpha_es(f64::INFINITY, 5.0).unwrap(), 0.0);
        for d in [1.0, 4.0, 17.0] {
            assert_eq!(alpha_es_theta(d, 3.0, 1.0).unwrap(), alpha_es(d, 3.0).unwrap());
        }
        assert!(alpha_es(0.5, 1.0).is_err());
        assert!(alpha_es(2.0, 0.5).is_err());
    }

    #[test]
    fn sc2_examples() {
        assert!((alpha_sc2(Pavg::Infinite, 0.5, 1e-12).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert!((alpha_sc2(Pavg::Finite(2.0), 0.5, 1e-12).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        // at r = 1 the second branch is 1, which the first never exceeds
        for p in [0.5, 2.0, 50.0] {
            for xi in [0.01, 0.3, 0.9] {
                let first = (p + 1.0) / ((p + 2.0) + p * xi);
                let v = alpha_sc2(Pavg::Finite(p), 1.0, xi).unwrap();
                assert!(first < 1.0);
                assert_eq!(v, first);
            }
        }
        assert!(alpha_sc2(Pavg::Infinite, 0.0, 0.5).is_err());
        assert!(alpha_sc2(Pavg::Infinite, 0.5, 1.0).is_err());
    }

    #[test]
    fn zeta_monotonicity() {
        for &r in &[0.1, 0.3, 0.5] {
            for &t in &[0.1, 0.5, 1.0] {
                for &b in &[0.5, 1.0, 4.0 / 3.0] {
                    let mut prev = f64::INFINITY;
                    for j in 1..200 {
                        let v = general(r, b, t, j as f64 * 0.01).value;
                        assert!(v <= prev + 1e-15);
                        prev = v;
                    }
                }
            }
        }
    }

    #[test]
    fn curve_examples() {
        let c = figure_curve(0.5, 0.5, 1.0, 1.0, 2000).unwrap();
        assert!((c[0].ours - 0.375).abs() < 1e-15);
        assert!((c[0].theirs - 2.0 / 3.0).abs() < 1e-15);
        let last = c.last().unwrap();
        assert!((last.ours - 1.0 / 7.0).abs() < 1e-3);
        assert!(last.theirs < 1e-3);
        let crossing = c.iter().find(|p| p.ours > p.theirs).map(|p| p.d);
        assert!(crossing.is_some());
        assert!(figure_curve(0.5, 0.5, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn es_theta_falls_below_quantile_rate() {
        for p in [1.0, 2.0, 10.0] {
            let theta = p / (p + 1.0);
            let target = alpha_quantile(Pavg::Finite(p)).unwrap();
            // threshold: 2a/(2a(2-theta)+d) < target  <=>  d > 2a/target - 2a(2-theta)
            let a = 1.0;
            let threshold = 2.0 * a / target - 2.0 * a * (2.0 - theta);
            let d0 = threshold.floor().max(0.0) as usize + 1;
            for d in d0..d0 + 50 {
                assert!(alpha_es_theta(d as f64, a, theta).unwrap() < target);
            }
        }
    }
}
