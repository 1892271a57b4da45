//! Pinball loss, its shifted form `L*(y, t) = L(y, t) - L(y, 0)`, clipping,
//! and (weighted) empirical risks.

use crate::data::DataSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinballLoss {
    tau: f64,
}

impl PinballLoss {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::input(format!("quantile level must lie in (0, 1), got {tau}")));
        }
        Ok(PinballLoss { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `|L|_1 = max(tau, 1 - tau)`.
    pub fn lipschitz(&self) -> f64 {
        self.tau.max(1.0 - self.tau)
    }

    /// The tie `t == y` falls in the `-tau (t - y)` branch.
    #[inline]
    pub fn loss(&self, y: f64, t: f64) -> f64 {
        let r = t - y;
        if r > 0.0 {
            (1.0 - self.tau) * r
        } else {
            -self.tau * r
        }
    }

    #[inline]
    pub fn shifted(&self, y: f64, t: f64) -> f64 {
        self.loss(y, t) - self.loss(y, 0.0)
    }

    /// Dual interval `[-tau, 1 - tau]` of the max representation
    /// `L(y, t) = max_u u (t - y)`.
    pub fn dual_box(&self) -> (f64, f64) {
        (-self.tau, 1.0 - self.tau)
    }
}

pub fn pinball(tau: f64, y: f64, t: f64) -> Result<f64> {
    Ok(PinballLoss::new(tau)?.loss(y, t))
}

pub fn shifted(tau: f64, y: f64, t: f64) -> Result<f64> {
    Ok(PinballLoss::new(tau)?.shifted(y, t))
}

/// Projection of `t` onto `[-bound, bound]`.
#[inline]
pub fn clip(bound: f64, t: f64) -> f64 {
    t.clamp(-bound, bound)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskValue {
    pub value: f64,
    pub total_weight: f64,
}

/// Weighted mean of per-point (shifted) pinball losses.
pub fn empirical_risk(
    tau: f64,
    predictions: &[f64],
    data: &DataSet,
    use_shifted: bool,
) -> Result<RiskValue> {
    let loss = PinballLoss::new(tau)?;
    if data.is_empty() {
        return Err(Error::input("risk of an empty sample"));
    }
    if predictions.len() != data.len() {
        return Err(Error::input(format!(
            "{} predictions for {} samples",
            predictions.len(),
            data.len()
        )));
    }
    let mut value = 0.0;
    let mut total_weight = 0.0;
    for (i, (&y, &t)) in data.responses().iter().zip(predictions).enumerate() {
        let w = data.weight(i);
        let l = if use_shifted { loss.shifted(y, t) } else { loss.loss(y, t) };
        value += w * l;
        total_weight += w;
    }
    if !value.is_finite() {
        return Err(Error::numeric("non-finite empirical risk"));
    }
    Ok(RiskValue {
        value: value / total_weight,
        total_weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Points;
    use proptest::prelude::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(0.5, 1.0, 3.0).unwrap(), 1.0);
        assert_eq!(pinball(0.3, 2.5, 2.5).unwrap(), 0.0);
        assert!((pinball(0.9, 0.0, -1.0).unwrap() - 0.9).abs() < 1e-15);
        assert!(pinball(0.0, 0.0, 1.0).is_err());
        assert!(pinball(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn shifted_examples() {
        assert_eq!(shifted(0.2, 4.0, 0.0).unwrap(), 0.0);
        assert_eq!(shifted(0.5, 1.0, 3.0).unwrap(), 0.5);
        assert!(shifted(1.5, 1.0, 3.0).is_err());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(1.0, 0.5), 0.5);
        assert_eq!(clip(1.0, 7.0), 1.0);
        assert_eq!(clip(1.0, -7.0), -1.0);
    }

    #[test]
    fn empirical_risk_examples() {
        let x = Points::from_scalars(&[0.0, 1.0]).unwrap();
        let data = DataSet::new(x, vec![0.0, 2.0], None).unwrap();
        let r = empirical_risk(0.5, &[1.0, 1.0], &data, false).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(empirical_risk(0.5, &[0.0, 2.0], &data, false).unwrap().value, 0.0);
        assert_eq!(empirical_risk(0.7, &[0.0, 0.0], &data, true).unwrap().value, 0.0);
        assert!(empirical_risk(0.5, &[0.0], &data, false).is_err());
    }

    #[test]
    fn sample_minimiser_is_a_quantile() {
        let ys = [3.0, -1.0, 0.5, 2.0, 7.0, 0.0, 1.0];
        let m = ys.len() as f64;
        for &tau in &[0.1, 0.25, 0.5, 0.8, 0.95] {
            let loss = PinballLoss::new(tau).unwrap();
            // a minimiser of a piecewise-linear convex sum sits at a sample point
            let risk = |t: f64| ys.iter().map(|&y| loss.loss(y, t)).sum::<f64>();
            let best = ys.iter().copied().fold(f64::INFINITY, |a, t| a.min(risk(t)));
            for &t in ys.iter().filter(|&&t| risk(t) <= best + 1e-12) {
                let below = ys.iter().filter(|&&y| y <= t).count() as f64;
                let above = ys.iter().filter(|&&y| y >= t).count() as f64;
                assert!(below >= tau * m - 1e-12);
                assert!(above >= (1.0 - tau) * m - 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn convex_in_prediction(tau in 0.01f64..0.99, y in -5.0f64..5.0, t1 in -5.0f64..5.0,
                                t2 in -5.0f64..5.0, a in 0.0f64..1.0) {
            let l = PinballLoss::new(tau).unwrap();
            prop_assert!(l.loss(y, a * t1 + (1.0 - a) * t2)
                <= a * l.loss(y, t1) + (1.0 - a) * l.loss(y, t2) + 1e-12);
        }

        #[test]
        fn max_representation(tau in 0.01f64..0.99, y in -5.0f64..5.0, t in -5.0f64..5.0) {
            let l = PinballLoss::new(tau).unwrap();
            let (lo, hi) = l.dual_box();
            let m = (lo * (t - y)).max(hi * (t - y));
            prop_assert!((l.loss(y, t) - m).abs() <= 1e-12);
        }

        #[test]
        fn shifted_is_lipschitz(tau in 0.01f64..0.99, y in -5.0f64..5.0, t in -5.0f64..5.0, tp in -5.0f64..5.0) {
            let l = PinballLoss::new(tau).unwrap();
            prop_assert!((l.shifted(y, t) - l.shifted(y, tp)).abs() <= l.lipschitz() * (t - tp).abs() + 1e-12);
        }

        #[test]
        fn shift_identity(tau in 0.01f64..0.99, ys in proptest::collection::vec(-3.0f64..3.0, 1..8),
                          seed in 0u64..1000) {
            let n = ys.len();
            let x = Points::from_scalars(&vec![0.0; n]).unwrap();
            let data = DataSet::new(x, ys.clone(), None).unwrap();
            let preds: Vec<f64> = (0..n).map(|i| ((seed as f64) * 0.37 + i as f64).sin()).collect();
            let s = empirical_risk(tau, &preds, &data, true).unwrap().value;
            let u = empirical_risk(tau, &preds, &data, false).unwrap().value;
            let z = empirical_risk(tau, &vec![0.0; n], &data, false).unwrap().value;
            prop_assert!((s - (u - z)).abs() <= 1e-12);
        }
    }
}
