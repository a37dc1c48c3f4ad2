//! Risk allocation across constraint rows and the margin vectors that turn
//! joint chance constraints into deterministic row tightenings.
//!
//! A joint constraint `Pr[F x + F w <= g] >= 1 - eps` splits into per-row
//! constraints at risks `eps_i` with `sum_i eps_i <= eps`; each row is then
//! tightened by
//!
//! ```text
//! l_i = k_i * sqrt(F_i Sigma F_i'),   k_i = sqrt((1 - eps_i) / eps_i).
//! ```
//!
//! With an ambiguous covariance, `Sigma` is replaced by the worst case
//! `Sigma_hat + r_c(beta) I` and the margin is written `l_hat`. The split is
//! sufficient, not exact: the multiplier `k_i` is distribution-free, so
//! the realized violation probability is typically far below `eps_i`.

use nalgebra::DMatrix;

use crate::noise::AmbiguousGaussian;
use crate::{Error, Result};

/// Per-row risk levels `eps_i` with `sum eps_i <= eps`.
#[derive(Clone, Debug)]
pub struct RiskAllocation {
    total: f64,
    per_row: Vec<f64>,
}

impl RiskAllocation {
    pub fn new(total: f64, per_row: Vec<f64>) -> Result<Self> {
        if !(total > 0.0 && total < 1.0) {
            return Err(Error::domain(format!(
                "total risk must lie in (0, 1), got {total}"
            )));
        }
        if per_row.is_empty() {
            return Err(Error::Empty("risk allocation"));
        }
        if per_row.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::domain("every per-row risk must lie in (0, 1)"));
        }
        let sum: f64 = per_row.iter().sum();
        if sum > total + 1e-12 {
            return Err(Error::domain(format!(
                "per-row risks sum to {sum}, exceeding the total {total}"
            )));
        }
        Ok(RiskAllocation { total, per_row })
    }

    /// Uniform split `eps_i = eps / q`.
    pub fn uniform(total: f64, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::Empty("risk allocation"));
        }
        if !(total > 0.0 && total < 1.0) {
            return Err(Error::domain(format!(
                "total risk must lie in (0, 1), got {total}"
            )));
        }
        Ok(RiskAllocation {
            total,
            per_row: vec![total / q as f64; q],
        })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn per_row(&self) -> &[f64] {
        &self.per_row
    }

    pub fn num_rows(&self) -> usize {
        self.per_row.len()
    }
}

/// Which multiplier turns a per-row risk into a tightening constant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QuantileRule {
    /// Distribution-free `k = sqrt((1 - eps)/eps)`, valid for any zero-mean
    /// distribution with the given covariance.
    #[default]
    DistributionFree,
    /// Exact Gaussian quantile `k = Phi^{-1}(1 - eps)`; tighter, but valid
    /// only when the noise really is Gaussian.
    Gaussian,
}

impl QuantileRule {
    pub fn multiplier(self, eps_i: f64) -> f64 {
        match self {
            QuantileRule::DistributionFree => ((1.0 - eps_i) / eps_i).sqrt(),
            QuantileRule::Gaussian => normal_quantile(1.0 - eps_i),
        }
    }
}

/// Whether a margin vector came from a known or a worst-case covariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarginMode {
    KnownCov,
    AmbiguousCov,
}

/// The per-row tightening vector `l` (or `l_hat`), entrywise nonnegative.
#[derive(Clone, Debug)]
pub struct MarginVector {
    pub values: Vec<f64>,
    pub mode: MarginMode,
}

impl MarginVector {
    pub fn zero(q: usize) -> Self {
        MarginVector {
            values: vec![0.0; q],
            mode: MarginMode::KnownCov,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Margins for a known covariance: `l_i = k_i sqrt(F_i Sigma F_i')`.
pub fn margin_known(
    f: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    alloc: &RiskAllocation,
    rule: QuantileRule,
) -> Result<MarginVector> {
    if sigma.nrows() != f.ncols() || sigma.ncols() != f.ncols() {
        return Err(Error::dim("margin covariance", f.ncols(), sigma.nrows()));
    }
    if alloc.num_rows() != f.nrows() {
        return Err(Error::dim("margin allocation", f.nrows(), alloc.num_rows()));
    }
    let values = (0..f.nrows())
        .map(|i| {
            let fi = f.row(i);
            // guard: the quadratic form of a PSD matrix can only go
            // negative through rounding
            let variance = (fi * sigma * fi.transpose())[(0, 0)].max(0.0);
            rule.multiplier(alloc.per_row()[i]) * variance.sqrt()
        })
        .collect();
    Ok(MarginVector {
        values,
        mode: MarginMode::KnownCov,
    })
}

/// Margins for an ambiguous covariance:
/// `l_hat_i = k_i sqrt(F_i (Sigma_hat + r_c(beta) I) F_i')`.
pub fn margin_ambiguous(
    f: &DMatrix<f64>,
    amb: &AmbiguousGaussian,
    alloc: &RiskAllocation,
    rule: QuantileRule,
) -> Result<MarginVector> {
    let worst = amb.worst_case_covariance();
    let mut m = margin_known(f, &worst, alloc, rule)?;
    m.mode = MarginMode::AmbiguousCov;
    Ok(m)
}

/// Accumulated risk over `t` steps of a per-step risk:
/// `1 - (1 - eps_step)^t`.
pub fn horizon_risk(eps_step: f64, t: u32) -> Result<f64> {
    if !(eps_step > 0.0 && eps_step < 1.0) {
        return Err(Error::domain(format!(
            "per-step risk must lie in (0, 1), got {eps_step}"
        )));
    }
    Ok(1.0 - (1.0 - eps_step).powi(t as i32))
}

/// Standard normal quantile `Phi^{-1}(p)` (Acklam's rational approximation,
/// relative error below 1.2e-9 — ample for an opt-in tightening constant).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must lie in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn uniform_split() {
        let a = RiskAllocation::uniform(0.1, 2).unwrap();
        assert_eq!(a.per_row(), &[0.05, 0.05]);
        let b = RiskAllocation::uniform(0.1, 1).unwrap();
        assert_eq!(b.per_row(), &[0.1]);
        let c = RiskAllocation::uniform(0.3, 3).unwrap();
        assert!((c.per_row().iter().sum::<f64>() - 0.3).abs() < 1e-15);
        assert!(RiskAllocation::uniform(0.0, 2).is_err());
        assert!(RiskAllocation::uniform(1.0, 2).is_err());
        assert!(RiskAllocation::new(0.1, vec![0.2]).is_err());
    }

    #[test]
    fn known_margin_values() {
        let f = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let sigma = DMatrix::identity(2, 2) * 0.01;
        let alloc = RiskAllocation::new(0.1, vec![0.1]).unwrap();
        let l = margin_known(&f, &sigma, &alloc, QuantileRule::DistributionFree).unwrap();
        assert!((l.values[0] - 0.3).abs() < 1e-12);

        let zero = margin_known(
            &f,
            &DMatrix::zeros(2, 2),
            &alloc,
            QuantileRule::DistributionFree,
        )
        .unwrap();
        assert_eq!(zero.values[0], 0.0);

        let half = RiskAllocation::new(0.5, vec![0.5]).unwrap();
        let l_half = margin_known(&f, &sigma, &half, QuantileRule::DistributionFree).unwrap();
        assert!((l_half.values[0] - 0.1).abs() < 1e-12, "k = 1 at eps = 0.5");
    }

    #[test]
    fn ambiguous_margin_values() {
        use crate::noise::AmbiguousGaussian;
        let f = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let alloc = RiskAllocation::new(0.1, vec![0.1]).unwrap();
        // choose (N, beta, L_b) so the radius is exactly 0.03
        let sigma_hat = DMatrix::identity(2, 2) * 0.01;
        let mut amb = AmbiguousGaussian::from_estimate(sigma_hat.clone(), 100, 0.1, 1.0).unwrap();
        amb.radius = 0.03;
        let l = margin_ambiguous(&f, &amb, &alloc, QuantileRule::DistributionFree).unwrap();
        assert!((l.values[0] - 0.6).abs() < 1e-12);
        assert_eq!(l.mode, MarginMode::AmbiguousCov);

        // zero radius reduces to the known-covariance margin
        amb.radius = 0.0;
        let l0 = margin_ambiguous(&f, &amb, &alloc, QuantileRule::DistributionFree).unwrap();
        let lk = margin_known(&f, &sigma_hat, &alloc, QuantileRule::DistributionFree).unwrap();
        assert!((l0.values[0] - lk.values[0]).abs() < 1e-15);

        // growing radius strictly grows margins of nonzero rows
        amb.radius = 0.05;
        let l2 = margin_ambiguous(&f, &amb, &alloc, QuantileRule::DistributionFree).unwrap();
        assert!(l2.values[0] > l.values[0]);
    }

    #[test]
    fn margins_monotone_in_risk_and_covariance() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 1.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.03]);
        let tight = RiskAllocation::uniform(0.05, 2).unwrap();
        let loose = RiskAllocation::uniform(0.4, 2).unwrap();
        let lt = margin_known(&f, &sigma, &tight, QuantileRule::DistributionFree).unwrap();
        let ll = margin_known(&f, &sigma, &loose, QuantileRule::DistributionFree).unwrap();
        for i in 0..2 {
            assert!(lt.values[i] > ll.values[i], "smaller risk, larger margin");
            assert!(lt.values[i] >= 0.0 && ll.values[i] >= 0.0);
        }
        let bigger = &sigma * 4.0;
        let lb = margin_known(&f, &bigger, &tight, QuantileRule::DistributionFree).unwrap();
        for i in 0..2 {
            assert!(
                lb.values[i] > lt.values[i],
                "PSD-larger covariance, larger margin"
            );
        }
    }

    #[test]
    fn horizon_risk_values() {
        assert_eq!(horizon_risk(0.3, 0).unwrap(), 0.0);
        assert!((horizon_risk(0.3, 1).unwrap() - 0.3).abs() < 1e-15);
        assert!((horizon_risk(0.01, 50).unwrap() - 0.3949939329).abs() < 1e-9);
        assert!(horizon_risk(0.0, 5).is_err());
    }

    #[test]
    fn gaussian_quantile_sane() {
        assert!((normal_quantile(0.5)).abs() < 1e-9);
        assert!((normal_quantile(0.9) - 1.2815515655446004).abs() < 1e-7);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-7);
        // tighter than the distribution-free constant at every usual risk
        for eps in [0.01, 0.05, 0.1, 0.2] {
            assert!(
                QuantileRule::Gaussian.multiplier(eps)
                    < QuantileRule::DistributionFree.multiplier(eps)
            );
        }
    }
}
