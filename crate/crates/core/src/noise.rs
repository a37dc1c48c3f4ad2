//! Noise models, empirical covariance with a finite-sample concentration
//! bound, seeded sampling, and the empirical CVaR oracle.
//!
//! # Risk-level convention
//!
//! Every `eps` in this crate is a *risk level* (tail mass): a chance
//! constraint reads `Pr[ok] >= 1 - eps`, and `cvar` / `empirical_cvar` at
//! level `eps` average the worst `eps`-fraction of losses, i.e.
//!
//! ```text
//! CVaR_eps(L) = min_eta  eta + (1 / (eps N)) * sum_i max(0, L_i - eta).
//! ```
//!
//! Formulations that parameterize CVaR by a confidence level `alpha` (with
//! `1/(1-alpha)` in the denominator) correspond to `eps = 1 - alpha` here.
//! One `eps` means the same thing across Gaussian, distributionally robust
//! and CVaR synthesis.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Zero-mean Gaussian noise with known covariance.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    sigma: DMatrix<f64>,
}

impl GaussianModel {
    /// Validates symmetry and positive semidefiniteness (eigenvalues above
    /// `-1e-10` are accepted and clipped to zero when factorizing).
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::dim("covariance", sigma.nrows(), sigma.ncols()));
        }
        let scale = 1.0 + sigma.amax();
        if (&sigma - sigma.transpose()).amax() > 1e-9 * scale {
            return Err(Error::domain("covariance must be symmetric"));
        }
        let min_eig = crate::solver::min_eig_sym(&sigma);
        if min_eig < -1e-10 * scale {
            return Err(Error::NotPsd { min_eig });
        }
        Ok(GaussianModel { sigma })
    }

    pub fn isotropic(n: usize, variance: f64) -> Result<Self> {
        if variance < 0.0 {
            return Err(Error::domain("variance must be nonnegative"));
        }
        Ok(GaussianModel {
            sigma: DMatrix::identity(n, n) * variance,
        })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Factor `L` with `Sigma = L L'`, from the symmetric eigendecomposition
    /// with negative eigenvalues clipped to zero. The factorization order is
    /// fixed, so sampling is reproducible for a given seed.
    pub fn factor(&self) -> DMatrix<f64> {
        let sym = (&self.sigma + self.sigma.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut scaled = eig.eigenvectors.clone();
        for (c, lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            scaled.column_mut(c).scale_mut(s);
        }
        scaled
    }
}

/// Gaussian noise whose covariance is known only through `N` samples:
/// the empirical estimate together with the concentration radius
/// `r_c(beta) = (2 L_b^2 / sqrt(N)) (2 + sqrt(2 log(2/beta)))` bounding
/// `||Sigma_hat - Sigma||` with probability at least `1 - beta`.
#[derive(Clone, Debug)]
pub struct AmbiguousGaussian {
    pub sigma_hat: DMatrix<f64>,
    pub n_samples: usize,
    pub beta: f64,
    /// Support bound `sup ||w||`, supplied by the user (the concentration
    /// bound needs a finite support bound, which a true Gaussian does not
    /// have; this is a truncation parameter, not something we reconcile).
    pub support_bound: f64,
    pub radius: f64,
}

impl AmbiguousGaussian {
    /// Builds the ambiguity model from raw samples (rows of `w`).
    pub fn from_samples(w: &DMatrix<f64>, beta: f64, support_bound: f64) -> Result<Self> {
        let sigma_hat = estimate_covariance(w)?;
        let radius = concentration_radius(w.nrows(), beta, support_bound)?;
        Ok(AmbiguousGaussian {
            sigma_hat,
            n_samples: w.nrows(),
            beta,
            support_bound,
            radius,
        })
    }

    /// Assembles the model from a pre-computed estimate.
    pub fn from_estimate(
        sigma_hat: DMatrix<f64>,
        n_samples: usize,
        beta: f64,
        support_bound: f64,
    ) -> Result<Self> {
        GaussianModel::new(sigma_hat.clone())?;
        let radius = concentration_radius(n_samples, beta, support_bound)?;
        Ok(AmbiguousGaussian {
            sigma_hat,
            n_samples,
            beta,
            support_bound,
            radius,
        })
    }

    /// Whether `N` meets the sample-count requirement of the concentration
    /// bound at this confidence.
    pub fn certified(&self) -> bool {
        self.n_samples >= min_sample_count(self.beta).unwrap_or(usize::MAX)
    }

    /// Worst-case covariance `Sigma_hat + r_c(beta) I`. The scalar radius is
    /// added on the diagonal: it bounds the spectral-norm estimation error,
    /// so `Sigma <= Sigma_hat + r_c I` holds on the ambiguity set.
    pub fn worst_case_covariance(&self) -> DMatrix<f64> {
        let n = self.sigma_hat.nrows();
        &self.sigma_hat + DMatrix::identity(n, n) * self.radius
    }

    pub fn dim(&self) -> usize {
        self.sigma_hat.nrows()
    }
}

/// A bag of i.i.d. noise samples, one per row.
#[derive(Clone, Debug)]
pub struct EmpiricalNoise {
    pub samples: DMatrix<f64>,
}

impl EmpiricalNoise {
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::Empty("empirical noise needs at least one sample"));
        }
        Ok(EmpiricalNoise { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }
}

/// Tagged union of the three noise descriptions used by simulation.
#[derive(Clone, Debug)]
pub enum NoiseModel {
    Gaussian(GaussianModel),
    /// Simulated from the empirical covariance estimate.
    AmbiguousGaussian(AmbiguousGaussian),
    /// Simulated by resampling rows uniformly (bootstrap).
    Empirical(EmpiricalNoise),
}

impl NoiseModel {
    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::Gaussian(m) => m.dim(),
            NoiseModel::AmbiguousGaussian(m) => m.dim(),
            NoiseModel::Empirical(m) => m.dim(),
        }
    }

    /// A per-trajectory sampler owning its pre-factored state.
    pub fn sampler(&self) -> NoiseSampler<'_> {
        match self {
            NoiseModel::Gaussian(m) => NoiseSampler::Factor(m.factor()),
            NoiseModel::AmbiguousGaussian(m) => {
                let gm = GaussianModel {
                    sigma: m.sigma_hat.clone(),
                };
                NoiseSampler::OwnedFactor(gm.factor())
            }
            NoiseModel::Empirical(m) => NoiseSampler::Resample(m),
        }
    }
}

/// Draws one noise vector at a time from a prepared model.
pub enum NoiseSampler<'a> {
    Factor(DMatrix<f64>),
    OwnedFactor(DMatrix<f64>),
    Resample(&'a EmpiricalNoise),
}

impl NoiseSampler<'_> {
    pub fn draw(&self, rng: &mut ChaCha12Rng) -> DVector<f64> {
        match self {
            NoiseSampler::Factor(l) | NoiseSampler::OwnedFactor(l) => {
                let n = l.nrows();
                let z = DVector::from_iterator(n, (0..n).map(|_| standard_normal(rng)));
                l * z
            }
            NoiseSampler::Resample(e) => {
                let i = rand::Rng::random_range(rng, 0..e.len());
                e.row(i)
            }
        }
    }
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Empirical second-moment estimate `(1/N) sum_i w_i w_i'`.
///
/// No mean subtraction: the noise is zero-mean by assumption, so this is
/// the covariance estimator of the concentration bound.
pub fn estimate_covariance(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n_samples = w.nrows();
    if n_samples == 0 {
        return Err(Error::Empty("covariance estimation needs samples"));
    }
    let dim = w.ncols();
    let mut sigma = DMatrix::zeros(dim, dim);
    for i in 0..n_samples {
        let wi = w.row(i).transpose();
        sigma.ger(1.0 / n_samples as f64, &wi, &wi, 1.0);
    }
    Ok(sigma)
}

/// Smallest `N` with `N >= (2 + sqrt(2 log(2/beta)))^2`.
pub fn min_sample_count(beta: f64) -> Result<usize> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!(
            "confidence beta must lie in (0, 1), got {beta}"
        )));
    }
    let bound = (2.0 + (2.0 * (2.0 / beta).ln()).sqrt()).powi(2);
    // grace for bounds that are integers up to rounding (e.g. beta = 2/e^2)
    Ok((bound - 1e-9).ceil() as usize)
}

/// Concentration radius `r_c(beta) = (2 L_b^2 / sqrt(N)) (2 + sqrt(2 log(2/beta)))`.
pub fn concentration_radius(n_samples: usize, beta: f64, support_bound: f64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!(
            "confidence beta must lie in (0, 1), got {beta}"
        )));
    }
    if support_bound <= 0.0 {
        return Err(Error::domain("support bound must be positive"));
    }
    let t = 2.0 + (2.0 * (2.0 / beta).ln()).sqrt();
    Ok(2.0 * support_bound * support_bound / (n_samples as f64).sqrt() * t)
}

/// Draws `count` i.i.d. samples from `N(0, Sigma)`, one per row.
/// Identical `(seed, count, Sigma)` produce identical output.
pub fn sample(model: &GaussianModel, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    let l = model.factor();
    let n = model.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, n);
    for i in 0..count {
        let z = DVector::from_iterator(n, (0..n).map(|_| standard_normal(&mut rng)));
        let x = &l * z;
        out.row_mut(i).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Empirical CVaR at tail mass `eps`:
/// `min_eta eta + (1/(eps N)) sum_i (loss_i - eta)^+`.
///
/// The piecewise-linear objective attains its minimum at one of the loss
/// values, so the minimization is solved exactly by scanning the order
/// statistics.
pub fn empirical_cvar(losses: &[f64], eps: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Empty("cvar needs at least one loss"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain(format!(
            "risk level must lie in (0, 1), got {eps}"
        )));
    }
    let n = losses.len() as f64;
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // objective at eta = sorted[k]: sorted[k] + (1/(eps n)) * sum_{j<k} (sorted[j] - sorted[k])
    let mut best = f64::INFINITY;
    let mut prefix = 0.0;
    for (k, eta) in sorted.iter().enumerate() {
        let value = eta + (prefix - k as f64 * eta) / (eps * n);
        best = best.min(value);
        prefix += eta;
    }
    Ok(best)
}

/// Empirical VaR at tail mass `eps`: the smallest loss value `v` with
/// `#{loss_i <= v} >= (1 - eps) N`.
pub fn empirical_var(losses: &[f64], eps: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Empty("var needs at least one loss"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain(format!(
            "risk level must lie in (0, 1), got {eps}"
        )));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((1.0 - eps) * n as f64).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_two_opposite_samples() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let s = estimate_covariance(&w).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn covariance_degenerate_cases() {
        let zero = DMatrix::zeros(1, 3);
        assert_eq!(
            estimate_covariance(&zero.clone_owned()).unwrap(),
            DMatrix::zeros(3, 3)
        );
        let scalar = DMatrix::from_row_slice(1, 1, &[2.0]);
        assert_eq!(estimate_covariance(&scalar).unwrap()[(0, 0)], 4.0);
        assert!(estimate_covariance(&DMatrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn sample_count_thresholds() {
        assert_eq!(min_sample_count(0.05).unwrap(), 23);
        let beta_exact = 2.0 / (2.0f64).exp(); // log(2/beta) = 2
        assert_eq!(min_sample_count(beta_exact).unwrap(), 16);
        assert_eq!(min_sample_count(0.9999999).unwrap(), 11);
        assert!(min_sample_count(0.0).is_err());
        assert!(min_sample_count(1.0).is_err());
    }

    #[test]
    fn radius_values_and_scaling() {
        let beta_exact = 2.0 / (2.0f64).exp();
        let r = concentration_radius(100, beta_exact, 1.0).unwrap();
        assert_eq!(r, 0.8);
        // quadratic in the support bound
        let r2 = concentration_radius(100, beta_exact, 2.0).unwrap();
        assert!((r2 - 4.0 * r).abs() < 1e-12);
        // 1/sqrt(N)
        let r4 = concentration_radius(400, beta_exact, 1.0).unwrap();
        assert!((r4 - r / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_zero_covariance_and_determinism() {
        let zero = GaussianModel::isotropic(3, 0.0).unwrap();
        let w = sample(&zero, 5, 7).unwrap();
        assert_eq!(w, DMatrix::zeros(5, 3));

        let m = GaussianModel::isotropic(2, 0.5).unwrap();
        let a = sample(&m, 16, 42).unwrap();
        let b = sample(&m, 16, 42).unwrap();
        assert_eq!(a, b);
        let c = sample(&m, 16, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampled_covariance_close_to_truth() {
        let m = GaussianModel::isotropic(4, 0.1).unwrap();
        let w = sample(&m, 100_000, 12345).unwrap();
        let sigma_hat = estimate_covariance(&w).unwrap();
        let diff = &sigma_hat - m.sigma();
        let frob = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(frob <= 0.02, "Frobenius distance {frob}");
    }

    #[test]
    fn cvar_examples() {
        assert!((empirical_cvar(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap() - 3.5).abs() < 1e-12);
        assert!((empirical_cvar(&[5.5, 5.5, 5.5], 0.2).unwrap() - 5.5).abs() < 1e-12);
        assert!((empirical_cvar(&[0.0, 10.0], 0.5).unwrap() - 10.0).abs() < 1e-12);
        assert!(empirical_cvar(&[], 0.5).is_err());
    }

    #[test]
    fn cvar_dominates_var_and_mean() {
        let losses = [0.3, -1.2, 4.0, 2.2, 0.0, -0.7, 1.1];
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        for eps in [0.05, 0.1, 0.3, 0.5, 0.9] {
            let cvar = empirical_cvar(&losses, eps).unwrap();
            let var = empirical_var(&losses, eps).unwrap();
            assert!(cvar >= var - 1e-12, "eps={eps}: cvar {cvar} < var {var}");
            assert!(cvar >= mean - 1e-12, "eps={eps}: cvar {cvar} < mean {mean}");
        }
    }

    #[test]
    fn ambiguity_certification() {
        let w = sample(&GaussianModel::isotropic(2, 0.1).unwrap(), 23, 3).unwrap();
        let amb = AmbiguousGaussian::from_samples(&w, 0.05, 1.0).unwrap();
        assert!(amb.certified());
        let w_small = sample(&GaussianModel::isotropic(2, 0.1).unwrap(), 10, 3).unwrap();
        let amb_small = AmbiguousGaussian::from_samples(&w_small, 0.05, 1.0).unwrap();
        assert!(!amb_small.certified());
        // worst case adds the radius on the diagonal only
        let wc = amb.worst_case_covariance();
        assert!((wc[(0, 0)] - amb.sigma_hat[(0, 0)] - amb.radius).abs() < 1e-12);
        assert!((wc[(0, 1)] - amb.sigma_hat[(0, 1)]).abs() < 1e-12);
    }
}
