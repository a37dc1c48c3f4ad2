//! Upper bounds on the minimal achievable risk level.
//!
//! For a stabilizing gain the closed-loop state settles into a stationary
//! distribution whose covariance solves a discrete Lyapunov equation. Any
//! `Sigma_ss` dominating that fixed point upper-bounds the stationary
//! per-row violation probability through a Chebyshev-style inequality, so
//! minimizing the worst row bound over all `(K, Sigma_ss)` jointly yields
//! the smallest certifiable risk. The change of variables `V = K Sigma_ss`
//! and a Schur complement turn the search into one LMI:
//!
//! ```text
//! [ Sigma_ss - W      A Sigma_ss + B V ]
//! [ (A Sigma_ss + B V)'      Sigma_ss  ]  >= 0,
//! (q / (6 lambda^2 g_i^2)) F_i Sigma_ss F_i' <= eps   for every row.
//! ```
//!
//! `W` is the worst-case noise covariance (the true one when known, the
//! empirical estimate inflated by the concentration radius otherwise). The
//! data-based variant replaces `A Sigma_ss + B V` with `(X1 - W0) V` under
//! the alignment constraint `X0 V = Sigma_ss`, recovering
//! `K = U0 V Sigma_ss^{-1}`.

use nalgebra::{DMatrix, DVector};

use crate::polyhedra::PolyhedralSet;
use crate::solver::{solve_sdp, LmiBlock, SdpProblem, SolveStatus, SolverConfig};
use crate::synth_data::{check_informativity, DataRecord};
use crate::synth_model::{check_lambda, LinearSystem};
use crate::{Error, Result};

/// Eigenvalue floor below which the stationary covariance is shifted before
/// inversion for gain recovery.
const SINGULAR_SHIFT: f64 = 1e-9;

/// The factor in the per-row stationary bound `q/(6 lambda^2 g_i^2)`,
/// implemented verbatim.
const ROW_BOUND_DENOMINATOR: f64 = 6.0;

/// Outcome of a risk-bound optimization.
#[derive(Clone, Debug)]
pub struct RiskBoundResult {
    /// `min(eps_raw, 1)`; see `vacuous`.
    pub eps_bar: f64,
    /// Unclamped optimizer value, kept for residual checks.
    pub eps_raw: f64,
    /// Whether the bound exceeded 1 and was clamped (no information).
    pub vacuous: bool,
    /// Steady-state covariance bound, symmetric PSD.
    pub sigma_ss: DMatrix<f64>,
    /// Decision matrix: `K Sigma_ss` (model) or `G_K Sigma_ss` (data).
    pub v: DMatrix<f64>,
    /// Achieving gain.
    pub gain: DMatrix<f64>,
    /// Data parametrization `G_K = V Sigma_ss^{-1}` (data-based only).
    pub g_k: Option<DMatrix<f64>>,
    pub lambda: f64,
    /// `1 - beta`.
    pub confidence: f64,
    pub iterations: u32,
    /// Worst residual of the re-substituted solution.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub enum RiskBound {
    Feasible(Box<RiskBoundResult>),
    Infeasible,
}

impl RiskBound {
    pub fn feasible(&self) -> Option<&RiskBoundResult> {
        match self {
            RiskBound::Feasible(r) => Some(r),
            RiskBound::Infeasible => None,
        }
    }

    pub fn expect_feasible(self, what: &str) -> Result<RiskBoundResult> {
        match self {
            RiskBound::Feasible(r) => Ok(*r),
            RiskBound::Infeasible => Err(Error::Solver(format!("{what}: infeasible"))),
        }
    }
}

/// Model-based risk bound. `worst_cov` is the true covariance in the known
/// case (`beta = 0`) or `Sigma_hat + r_c(beta) I` in the ambiguous case.
pub fn risk_bound_model(
    sys: &LinearSystem,
    s: &PolyhedralSet,
    lambda: f64,
    worst_cov: &DMatrix<f64>,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<RiskBound> {
    check_common(s, lambda, worst_cov, beta, sys.state_dim())?;
    let n = sys.state_dim();
    let m = sys.input_dim();
    let layout = RiskSdp::assemble(
        n,
        m,
        s,
        lambda,
        worst_cov,
        sys.b(),
        Injection::Model(sys.a()),
    )?;
    let sol = match solve_sdp(&layout.problem, cfg.sdp_tol)? {
        SolveStatus::Optimal(p) => p,
        SolveStatus::Infeasible { .. } => return Ok(RiskBound::Infeasible),
        SolveStatus::Unbounded { .. } => {
            return Err(Error::Solver("risk-bound SDP unbounded".into()))
        }
        SolveStatus::NumericalFailure { detail } => return Err(Error::Solver(detail)),
    };
    let (sigma_ss, v, eps_raw) = layout.extract(&sol.primal);
    let sigma_inv = invert_spd(&sigma_ss)?;
    let gain = &v * &sigma_inv;
    Ok(RiskBound::Feasible(Box::new(RiskBoundResult {
        eps_bar: eps_raw.min(1.0),
        eps_raw,
        vacuous: eps_raw >= 1.0,
        sigma_ss,
        v,
        gain,
        g_k: None,
        lambda,
        confidence: 1.0 - beta,
        iterations: sol.iterations,
        residual: sol.max_residual,
    })))
}

/// Data-based risk bound: same SDP with `(X1 - W0) V` in the off-diagonal
/// block, `X0 V = Sigma_ss` aligning `V` with the right-inverse
/// parametrization, and `K = U0 V Sigma_ss^{-1}`.
pub fn risk_bound_data(
    d: &DataRecord,
    s: &PolyhedralSet,
    lambda: f64,
    worst_cov: &DMatrix<f64>,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<RiskBound> {
    check_common(s, lambda, worst_cov, beta, d.state_dim())?;
    let info = check_informativity(d);
    if !info.safe_synthesis_ready {
        return Err(Error::RankDeficient(format!(
            "X0 has rank {} < {}",
            info.rank_x0,
            d.state_dim()
        )));
    }
    let n = d.state_dim();
    let shifted = d.shifted();
    let layout = RiskSdp::assemble(
        n,
        d.num_samples(),
        s,
        lambda,
        worst_cov,
        &shifted,
        Injection::Data(&d.x0),
    )?;
    let sol = match solve_sdp(&layout.problem, cfg.sdp_tol)? {
        SolveStatus::Optimal(p) => p,
        SolveStatus::Infeasible { .. } => return Ok(RiskBound::Infeasible),
        SolveStatus::Unbounded { .. } => {
            return Err(Error::Solver("risk-bound SDP unbounded".into()))
        }
        SolveStatus::NumericalFailure { detail } => return Err(Error::Solver(detail)),
    };
    let (sigma_ss, v, eps_raw) = layout.extract(&sol.primal);
    let sigma_inv = invert_spd(&sigma_ss)?;
    let g_k = &v * &sigma_inv;
    let gain = &d.u0 * &g_k;
    Ok(RiskBound::Feasible(Box::new(RiskBoundResult {
        eps_bar: eps_raw.min(1.0),
        eps_raw,
        vacuous: eps_raw >= 1.0,
        sigma_ss,
        v,
        gain,
        g_k: Some(g_k),
        lambda,
        confidence: 1.0 - beta,
        iterations: sol.iterations,
        residual: sol.max_residual,
    })))
}

fn check_common(
    s: &PolyhedralSet,
    lambda: f64,
    worst_cov: &DMatrix<f64>,
    beta: f64,
    n: usize,
) -> Result<()> {
    check_lambda(lambda)?;
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain(format!(
            "confidence parameter beta must lie in [0, 1), got {beta}"
        )));
    }
    if s.dim() != n {
        return Err(Error::dim("safe set dim", n, s.dim()));
    }
    if worst_cov.nrows() != n || worst_cov.ncols() != n {
        return Err(Error::dim("worst-case covariance", n, worst_cov.nrows()));
    }
    if s.g().iter().any(|g| *g <= 0.0) {
        return Err(Error::domain("risk bound requires every g_i > 0"));
    }
    let min_eig = crate::solver::min_eig_sym(worst_cov);
    if min_eig < -1e-10 * (1.0 + worst_cov.amax()) {
        return Err(Error::NotPsd { min_eig });
    }
    Ok(())
}

enum Injection<'a> {
    /// Model case: top-right block `A Sigma_ss + B V`.
    Model(&'a DMatrix<f64>),
    /// Data case: top-right block `(X1 - W0) V` only, plus `X0 V = Sigma_ss`.
    Data(&'a DMatrix<f64>),
}

/// Variable layout: `z = [eps, svec-upper(Sigma_ss), vec(V)]` with `V`
/// stored row-major, `p x n`.
struct RiskSdp {
    problem: SdpProblem,
    n: usize,
    p_rows: usize,
}

impl RiskSdp {
    fn assemble(
        n: usize,
        p_rows: usize,
        s: &PolyhedralSet,
        lambda: f64,
        worst_cov: &DMatrix<f64>,
        injector: &DMatrix<f64>,
        injection: Injection<'_>,
    ) -> Result<Self> {
        let n_sigma = n * (n + 1) / 2;
        let n_vars = 1 + n_sigma + p_rows * n;
        let sig_idx = upper_index_map(n);

        // objective: minimize eps
        let mut objective = DVector::zeros(n_vars);
        objective[0] = 1.0;

        // big LMI block (2n x 2n)
        let d = 2 * n;
        let mut constant = DMatrix::zeros(d, d);
        constant.view_mut((0, 0), (n, n)).copy_from(&(-worst_cov));
        let mut coeffs = vec![DMatrix::zeros(d, d); n_vars];
        for i in 0..n {
            for j in i..n {
                let var = 1 + sig_idx[i][j];
                let mut basis = DMatrix::zeros(n, n);
                basis[(i, j)] = 1.0;
                basis[(j, i)] = 1.0;
                let block = &mut coeffs[var];
                block.view_mut((0, 0), (n, n)).copy_from(&basis);
                block.view_mut((n, n), (n, n)).copy_from(&basis);
                if let Injection::Model(a) = injection {
                    let asb = a * &basis;
                    block.view_mut((0, n), (n, n)).copy_from(&asb);
                    block.view_mut((n, 0), (n, n)).copy_from(&asb.transpose());
                }
            }
        }
        for r in 0..p_rows {
            for c in 0..n {
                let var = 1 + n_sigma + r * n + c;
                // injector column r lands in column c of the top-right block
                let col = injector.column(r);
                let block = &mut coeffs[var];
                for i in 0..n {
                    block[(i, n + c)] += col[i];
                    block[(n + c, i)] += col[i];
                }
            }
        }
        let big = LmiBlock::new(constant, coeffs)?;

        // Sigma_ss >= 0, stated as its own block
        let mut psd_coeffs = vec![DMatrix::zeros(n, n); n_vars];
        for i in 0..n {
            for j in i..n {
                let var = 1 + sig_idx[i][j];
                psd_coeffs[var][(i, j)] = 1.0;
                psd_coeffs[var][(j, i)] = 1.0;
            }
        }
        let psd = LmiBlock::new(DMatrix::zeros(n, n), psd_coeffs)?;

        // row constraints (q/(6 lambda^2 g_i^2)) F_i Sigma F_i' - eps <= 0
        let q = s.num_rows();
        let mut ineq_a = DMatrix::zeros(q, n_vars);
        let ineq_b = DVector::zeros(q);
        for row in 0..q {
            let scale =
                q as f64 / (ROW_BOUND_DENOMINATOR * lambda * lambda * s.g()[row] * s.g()[row]);
            for i in 0..n {
                for j in i..n {
                    let sym_factor = if i == j { 1.0 } else { 2.0 };
                    ineq_a[(row, 1 + sig_idx[i][j])] =
                        scale * sym_factor * s.f()[(row, i)] * s.f()[(row, j)];
                }
            }
            ineq_a[(row, 0)] = -1.0;
        }

        // data alignment X0 V = Sigma_ss
        let (eq_a, eq_b) = match injection {
            Injection::Model(_) => (DMatrix::zeros(0, n_vars), DVector::zeros(0)),
            Injection::Data(x0) => {
                let mut a = DMatrix::zeros(n * n, n_vars);
                let b = DVector::zeros(n * n);
                for r in 0..n {
                    for c in 0..n {
                        let row = r * n + c;
                        for k in 0..p_rows {
                            a[(row, 1 + n_sigma + k * n + c)] = x0[(r, k)];
                        }
                        a[(row, 1 + sig_idx[r.min(c)][r.max(c)])] -= 1.0;
                    }
                }
                (a, b)
            }
        };

        Ok(RiskSdp {
            problem: SdpProblem {
                objective,
                lmi_blocks: vec![big, psd],
                ineq: (ineq_a, ineq_b),
                eq: (eq_a, eq_b),
            },
            n,
            p_rows,
        })
    }

    fn extract(&self, z: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let n = self.n;
        let sig_idx = upper_index_map(n);
        let sigma = DMatrix::from_fn(n, n, |i, j| z[1 + sig_idx[i.min(j)][i.max(j)]]);
        let n_sigma = n * (n + 1) / 2;
        let v = DMatrix::from_fn(self.p_rows, n, |r, c| z[1 + n_sigma + r * n + c]);
        (sigma, v, z[0])
    }
}

fn upper_index_map(n: usize) -> Vec<Vec<usize>> {
    let mut idx = vec![vec![0usize; n]; n];
    let mut k = 0;
    for (i, row) in idx.iter_mut().enumerate() {
        for entry in row.iter_mut().skip(i) {
            *entry = k;
            k += 1;
        }
    }
    idx
}

/// Inverse of a symmetric positive-definite matrix, shifting the spectrum
/// by [`SINGULAR_SHIFT`] when the solver returns a boundary point.
fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let min_eig = crate::solver::min_eig_sym(m);
    let shifted = if min_eig < SINGULAR_SHIFT {
        m + DMatrix::identity(m.nrows(), m.ncols()) * SINGULAR_SHIFT
    } else {
        m.clone()
    };
    shifted
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Solver("stationary covariance not invertible".into()))
}

/// Independent fixed-point evaluation of the discrete Lyapunov equation
/// `Sigma = Acl Sigma Acl' + W`; converges exactly when `rho(Acl) < 1`.
pub fn discrete_lyapunov(acl: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = acl.nrows();
    if acl.ncols() != n || w.nrows() != n || w.ncols() != n {
        return Err(Error::dim("discrete_lyapunov", n, acl.ncols()));
    }
    let mut sigma = w.clone();
    // doubling iteration: Sigma_{k+1} = M_k Sigma_k M_k' + Sigma_k squares
    // the spectral radius each round, so convergence is fast and divergence
    // is detected quickly
    let mut m = acl.clone();
    for _ in 0..200 {
        let next = &m * &sigma * m.transpose() + &sigma;
        let delta = (&next - &sigma).amax();
        sigma = next;
        if !sigma.iter().all(|v| v.is_finite()) {
            return Err(Error::domain(
                "discrete Lyapunov iteration diverged; closed loop unstable",
            ));
        }
        if delta <= 1e-14 * (1.0 + sigma.amax()) {
            return Ok(sigma);
        }
        m = &m * &m;
    }
    Err(Error::domain(
        "discrete Lyapunov iteration failed to converge",
    ))
}
