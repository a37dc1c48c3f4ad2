//! Direct data-driven synthesis: no identification step.
//!
//! From one open-loop experiment arranged as
//!
//! ```text
//! X0 = [x(0) .. x(N-1)]   X1 = [x(1) .. x(N)]
//! U0 = [u(0) .. u(N-1)]   W0 = [w(0) .. w(N-1)]
//! ```
//!
//! the closed loop is parametrized by a matrix `G_K` with `X0 G_K = I`:
//! since `X1 - W0 = A X0 + B U0`, right-multiplying by `G_K` gives
//! `(X1 - W0) G_K = A + B U0 G_K`, so the certificate conditions of the
//! model-based LP carry over verbatim with `A + B K` replaced by
//! `(X1 - W0) G_K` and the gain recovered as `K = U0 G_K`.
//!
//! Full row rank of `X0` is all that is needed — strictly weaker than the
//! persistency of excitation required to identify `(A, B)`, which needs the
//! stacked matrix `[U0; X0]` to have rank `n + m`. Synthesis can succeed on
//! data from which no model is recoverable.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::noise::{EmpiricalNoise, NoiseModel};
use crate::polyhedra::PolyhedralSet;
use crate::synth_model::{
    check_lambda, CertificateLp, Rhs, Synthesis, SynthesisMode, SynthesisOptions,
};
use crate::tightening::MarginVector;
use crate::{Error, Result};

/// Relative singular-value cutoff for rank decisions.
const RANK_CUTOFF: f64 = 1e-12;
/// Condition numbers beyond this raise a diagnostics warning, not an error.
const CONDITION_WARN: f64 = 1e10;

/// The four experiment matrices, column per time sample.
#[derive(Clone, Debug)]
pub struct DataRecord {
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub u0: DMatrix<f64>,
    pub w0: DMatrix<f64>,
}

impl DataRecord {
    pub fn new(
        x0: DMatrix<f64>,
        x1: DMatrix<f64>,
        u0: DMatrix<f64>,
        w0: DMatrix<f64>,
    ) -> Result<Self> {
        let n_samples = x0.ncols();
        if x1.ncols() != n_samples || u0.ncols() != n_samples || w0.ncols() != n_samples {
            return Err(Error::dim(
                "data record samples",
                n_samples,
                format!("x1: {}, u0: {}, w0: {}", x1.ncols(), u0.ncols(), w0.ncols()),
            ));
        }
        if x1.nrows() != x0.nrows() || w0.nrows() != x0.nrows() {
            return Err(Error::dim("data record state dim", x0.nrows(), x1.nrows()));
        }
        if n_samples == 0 {
            return Err(Error::Empty("data record"));
        }
        Ok(DataRecord { x0, x1, u0, w0 })
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.x0.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.u0.nrows()
    }

    /// Number of recorded transitions `N`.
    pub fn num_samples(&self) -> usize {
        self.x0.ncols()
    }

    /// The noise-free transition data `X1 - W0 = A X0 + B U0`.
    pub fn shifted(&self) -> DMatrix<f64> {
        &self.x1 - &self.w0
    }
}

/// Collects a [`DataRecord`] by driving a known system open loop with the
/// given input sequence (column per step) and seeded noise. `X1 = A X0 +
/// B U0 + W0` holds exactly by construction.
pub fn generate_data(
    sys: &crate::synth_model::LinearSystem,
    x0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    noise: &NoiseModel,
    seed: u64,
) -> Result<DataRecord> {
    let n = sys.state_dim();
    if x0.len() != n {
        return Err(Error::dim("initial state", n, x0.len()));
    }
    if inputs.nrows() != sys.input_dim() {
        return Err(Error::dim("input rows", sys.input_dim(), inputs.nrows()));
    }
    if noise.dim() != n {
        return Err(Error::dim("noise dim", n, noise.dim()));
    }
    let n_samples = inputs.ncols();
    if n_samples == 0 {
        return Err(Error::Empty("input sequence"));
    }
    let sampler = noise.sampler();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x0_mat = DMatrix::zeros(n, n_samples);
    let mut x1_mat = DMatrix::zeros(n, n_samples);
    let mut w0_mat = DMatrix::zeros(n, n_samples);
    let mut x = x0.clone();
    for t in 0..n_samples {
        let w = sampler.draw(&mut rng);
        let next = sys.a() * &x + sys.b() * inputs.column(t) + &w;
        x0_mat.set_column(t, &x);
        x1_mat.set_column(t, &next);
        w0_mat.set_column(t, &w);
        x = next;
    }
    DataRecord::new(x0_mat, x1_mat, inputs.clone(), w0_mat)
}

/// Rank diagnostics separating "enough data to synthesize safely" from
/// "enough data to identify the model".
#[derive(Clone, Debug)]
pub struct InformativityReport {
    pub rank_x0: usize,
    /// Rank of the stacked matrix `[U0; X0]`.
    pub rank_stacked: usize,
    /// `rank(X0) = n`: the data support direct safe synthesis.
    pub safe_synthesis_ready: bool,
    /// `rank([U0; X0]) = n + m`: the data would also support least-squares
    /// identification.
    pub identification_ready: bool,
    pub condition_x0: f64,
    pub ill_conditioned: bool,
}

/// Ranks via singular values with cutoff `sigma_max * N * 1e-12`.
pub fn check_informativity(d: &DataRecord) -> InformativityReport {
    let n = d.state_dim();
    let m = d.input_dim();
    let mut stacked = DMatrix::zeros(m + n, d.num_samples());
    stacked
        .view_mut((0, 0), (m, d.num_samples()))
        .copy_from(&d.u0);
    stacked
        .view_mut((m, 0), (n, d.num_samples()))
        .copy_from(&d.x0);

    let (rank_x0, condition_x0) = rank_and_condition(&d.x0, d.num_samples());
    let (rank_stacked, _) = rank_and_condition(&stacked, d.num_samples());
    InformativityReport {
        rank_x0,
        rank_stacked,
        safe_synthesis_ready: rank_x0 == n,
        identification_ready: rank_stacked == n + m,
        condition_x0,
        ill_conditioned: condition_x0 > CONDITION_WARN,
    }
}

fn rank_and_condition(m: &DMatrix<f64>, n_samples: usize) -> (usize, f64) {
    let svals = m.clone().singular_values();
    let smax = svals.max();
    if smax == 0.0 {
        return (0, f64::INFINITY);
    }
    let cutoff = smax * n_samples as f64 * RANK_CUTOFF;
    let rank = svals.iter().filter(|s| **s > cutoff).count();
    let smin_effective = svals
        .iter()
        .copied()
        .filter(|s| *s > cutoff)
        .fold(f64::INFINITY, f64::min);
    let cond = if rank < m.nrows().min(m.ncols()) {
        f64::INFINITY
    } else {
        smax / smin_effective
    };
    (rank, cond)
}

/// Result of a data-driven synthesis: the parametrization `G_K`, the gain
/// `K = U0 G_K` and the usual certificate.
#[derive(Clone, Debug)]
pub struct DataSynthesisResult {
    pub g_k: DMatrix<f64>,
    pub result: crate::synth_model::SynthesisResult,
    pub informativity: InformativityReport,
    /// `max |X0 G_K - I|`.
    pub residual_gk: f64,
}

/// Data-driven synthesis either certifies a gain or is infeasible.
#[derive(Clone, Debug)]
pub enum DataSynthesis {
    Feasible(Box<DataSynthesisResult>),
    Infeasible,
}

impl DataSynthesis {
    pub fn feasible(&self) -> Option<&DataSynthesisResult> {
        match self {
            DataSynthesis::Feasible(r) => Some(r),
            DataSynthesis::Infeasible => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, DataSynthesis::Feasible(_))
    }

    pub fn expect_feasible(self, what: &str) -> Result<DataSynthesisResult> {
        match self {
            DataSynthesis::Feasible(r) => Ok(*r),
            DataSynthesis::Infeasible => Err(Error::Solver(format!("{what}: infeasible"))),
        }
    }
}

/// Data-based synthesis with margin tightening (`a = l` from a known
/// covariance or `a = l_hat` from an ambiguous one — the caller picks by
/// computing the margins).
pub fn synth_data_gaussian(
    d: &DataRecord,
    s: &PolyhedralSet,
    lambda: f64,
    margins: &MarginVector,
    mode: SynthesisMode,
    opts: &SynthesisOptions,
) -> Result<DataSynthesis> {
    check_lambda(lambda)?;
    let info = precheck(d, s)?;
    let identity = DMatrix::identity(d.state_dim(), d.state_dim());
    let layout = CertificateLp::assemble(
        s,
        lambda,
        &DMatrix::zeros(s.num_rows(), s.dim()),
        &(s.f() * d.shifted()),
        Rhs::Margins(margins),
        Some((&d.x0, &identity)),
        opts,
    )?;
    finish(d, s, layout, opts, margins.clone(), mode, info)
}

/// Data-based scenario CVaR synthesis (`g` scalar in the base statement;
/// joint rows are split uniformly like the model-based case).
pub fn synth_data_cvar(
    d: &DataRecord,
    s: &PolyhedralSet,
    lambda: f64,
    scenarios: &EmpiricalNoise,
    eps: f64,
    opts: &SynthesisOptions,
) -> Result<DataSynthesis> {
    check_lambda(lambda)?;
    let info = precheck(d, s)?;
    if scenarios.dim() != d.state_dim() {
        return Err(Error::dim("scenario dim", d.state_dim(), scenarios.dim()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::domain(format!(
            "risk level must lie in (0,1], got {eps}"
        )));
    }
    let q = s.num_rows();
    let eps_per_row = vec![eps / q as f64; q];
    let identity = DMatrix::identity(d.state_dim(), d.state_dim());
    let layout = CertificateLp::assemble(
        s,
        lambda,
        &DMatrix::zeros(q, s.dim()),
        &(s.f() * d.shifted()),
        Rhs::Cvar {
            scenarios,
            eps_per_row: &eps_per_row,
        },
        Some((&d.x0, &identity)),
        opts,
    )?;
    finish(
        d,
        s,
        layout,
        opts,
        MarginVector::zero(q),
        SynthesisMode::Cvar { eps },
        info,
    )
}

fn precheck(d: &DataRecord, s: &PolyhedralSet) -> Result<InformativityReport> {
    if s.dim() != d.state_dim() {
        return Err(Error::dim("safe set dim", d.state_dim(), s.dim()));
    }
    let info = check_informativity(d);
    if !info.safe_synthesis_ready {
        return Err(Error::RankDeficient(format!(
            "X0 has rank {} < {}; collect richer data",
            info.rank_x0,
            d.state_dim()
        )));
    }
    Ok(info)
}

fn finish(
    d: &DataRecord,
    s: &PolyhedralSet,
    layout: CertificateLp,
    opts: &SynthesisOptions,
    margins: MarginVector,
    mode: SynthesisMode,
    info: InformativityReport,
) -> Result<DataSynthesis> {
    let n = d.state_dim();
    let n_samples = d.num_samples();
    let shifted = d.shifted();
    let synthesis = layout.solve(opts, |g_k| Ok(&shifted * g_k), s, margins, mode)?;
    match synthesis {
        Synthesis::Infeasible => Ok(DataSynthesis::Infeasible),
        Synthesis::Feasible(mut res) => {
            let g_k = std::mem::replace(&mut res.gain, DMatrix::zeros(0, 0));
            debug_assert_eq!(g_k.nrows(), n_samples);
            let residual_gk = (&d.x0 * &g_k - DMatrix::identity(n, n)).amax();
            res.gain = &d.u0 * &g_k;
            Ok(DataSynthesis::Feasible(Box::new(DataSynthesisResult {
                g_k,
                result: *res,
                informativity: info,
                residual_gk,
            })))
        }
    }
}
