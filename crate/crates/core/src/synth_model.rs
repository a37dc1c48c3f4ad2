//! Model-based synthesis of probabilistically contractive state feedback.
//!
//! All three noise regimes reduce to one linear program over the gain `K`
//! and a nonnegative certificate matrix `P`:
//!
//! ```text
//! P F  = F (A + B K)            (Farkas equality, linear in K and P)
//! P g <= lambda g - a           (tightened contraction rows)
//! P   >= 0
//! ```
//!
//! with `a = l` for a known covariance, `a = l_hat` for an ambiguous one,
//! and, in the CVaR regime, per-scenario rows
//! `P g <= lambda g - F w_i + z_i + eta` coupled with the tail-average
//! constraint `eta + (1/(eps N)) sum_i z_i <= 0` in place of the margin.
//!
//! The conditions themselves are pure feasibility problems; by default we
//! minimize the entrywise sum of `P` so that returned controllers are
//! deterministic and contraction is as tight as the margins allow.

use nalgebra::{DMatrix, DVector};

use crate::noise::{AmbiguousGaussian, EmpiricalNoise};
use crate::polyhedra::PolyhedralSet;
use crate::solver::{solve_lp, LpBuilder, SolveStatus, SolverConfig};
use crate::tightening::{
    margin_ambiguous, margin_known, MarginVector, QuantileRule, RiskAllocation,
};
use crate::{Error, Result};

/// The plant `x(t+1) = A x(t) + B u(t) + w(t)`.
///
/// Stabilizability of `(A, B)` is assumed, not checked: for an
/// unstabilizable pair the synthesis LP simply comes back infeasible.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dim("A", a.nrows(), a.ncols()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dim("B rows", a.nrows(), b.nrows()));
        }
        Ok(LinearSystem { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A + B K`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k.nrows() != self.input_dim() || k.ncols() != self.state_dim() {
            return Err(Error::dim(
                "gain",
                format!("{}x{}", self.input_dim(), self.state_dim()),
                format!("{}x{}", k.nrows(), k.ncols()),
            ));
        }
        Ok(&self.a + &self.b * k)
    }
}

/// Objective stamped onto the otherwise pure-feasibility synthesis LP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SynthesisObjective {
    /// Minimize 0; take whatever feasible point the solver lands on.
    Feasibility,
    /// Minimize the entrywise sum of `P` (default): deterministic solutions
    /// and a proxy for contraction tightness.
    #[default]
    MinCertificateSum,
    /// Treat `lambda` as a decision variable in `(0, lambda_max]` and
    /// minimize it; the product `lambda * g` stays linear because `g` is
    /// data.
    MinLambda,
}

/// Knobs shared by every synthesis entry point.
#[derive(Clone, Copy, Debug, Default)]
pub struct SynthesisOptions {
    pub objective: SynthesisObjective,
    pub quantile: QuantileRule,
    pub solver: SolverConfig,
    /// When positive, adds `weight * sum |G_K|` to the objective of the
    /// data-driven programs. The right-inverse condition leaves the null
    /// space of `X0` free; a small weight keeps `G_K` well conditioned.
    /// No effect on model-based synthesis.
    pub gk_l1_weight: f64,
}

/// Which synthesis regime produced a result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthesisMode {
    Gaussian,
    /// Carries the confidence `1 - beta` inherited from the ambiguity set.
    DrGaussian {
        confidence: f64,
    },
    Cvar {
        eps: f64,
    },
}

/// Backend telemetry preserved on every result.
#[derive(Clone, Debug)]
pub struct SolverDiagnostics {
    pub status: &'static str,
    pub objective: f64,
    pub iterations: u32,
    pub solver_residual: f64,
}

/// Scenario-program extras present in CVaR mode: one `eta` and one row of
/// slacks `z` per constraint row (rows are split uniformly when `q > 1`).
#[derive(Clone, Debug)]
pub struct CvarExtras {
    pub eta: DVector<f64>,
    /// `q x N`, entrywise nonnegative.
    pub z: DMatrix<f64>,
    pub eps_per_row: Vec<f64>,
}

/// A certified gain: `P >= 0`, `P F = F(A + B K)` and
/// `P g <= lambda g - a` within the stored residuals.
#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub gain: DMatrix<f64>,
    pub certificate: DMatrix<f64>,
    pub mode: SynthesisMode,
    pub lambda: f64,
    pub margins: MarginVector,
    pub cvar: Option<CvarExtras>,
    /// `max |P F - F(A + B K)|`.
    pub residual_eq: f64,
    /// `max_i (P g - rhs)_i` over all contraction rows (including scenario
    /// rows and the tail constraint in CVaR mode).
    pub residual_ineq: f64,
    pub diagnostics: SolverDiagnostics,
}

/// Synthesis either certifies a gain or proves the conditions infeasible
/// under the given margins.
#[derive(Clone, Debug)]
pub enum Synthesis {
    Feasible(Box<SynthesisResult>),
    Infeasible,
}

impl Synthesis {
    pub fn feasible(&self) -> Option<&SynthesisResult> {
        match self {
            Synthesis::Feasible(r) => Some(r),
            Synthesis::Infeasible => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Synthesis::Feasible(_))
    }

    pub fn expect_feasible(self, what: &str) -> Result<SynthesisResult> {
        match self {
            Synthesis::Feasible(r) => Ok(*r),
            Synthesis::Infeasible => Err(Error::Solver(format!("{what}: infeasible"))),
        }
    }
}

/// Gaussian noise with known covariance.
pub fn synth_gaussian(
    sys: &LinearSystem,
    s: &PolyhedralSet,
    lambda: f64,
    sigma: &DMatrix<f64>,
    alloc: &RiskAllocation,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    let margins = margin_known(s.f(), sigma, alloc, opts.quantile)?;
    let mode = SynthesisMode::Gaussian;
    synth_with_margins(sys, s, lambda, margins, mode, opts)
}

/// Gaussian noise with covariance known only through samples; margins use
/// the worst case over the ambiguity set, and the certificate holds with
/// confidence `1 - beta`.
pub fn synth_dr_gaussian(
    sys: &LinearSystem,
    s: &PolyhedralSet,
    lambda: f64,
    amb: &AmbiguousGaussian,
    alloc: &RiskAllocation,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    let margins = margin_ambiguous(s.f(), amb, alloc, opts.quantile)?;
    let mode = SynthesisMode::DrGaussian {
        confidence: 1.0 - amb.beta,
    };
    synth_with_margins(sys, s, lambda, margins, mode, opts)
}

/// Shared body of the two margin-based regimes.
pub(crate) fn synth_with_margins(
    sys: &LinearSystem,
    s: &PolyhedralSet,
    lambda: f64,
    margins: MarginVector,
    mode: SynthesisMode,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    check_lambda(lambda)?;
    check_dims(sys, s)?;
    let layout = CertificateLp::assemble(
        s,
        lambda,
        &(s.f() * sys.a()),
        &(s.f() * sys.b()),
        Rhs::Margins(&margins),
        None,
        opts,
    )?;
    layout.solve(opts, |k| sys.closed_loop(k), s, margins, mode)
}

/// Unknown distribution: sample-average CVaR over recorded noise scenarios.
///
/// Stated for scalar `g`; joint sets are handled by splitting `eps`
/// uniformly across rows, each row getting its own `(eta, z)` pair.
pub fn synth_cvar(
    sys: &LinearSystem,
    s: &PolyhedralSet,
    lambda: f64,
    scenarios: &EmpiricalNoise,
    eps: f64,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    check_lambda(lambda)?;
    check_dims(sys, s)?;
    if scenarios.dim() != sys.state_dim() {
        return Err(Error::dim("scenario dim", sys.state_dim(), scenarios.dim()));
    }
    // eps = 1 is allowed here: the tail constraint degenerates to a plain
    // mean constraint over the scenarios
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::domain(format!(
            "risk level must lie in (0,1], got {eps}"
        )));
    }
    let q = s.num_rows();
    let eps_per_row = vec![eps / q as f64; q];
    let layout = CertificateLp::assemble(
        s,
        lambda,
        &(s.f() * sys.a()),
        &(s.f() * sys.b()),
        Rhs::Cvar {
            scenarios,
            eps_per_row: &eps_per_row,
        },
        None,
        opts,
    )?;
    layout.solve(
        opts,
        |k| sys.closed_loop(k),
        s,
        MarginVector::zero(q),
        SynthesisMode::Cvar { eps },
    )
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::domain(format!(
            "contraction factor must lie in (0, 1), got {lambda}"
        )));
    }
    Ok(())
}

fn check_dims(sys: &LinearSystem, s: &PolyhedralSet) -> Result<()> {
    if s.dim() != sys.state_dim() {
        return Err(Error::dim("safe set dim", sys.state_dim(), s.dim()));
    }
    Ok(())
}

/// Right-hand-side flavor of the contraction rows.
pub(crate) enum Rhs<'a> {
    Margins(&'a MarginVector),
    Cvar {
        scenarios: &'a EmpiricalNoise,
        eps_per_row: &'a [f64],
    },
}

/// Shared LP skeleton for model-based and data-based synthesis: a gain-like
/// block `G` (the gain `K` itself, or the data-parametrized `G_K`), the
/// certificate `P`, and optionally `lambda`, `eta`, `z`.
///
/// The Farkas equality is `(P F)_{ij} = c0_{ij} + (C G)_{ij}` with
/// `c0 = F A, C = F B` in the model case and `c0 = 0, C = F (X1 - W0)` in
/// the data case.
pub(crate) struct CertificateLp {
    pub lp: crate::solver::LpProblem,
    pub g_rows: usize,
    pub g_start: usize,
    pub p_start: usize,
    pub lambda_var: Option<usize>,
    pub eta_start: Option<usize>,
    pub z_start: Option<usize>,
    pub n_scenarios: usize,
    pub fixed_lambda: f64,
    pub q: usize,
    pub n: usize,
    /// `F * W'` per scenario and the per-row risk split, kept for residual
    /// re-checks in CVaR mode.
    scenario_fw: Option<DMatrix<f64>>,
    scenario_eps: Option<Vec<f64>>,
}

impl CertificateLp {
    pub(crate) fn assemble(
        s: &PolyhedralSet,
        lambda: f64,
        c0: &DMatrix<f64>,
        c: &DMatrix<f64>,
        rhs: Rhs<'_>,
        // extra equality `M G = R` on the gain block alone (the data-based
        // right-inverse condition `X0 G_K = I`)
        gain_eq: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
        opts: &SynthesisOptions,
    ) -> Result<Self> {
        let q = s.num_rows();
        let n = s.dim();
        let g_rows = c.ncols();
        let mut b = LpBuilder::new();

        let p_obj = match opts.objective {
            SynthesisObjective::MinCertificateSum => 1.0,
            _ => 0.0,
        };
        let g_start = b.vars("G", g_rows * n, 0.0, f64::NEG_INFINITY, f64::INFINITY);
        let p_start = b.vars("P", q * q, p_obj, 0.0, f64::INFINITY);
        let lambda_var = match opts.objective {
            SynthesisObjective::MinLambda => Some(b.var("lambda", 1.0, 1e-9, lambda)),
            _ => None,
        };

        let g_idx = |r: usize, c_: usize| g_start + r * n + c_;
        let p_idx = |r: usize, c_: usize| p_start + r * q + c_;

        // (P F)_{ij} - (C G)_{ij} = c0_{ij}
        for i in 0..q {
            for j in 0..n {
                let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(q + g_rows);
                for k in 0..q {
                    let fkj = s.f()[(k, j)];
                    if fkj != 0.0 {
                        coeffs.push((p_idx(i, k), fkj));
                    }
                }
                for r in 0..g_rows {
                    let cir = c[(i, r)];
                    if cir != 0.0 {
                        coeffs.push((g_idx(r, j), -cir));
                    }
                }
                b.eq(coeffs, c0[(i, j)]);
            }
        }

        if let Some((m_mat, r_mat)) = gain_eq {
            if m_mat.ncols() != g_rows || r_mat.nrows() != m_mat.nrows() || r_mat.ncols() != n {
                return Err(Error::dim(
                    "gain equality",
                    format!("{}x{g_rows} * {g_rows}x{n}", m_mat.nrows()),
                    format!(
                        "{}x{} = {}x{}",
                        m_mat.nrows(),
                        m_mat.ncols(),
                        r_mat.nrows(),
                        r_mat.ncols()
                    ),
                ));
            }
            for r in 0..m_mat.nrows() {
                for j in 0..n {
                    let coeffs = (0..g_rows)
                        .filter(|k| m_mat[(r, *k)] != 0.0)
                        .map(|k| (g_idx(k, j), m_mat[(r, k)]))
                        .collect();
                    b.eq(coeffs, r_mat[(r, j)]);
                }
            }
            if opts.gk_l1_weight > 0.0 {
                // |G| majorants: G <= t, -G <= t, t in the objective
                let t0 = b.vars("absG", g_rows * n, opts.gk_l1_weight, 0.0, f64::INFINITY);
                for r in 0..g_rows {
                    for j in 0..n {
                        let g = g_idx(r, j);
                        let t = t0 + r * n + j;
                        b.ub(vec![(g, 1.0), (t, -1.0)], 0.0);
                        b.ub(vec![(g, -1.0), (t, -1.0)], 0.0);
                    }
                }
            }
        }

        let mut eta_start = None;
        let mut z_start = None;
        let mut n_scenarios = 0;
        let mut scenario_fw = None;
        let mut scenario_eps = None;
        match rhs {
            Rhs::Margins(margins) => {
                if margins.len() != q {
                    return Err(Error::dim("margins", q, margins.len()));
                }
                // (P g)_i <= lambda g_i - a_i
                for i in 0..q {
                    let mut coeffs: Vec<(usize, f64)> =
                        (0..q).map(|k| (p_idx(i, k), s.g()[k])).collect();
                    let rhs_val = if let Some(lv) = lambda_var {
                        coeffs.push((lv, -s.g()[i]));
                        -margins.values[i]
                    } else {
                        lambda * s.g()[i] - margins.values[i]
                    };
                    b.ub(coeffs, rhs_val);
                }
            }
            Rhs::Cvar {
                scenarios,
                eps_per_row,
            } => {
                n_scenarios = scenarios.len();
                let eta0 = b.vars("eta", q, 0.0, f64::NEG_INFINITY, f64::INFINITY);
                let z0 = b.vars("z", q * n_scenarios, 0.0, 0.0, f64::INFINITY);
                eta_start = Some(eta0);
                z_start = Some(z0);
                let fw = s.f() * scenarios.samples.transpose(); // q x N
                for i in 0..q {
                    // per scenario: (P g)_i - z_{i,w} - eta_i <= lambda g_i - (F w)_i
                    for w in 0..n_scenarios {
                        let mut coeffs: Vec<(usize, f64)> =
                            (0..q).map(|k| (p_idx(i, k), s.g()[k])).collect();
                        coeffs.push((z0 + i * n_scenarios + w, -1.0));
                        coeffs.push((eta0 + i, -1.0));
                        let rhs_val = if let Some(lv) = lambda_var {
                            coeffs.push((lv, -s.g()[i]));
                            -fw[(i, w)]
                        } else {
                            lambda * s.g()[i] - fw[(i, w)]
                        };
                        b.ub(coeffs, rhs_val);
                    }
                    // tail average: eta_i + (1/(eps_i N)) sum_w z_{i,w} <= 0
                    let scale = 1.0 / (eps_per_row[i] * n_scenarios as f64);
                    let mut coeffs: Vec<(usize, f64)> = vec![(eta0 + i, 1.0)];
                    for w in 0..n_scenarios {
                        coeffs.push((z0 + i * n_scenarios + w, scale));
                    }
                    b.ub(coeffs, 0.0);
                }
                scenario_fw = Some(fw);
                scenario_eps = Some(eps_per_row.to_vec());
            }
        }

        Ok(CertificateLp {
            lp: b.build()?,
            g_rows,
            g_start,
            p_start,
            lambda_var,
            eta_start,
            z_start,
            n_scenarios,
            fixed_lambda: lambda,
            q,
            n,
            scenario_fw,
            scenario_eps,
        })
    }

    /// Runs the LP and rebuilds a checked [`SynthesisResult`]; the
    /// `closed_loop` callback maps the extracted gain block to `A + B K`
    /// (or its data-based stand-in).
    pub(crate) fn solve(
        &self,
        opts: &SynthesisOptions,
        closed_loop: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
        s: &PolyhedralSet,
        margins: MarginVector,
        mode: SynthesisMode,
    ) -> Result<Synthesis> {
        let opt = match solve_lp(&self.lp, opts.solver.lp_tol)? {
            SolveStatus::Optimal(opt) => opt,
            SolveStatus::Infeasible { .. } => return Ok(Synthesis::Infeasible),
            // an unbounded synthesis LP can only arise in min-lambda mode
            // with degenerate bounds; surface it
            SolveStatus::Unbounded { .. } => {
                return Err(Error::Solver("synthesis LP unbounded".into()))
            }
            SolveStatus::NumericalFailure { detail } => return Err(Error::Solver(detail)),
        };

        let z = &opt.primal;
        let gain_block = self.extract_gain(z);
        let certificate = self.extract_certificate(z);
        let lambda = self.lambda_var.map_or(self.fixed_lambda, |lv| z[lv]);
        let cl = closed_loop(&gain_block)?;

        let residual_eq = (&certificate * s.f() - s.f() * &cl).amax();
        let pg = &certificate * s.g();
        let (cvar, residual_ineq) = match (self.eta_start, self.z_start) {
            (Some(e0), Some(z0)) => {
                let eta = DVector::from_iterator(self.q, (0..self.q).map(|i| z[e0 + i]));
                let zmat = DMatrix::from_fn(self.q, self.n_scenarios, |r, c| {
                    z[z0 + r * self.n_scenarios + c].max(0.0)
                });
                let extras = CvarExtras {
                    eta,
                    z: zmat,
                    eps_per_row: self.scenario_eps.clone().unwrap_or_default(),
                };
                let r = self.cvar_residual(&pg, &extras, lambda, s);
                (Some(extras), r)
            }
            _ => {
                let r = (0..self.q)
                    .map(|i| pg[i] - (lambda * s.g()[i] - margins.values[i]))
                    .fold(f64::NEG_INFINITY, f64::max);
                (None, r)
            }
        };

        Ok(Synthesis::Feasible(Box::new(SynthesisResult {
            gain: gain_block,
            certificate,
            mode,
            lambda,
            margins,
            cvar,
            residual_eq,
            residual_ineq,
            diagnostics: SolverDiagnostics {
                status: "optimal",
                objective: opt.objective,
                iterations: opt.iterations,
                solver_residual: opt.max_residual,
            },
        })))
    }

    fn extract_gain(&self, z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.g_rows, self.n, |r, c| z[self.g_start + r * self.n + c])
    }

    fn extract_certificate(&self, z: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.q, self.q, |r, c| {
            z[self.p_start + r * self.q + c].max(0.0)
        })
    }

    /// Worst violation over the scenario rows
    /// `(P g)_i <= lambda g_i - (F w)_i + z_{i,w} + eta_i`
    /// and the tail rows `eta_i + (1/(eps_i N)) sum_w z_{i,w} <= 0`.
    fn cvar_residual(
        &self,
        pg: &DVector<f64>,
        extras: &CvarExtras,
        lambda: f64,
        s: &PolyhedralSet,
    ) -> f64 {
        let fw = self.scenario_fw.as_ref().expect("cvar layout");
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.q {
            for w in 0..self.n_scenarios {
                let rhs = lambda * s.g()[i] - fw[(i, w)] + extras.z[(i, w)] + extras.eta[i];
                worst = worst.max(pg[i] - rhs);
            }
            let tail = extras.eta[i]
                + extras.z.row(i).sum() / (extras.eps_per_row[i] * self.n_scenarios as f64);
            worst = worst.max(tail);
        }
        worst
    }
}
