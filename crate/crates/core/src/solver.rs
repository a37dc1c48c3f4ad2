//! Solver-agnostic linear and semidefinite programming layer.
//!
//! Every synthesis module states its mathematics once against [`LpProblem`]
//! / [`SdpProblem`] and receives a [`SolveStatus`]. The backend is the
//! Clarabel interior-point solver; solutions are re-checked against the
//! original (unscaled) problem data and reported with their worst constraint
//! residual, so callers never depend on backend-internal tolerances.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus as BackendStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Default feasibility tolerance for linear programs.
pub const DEFAULT_LP_TOL: f64 = 1e-8;
/// Default feasibility tolerance for semidefinite programs.
pub const DEFAULT_SDP_TOL: f64 = 1e-7;

/// Tolerances handed down to every solve. Construct once and thread through.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    pub lp_tol: f64,
    pub sdp_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lp_tol: DEFAULT_LP_TOL,
            sdp_tol: DEFAULT_SDP_TOL,
        }
    }
}

impl SolverConfig {
    /// Uniform override of both tolerances (CLI `--tol` / `SAFECTL_SOLVER_TOL`).
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig {
            lp_tol: tol,
            sdp_tol: tol,
        }
    }
}

/// Linear program `min c'z` subject to `A_eq z = b_eq`, `A_ub z <= b_ub`
/// and per-variable bounds (infinite bounds allowed).
///
/// Pure feasibility problems use an all-zero objective. Nonnegativity of
/// variables is expressed through `var_lower`, not through inequality rows.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub objective: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub var_lower: DVector<f64>,
    pub var_upper: DVector<f64>,
    /// Variable labels for diagnostics; same length as `objective`.
    pub names: Vec<String>,
}

impl LpProblem {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        for (what, cols) in [("a_eq", self.a_eq.ncols()), ("a_ub", self.a_ub.ncols())] {
            if cols != n {
                return Err(Error::dim(what, n, cols));
            }
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::dim("b_eq", self.a_eq.nrows(), self.b_eq.len()));
        }
        if self.a_ub.nrows() != self.b_ub.len() {
            return Err(Error::dim("b_ub", self.a_ub.nrows(), self.b_ub.len()));
        }
        if self.var_lower.len() != n || self.var_upper.len() != n {
            return Err(Error::dim("bounds", n, self.var_lower.len()));
        }
        if self.names.len() != n {
            return Err(Error::dim("names", n, self.names.len()));
        }
        if self
            .b_eq
            .iter()
            .chain(self.b_ub.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::domain("right-hand sides must be finite"));
        }
        Ok(())
    }

    /// Magnitude of the constraint data, used to interpret residuals
    /// relative to the problem's scale.
    pub fn data_scale(&self) -> f64 {
        let mut s = 0.0f64;
        if !self.b_eq.is_empty() {
            s = s.max(self.b_eq.amax());
        }
        if !self.b_ub.is_empty() {
            s = s.max(self.b_ub.amax());
        }
        s
    }

    /// Worst violation of any constraint at `z`: equality rows by absolute
    /// residual, inequality rows and bounds by positive part.
    pub fn max_residual(&self, z: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        if self.a_eq.nrows() > 0 {
            let r = &self.a_eq * z - &self.b_eq;
            worst = worst.max(r.amax());
        }
        if self.a_ub.nrows() > 0 {
            let r = &self.a_ub * z - &self.b_ub;
            worst = r.iter().fold(worst, |w, v| w.max(*v));
        }
        for j in 0..self.num_vars() {
            worst = worst.max(self.var_lower[j] - z[j]);
            worst = worst.max(z[j] - self.var_upper[j]);
        }
        worst
    }
}

/// Incremental assembly of an [`LpProblem`]: declare variables, then add
/// sparse equality / upper-bound rows against their indices.
#[derive(Clone, Debug, Default)]
pub struct LpBuilder {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Vec<String>,
    eq_rows: Vec<(Vec<(usize, f64)>, f64)>,
    ub_rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares one variable and returns its index.
    pub fn var(&mut self, name: impl Into<String>, obj: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(obj);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        self.objective.len() - 1
    }

    /// Declares `count` variables `prefix[0..count]`; returns the first index.
    pub fn vars(&mut self, prefix: &str, count: usize, obj: f64, lower: f64, upper: f64) -> usize {
        let start = self.objective.len();
        for i in 0..count {
            self.var(format!("{prefix}[{i}]"), obj, lower, upper);
        }
        start
    }

    pub fn set_objective(&mut self, idx: usize, coeff: f64) {
        self.objective[idx] = coeff;
    }

    /// Adds `sum coeff_j z_j = rhs`.
    pub fn eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.eq_rows.push((coeffs, rhs));
    }

    /// Adds `sum coeff_j z_j <= rhs`.
    pub fn ub(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.ub_rows.push((coeffs, rhs));
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn build(self) -> Result<LpProblem> {
        let n = self.objective.len();
        if n == 0 {
            return Err(Error::Empty("LP with no variables"));
        }
        let dense = |rows: &[(Vec<(usize, f64)>, f64)]| -> Result<(DMatrix<f64>, DVector<f64>)> {
            let mut a = DMatrix::zeros(rows.len(), n);
            let mut b = DVector::zeros(rows.len());
            for (r, (coeffs, rhs)) in rows.iter().enumerate() {
                for &(j, v) in coeffs {
                    if j >= n {
                        return Err(Error::dim("LP row", format!("index < {n}"), j));
                    }
                    a[(r, j)] += v;
                }
                b[r] = *rhs;
            }
            Ok((a, b))
        };
        let (a_eq, b_eq) = dense(&self.eq_rows)?;
        let (a_ub, b_ub) = dense(&self.ub_rows)?;
        let p = LpProblem {
            objective: DVector::from_vec(self.objective),
            a_eq,
            b_eq,
            a_ub,
            b_ub,
            var_lower: DVector::from_vec(self.lower),
            var_upper: DVector::from_vec(self.upper),
            names: self.names,
        };
        p.validate()?;
        Ok(p)
    }
}

/// One symmetric-matrix-valued affine map `constant + sum_k z_k coeffs[k]`,
/// required positive semidefinite.
#[derive(Clone, Debug)]
pub struct LmiBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl LmiBlock {
    /// All matrices must be square, mutually same-size and symmetric.
    pub fn new(constant: DMatrix<f64>, coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = constant.nrows();
        for m in std::iter::once(&constant).chain(coeffs.iter()) {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::dim(
                    "LMI block",
                    format!("{d}x{d}"),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            let scale = 1.0 + m.amax();
            for i in 0..d {
                for j in (i + 1)..d {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                        return Err(Error::domain("LMI coefficient matrix is not symmetric"));
                    }
                }
            }
        }
        Ok(LmiBlock { constant, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    /// Evaluates the affine map at decision vector `z`.
    pub fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, c) in self.coeffs.iter().enumerate() {
            if z[k] != 0.0 {
                m += c * z[k];
            }
        }
        m
    }

    /// Minimum eigenvalue of the block at `z` (symmetric eigensolve).
    pub fn min_eigenvalue(&self, z: &DVector<f64>) -> f64 {
        min_eig_sym(&self.eval(z))
    }
}

/// Semidefinite program `min c'z` subject to LMI blocks `>= 0`, scalar
/// inequalities `A z <= b` and scalar equalities `A z = b`.
#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub objective: DVector<f64>,
    pub lmi_blocks: Vec<LmiBlock>,
    pub ineq: (DMatrix<f64>, DVector<f64>),
    pub eq: (DMatrix<f64>, DVector<f64>),
}

impl SdpProblem {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        for b in &self.lmi_blocks {
            if b.coeffs.len() != n {
                return Err(Error::dim("LMI coeffs", n, b.coeffs.len()));
            }
        }
        if self.ineq.0.ncols() != n && self.ineq.0.nrows() > 0 {
            return Err(Error::dim("sdp ineq", n, self.ineq.0.ncols()));
        }
        if self.eq.0.ncols() != n && self.eq.0.nrows() > 0 {
            return Err(Error::dim("sdp eq", n, self.eq.0.ncols()));
        }
        if self.ineq.0.nrows() != self.ineq.1.len() || self.eq.0.nrows() != self.eq.1.len() {
            return Err(Error::domain("sdp right-hand side length mismatch"));
        }
        Ok(())
    }

    /// Magnitude of the constraint data (right-hand sides and LMI
    /// constants).
    pub fn data_scale(&self) -> f64 {
        let mut s = 0.0f64;
        if !self.eq.1.is_empty() {
            s = s.max(self.eq.1.amax());
        }
        if !self.ineq.1.is_empty() {
            s = s.max(self.ineq.1.amax());
        }
        for b in &self.lmi_blocks {
            s = s.max(b.constant.amax());
        }
        s
    }

    /// Worst violation at `z`: linear rows as in the LP case, LMI blocks by
    /// the positive part of `-lambda_min`.
    pub fn max_residual(&self, z: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        if self.eq.0.nrows() > 0 {
            worst = worst.max((&self.eq.0 * z - &self.eq.1).amax());
        }
        if self.ineq.0.nrows() > 0 {
            let r = &self.ineq.0 * z - &self.ineq.1;
            worst = r.iter().fold(worst, |w, v| w.max(*v));
        }
        for b in &self.lmi_blocks {
            worst = worst.max(-b.min_eigenvalue(z));
        }
        worst
    }
}

/// A certified optimum: the primal point together with its recomputed worst
/// residual against the original problem data.
#[derive(Clone, Debug)]
pub struct OptimalPoint {
    pub primal: DVector<f64>,
    pub objective: f64,
    pub max_residual: f64,
    pub iterations: u32,
}

/// Outcome of a solve. The primal vector is present exactly when the status
/// is `Optimal`.
#[derive(Clone, Debug)]
pub enum SolveStatus {
    Optimal(OptimalPoint),
    Infeasible { iterations: u32 },
    Unbounded { iterations: u32 },
    NumericalFailure { detail: String },
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        matches!(self, SolveStatus::Optimal(_))
    }

    pub fn optimal(&self) -> Option<&OptimalPoint> {
        match self {
            SolveStatus::Optimal(p) => Some(p),
            _ => None,
        }
    }

    /// Unwraps the optimal point or converts the status into an error.
    pub fn into_optimal(self, what: &str) -> Result<OptimalPoint> {
        match self {
            SolveStatus::Optimal(p) => Ok(p),
            SolveStatus::Infeasible { .. } => Err(Error::Solver(format!("{what}: infeasible"))),
            SolveStatus::Unbounded { .. } => Err(Error::Solver(format!("{what}: unbounded"))),
            SolveStatus::NumericalFailure { detail } => Err(Error::Solver(format!(
                "{what}: numerical failure: {detail}"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SolveStatus::Optimal(_) => "optimal",
            SolveStatus::Infeasible { .. } => "infeasible",
            SolveStatus::Unbounded { .. } => "unbounded",
            SolveStatus::NumericalFailure { .. } => "numerical-failure",
        }
    }
}

/// Solves a linear program to feasibility tolerance `tol`.
///
/// An optimum is certified when its recomputed worst residual is at most
/// `tol * (1 + max |rhs|)`; anything looser downgrades to
/// [`SolveStatus::NumericalFailure`]. Deterministic: identical input
/// produces the identical status and point.
pub fn solve_lp(p: &LpProblem, tol: f64) -> Result<SolveStatus> {
    if tol <= 0.0 {
        return Err(Error::domain("solver tolerance must be positive"));
    }
    p.validate()?;

    let n = p.num_vars();
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for r in 0..p.a_eq.nrows() {
        rows.push((sparse_row(&p.a_eq, r), p.b_eq[r]));
    }
    let n_eq = rows.len();
    for r in 0..p.a_ub.nrows() {
        rows.push((sparse_row(&p.a_ub, r), p.b_ub[r]));
    }
    for j in 0..n {
        if p.var_lower[j].is_finite() {
            rows.push((vec![(j, -1.0)], -p.var_lower[j]));
        }
        if p.var_upper[j].is_finite() {
            rows.push((vec![(j, 1.0)], p.var_upper[j]));
        }
    }
    let n_ub = rows.len() - n_eq;

    let (a, b) = stack_rows(&rows, n);
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    if n_ub > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_ub));
    }

    let cost = CscMatrix::zeros((n, n));
    let q: Vec<f64> = p.objective.iter().copied().collect();
    let backend = run_backend(&cost, &q, &a, &b, &cones, tol);
    // residuals are judged relative to the data magnitude
    let accept = tol * (1.0 + p.data_scale());
    Ok(interpret(
        backend,
        accept,
        |z| p.max_residual(z),
        |z| p.objective.dot(z),
    ))
}

/// Solves a semidefinite program to feasibility tolerance `tol`.
///
/// On `Optimal`, every LMI block evaluated at the returned point has minimum
/// eigenvalue at least `-tol * (1 + data scale)`, with the scale taken over
/// right-hand sides and LMI constants.
pub fn solve_sdp(p: &SdpProblem, tol: f64) -> Result<SolveStatus> {
    if tol <= 0.0 {
        return Err(Error::domain("solver tolerance must be positive"));
    }
    p.validate()?;

    let n = p.num_vars();
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut row = 0usize;

    let (eq_a, eq_b) = &p.eq;
    if eq_a.nrows() > 0 {
        for r in 0..eq_a.nrows() {
            for c in 0..n {
                if eq_a[(r, c)] != 0.0 {
                    trips.push((row, c, eq_a[(r, c)]));
                }
            }
            b.push(eq_b[r]);
            row += 1;
        }
        cones.push(SupportedConeT::ZeroConeT(eq_a.nrows()));
    }
    let (ub_a, ub_b) = &p.ineq;
    if ub_a.nrows() > 0 {
        for r in 0..ub_a.nrows() {
            for c in 0..n {
                if ub_a[(r, c)] != 0.0 {
                    trips.push((row, c, ub_a[(r, c)]));
                }
            }
            b.push(ub_b[r]);
            row += 1;
        }
        cones.push(SupportedConeT::NonnegativeConeT(ub_a.nrows()));
    }
    // Each LMI block F0 + sum z_k Fk >= 0 enters as s = svec(F0) - sum z_k (-svec(Fk))
    // with s in the scaled PSD-triangle cone.
    for blk in &p.lmi_blocks {
        let d = blk.dim();
        let base = row;
        for v in svec(&blk.constant) {
            b.push(v);
        }
        for (k, coeff) in blk.coeffs.iter().enumerate() {
            for (offset, v) in svec(coeff).into_iter().enumerate() {
                if v != 0.0 {
                    trips.push((base + offset, k, -v));
                }
            }
        }
        row += svec_len(d);
        cones.push(SupportedConeT::PSDTriangleConeT(d));
    }

    let a = csc_from_triplets(row, n, trips);
    let cost = CscMatrix::zeros((n, n));
    let q: Vec<f64> = p.objective.iter().copied().collect();
    let backend = run_backend(&cost, &q, &a, &b, &cones, tol);
    let accept = tol * (1.0 + p.data_scale());
    Ok(interpret(
        backend,
        accept,
        |z| p.max_residual(z),
        |z| p.objective.dot(z),
    ))
}

struct BackendOutcome {
    status: BackendStatus,
    x: Vec<f64>,
    iterations: u32,
}

fn run_backend(
    cost: &CscMatrix<f64>,
    q: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    tol: f64,
) -> BackendOutcome {
    let settings = DefaultSettings {
        verbose: false,
        // Ask the backend for one digit more than we certify ourselves.
        tol_feas: (tol * 0.1).min(1e-8),
        tol_gap_abs: (tol * 0.1).min(1e-8),
        tol_gap_rel: 1e-8,
        max_iter: 200,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(cost, q, a, b, cones, settings);
    solver.solve();
    BackendOutcome {
        status: solver.solution.status,
        x: solver.solution.x.clone(),
        iterations: solver.solution.iterations,
    }
}

fn interpret(
    out: BackendOutcome,
    tol: f64,
    residual: impl Fn(&DVector<f64>) -> f64,
    objective: impl Fn(&DVector<f64>) -> f64,
) -> SolveStatus {
    match out.status {
        BackendStatus::Solved | BackendStatus::AlmostSolved => {
            let z = DVector::from_vec(out.x);
            let r = residual(&z);
            if r <= tol {
                SolveStatus::Optimal(OptimalPoint {
                    objective: objective(&z),
                    primal: z,
                    max_residual: r,
                    iterations: out.iterations,
                })
            } else {
                SolveStatus::NumericalFailure {
                    detail: format!(
                        "backend reported {:?} but residual {r:.3e} exceeds tol {tol:.1e}",
                        out.status
                    ),
                }
            }
        }
        BackendStatus::PrimalInfeasible | BackendStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible {
                iterations: out.iterations,
            }
        }
        BackendStatus::DualInfeasible | BackendStatus::AlmostDualInfeasible => {
            SolveStatus::Unbounded {
                iterations: out.iterations,
            }
        }
        other => SolveStatus::NumericalFailure {
            detail: format!("backend status {other:?}"),
        },
    }
}

fn sparse_row(m: &DMatrix<f64>, r: usize) -> Vec<(usize, f64)> {
    (0..m.ncols())
        .filter_map(|c| {
            let v = m[(r, c)];
            (v != 0.0).then_some((c, v))
        })
        .collect()
}

fn stack_rows(rows: &[(Vec<(usize, f64)>, f64)], n: usize) -> (CscMatrix<f64>, Vec<f64>) {
    let mut trips = Vec::new();
    let mut b = Vec::with_capacity(rows.len());
    for (r, (coeffs, rhs)) in rows.iter().enumerate() {
        for &(c, v) in coeffs {
            trips.push((r, c, v));
        }
        b.push(*rhs);
    }
    (csc_from_triplets(rows.len(), n, trips), b)
}

fn csc_from_triplets(
    nrows: usize,
    ncols: usize,
    mut trips: Vec<(usize, usize, f64)>,
) -> CscMatrix<f64> {
    trips.sort_by_key(|t| (t.1, t.0));
    let mut colptr = Vec::with_capacity(ncols + 1);
    let mut rowval = Vec::with_capacity(trips.len());
    let mut nzval = Vec::with_capacity(trips.len());
    colptr.push(0);
    let mut col = 0usize;
    for (r, c, v) in trips {
        while col < c {
            colptr.push(rowval.len());
            col += 1;
        }
        rowval.push(r);
        nzval.push(v);
    }
    while col < ncols {
        colptr.push(rowval.len());
        col += 1;
    }
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

pub(crate) fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Scaled upper-triangle vectorization matching the PSD triangle cone:
/// column-major upper triangle, off-diagonal entries scaled by sqrt(2).
pub(crate) fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(svec_len(d));
    let rt2 = std::f64::consts::SQRT_2;
    for j in 0..d {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { m[(i, j)] * rt2 });
        }
    }
    out
}

/// Minimum eigenvalue of a symmetric matrix (symmetrized defensively).
pub(crate) fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    eig.iter().copied().fold(f64::INFINITY, f64::min)
}
