//! Seeded closed-loop simulation and Monte Carlo verification.
//!
//! Rollout `i` of a batch draws from an independent ChaCha stream derived
//! from `(base_seed, i)`, so batches can be partitioned across worker
//! threads in any order and still produce bit-identical reports. With the
//! `parallel` feature (default) batches fan out with rayon; the `*_serial`
//! twins run the same code on one thread and exist for the benchmark suite
//! and for determinism cross-checks.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::noise::NoiseModel;
use crate::polyhedra::{vertices_2d, PolyhedralSet};
use crate::solver::{solve_lp, LpBuilder, SolveStatus, SolverConfig};
use crate::synth_model::LinearSystem;
use crate::{Error, Result};

/// 95% normal quantile used for every Wilson interval.
const WILSON_Z: f64 = 1.959963984540054;

/// One closed-loop rollout `x(t+1) = (A + B K) x(t) + w(t)`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// `(T+1) x n`, row `t` is the state at time `t`.
    pub states: DMatrix<f64>,
    pub seed: u64,
    /// Fingerprint of the gain that produced the rollout.
    pub controller_id: String,
    /// Per-step safe-set violations (empty when no set was supplied).
    pub violations: Vec<bool>,
}

/// Aggregated Monte Carlo evidence for invariance of a safe set.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloReport {
    pub rollouts: usize,
    pub horizon: usize,
    /// `survival[t]`: fraction of rollouts inside the set at *every* step
    /// up to and including `t`. Non-increasing in `t`.
    pub survival: Vec<f64>,
    pub survival_halfwidth: Vec<f64>,
    /// `instantaneous[t]`: fraction inside the set at step `t` regardless
    /// of history.
    pub instantaneous: Vec<f64>,
    pub instantaneous_halfwidth: Vec<f64>,
}

/// How rollouts pick their initial state.
#[derive(Clone, Debug)]
pub enum InitialStateRule {
    Fixed(DVector<f64>),
    /// Uniform choice among the given points, drawn from the rollout's own
    /// stream.
    UniformFromSet(Vec<DVector<f64>>),
}

/// One-step contractivity evidence at a probe point.
#[derive(Clone, Debug)]
pub struct ProbeFrequency {
    pub probe: DVector<f64>,
    pub successes: usize,
    pub draws: usize,
    pub frequency: f64,
    pub halfwidth: f64,
}

/// Expected-decrease check of the polyhedral Lyapunov function at one grid
/// point.
#[derive(Clone, Debug)]
pub struct EsipPoint {
    pub x: DVector<f64>,
    pub v_x: f64,
    pub mean_v_next: f64,
    /// `E_hat[V(x+)] - lambda V(x)`.
    pub margin: f64,
    pub std_error: f64,
    /// Margin exceeds `3 * std_error` (plus a 1e-10 grace for the
    /// zero-noise case).
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct EsipReport {
    pub lambda: f64,
    pub points: Vec<EsipPoint>,
    pub max_margin: f64,
    pub any_flagged: bool,
}

/// Simulates `horizon` steps from `x0`. Aborts with a diagnostic if the
/// state overflows to a non-finite value.
pub fn simulate(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    noise: &NoiseModel,
    x0: &DVector<f64>,
    horizon: usize,
    seed: u64,
    safe_set: Option<&PolyhedralSet>,
) -> Result<Trajectory> {
    simulate_stream(sys, gain, noise, x0, horizon, seed, 0, safe_set)
}

/// [`simulate`] on an explicit ChaCha stream: stream `i` of a base seed is
/// exactly rollout `i` of [`monte_carlo_invariance`] with a fixed initial
/// state, so dumped trajectories line up with batch reports.
#[allow(clippy::too_many_arguments)]
pub fn simulate_stream(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    noise: &NoiseModel,
    x0: &DVector<f64>,
    horizon: usize,
    seed: u64,
    stream: u64,
    safe_set: Option<&PolyhedralSet>,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    let cl = sys.closed_loop(gain)?;
    if noise.dim() != sys.state_dim() {
        return Err(Error::dim("noise dim", sys.state_dim(), noise.dim()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let raw = rollout_raw(&cl, noise, x0.clone(), horizon, &mut rng, safe_set);
    if let Some(step) = raw.diverged_at {
        return Err(Error::NonFinite { step });
    }
    Ok(Trajectory {
        states: raw.states,
        seed,
        controller_id: gain_fingerprint(gain),
        violations: raw.violations,
    })
}

struct RawRollout {
    states: DMatrix<f64>,
    violations: Vec<bool>,
    diverged_at: Option<usize>,
}

fn rollout_raw(
    cl: &DMatrix<f64>,
    noise: &NoiseModel,
    x0: DVector<f64>,
    horizon: usize,
    rng: &mut ChaCha12Rng,
    safe_set: Option<&PolyhedralSet>,
) -> RawRollout {
    let n = cl.nrows();
    let sampler = noise.sampler();
    let mut states = DMatrix::zeros(horizon + 1, n);
    let mut violations = vec![false; horizon + 1];
    let mut diverged_at = None;
    let violated = |x: &DVector<f64>| safe_set.is_some_and(|s| !s.contains(x).unwrap_or(false));
    states.row_mut(0).copy_from(&x0.transpose());
    violations[0] = violated(&x0);
    let mut x = x0;
    for t in 0..horizon {
        let w = sampler.draw(rng);
        x = cl * &x + w;
        if !x.iter().all(|v| v.is_finite()) {
            diverged_at = Some(t + 1);
            for v in violations.iter_mut().skip(t + 1) {
                *v = true;
            }
            break;
        }
        states.row_mut(t + 1).copy_from(&x.transpose());
        violations[t + 1] = violated(&x);
    }
    RawRollout {
        states,
        violations,
        diverged_at,
    }
}

/// Runs `rollouts` independent closed-loop simulations and aggregates
/// survival and instantaneous safe-set frequencies with Wilson 95%
/// half-widths. Rollouts that diverge count as violating from the point of
/// divergence onward.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_invariance(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    s: &PolyhedralSet,
    noise: &NoiseModel,
    rule: &InitialStateRule,
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    monte_carlo_impl(sys, gain, s, noise, rule, rollouts, horizon, seed, true)
}

/// Single-threaded twin of [`monte_carlo_invariance`]; same report
/// bit-for-bit. Kept public for the benchmark suite.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_invariance_serial(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    s: &PolyhedralSet,
    noise: &NoiseModel,
    rule: &InitialStateRule,
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    monte_carlo_impl(sys, gain, s, noise, rule, rollouts, horizon, seed, false)
}

#[allow(clippy::too_many_arguments)]
fn monte_carlo_impl(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    s: &PolyhedralSet,
    noise: &NoiseModel,
    rule: &InitialStateRule,
    rollouts: usize,
    horizon: usize,
    seed: u64,
    parallel: bool,
) -> Result<MonteCarloReport> {
    if rollouts < 100 {
        return Err(Error::domain(format!(
            "need at least 100 rollouts for interval estimates, got {rollouts}"
        )));
    }
    if horizon == 0 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    if s.dim() != sys.state_dim() {
        return Err(Error::dim("safe set dim", sys.state_dim(), s.dim()));
    }
    let cl = sys.closed_loop(gain)?;
    if noise.dim() != sys.state_dim() {
        return Err(Error::dim("noise dim", sys.state_dim(), noise.dim()));
    }
    if let InitialStateRule::UniformFromSet(points) = rule {
        if points.is_empty() {
            return Err(Error::Empty("initial-state point set"));
        }
    }

    let per_rollout = |i: usize| -> Vec<bool> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let x0 = match rule {
            InitialStateRule::Fixed(x) => x.clone(),
            InitialStateRule::UniformFromSet(points) => {
                let idx = rand::Rng::random_range(&mut rng, 0..points.len());
                points[idx].clone()
            }
        };
        rollout_raw(&cl, noise, x0, horizon, &mut rng, Some(s)).violations
    };
    let outcomes = run_indexed(rollouts, parallel, per_rollout);

    let mut survive_count = vec![0usize; horizon + 1];
    let mut instant_count = vec![0usize; horizon + 1];
    for violations in &outcomes {
        let mut alive = true;
        for t in 0..=horizon {
            if violations[t] {
                alive = false;
            } else {
                instant_count[t] += 1;
            }
            if alive {
                survive_count[t] += 1;
            }
        }
    }
    let m = rollouts as f64;
    Ok(MonteCarloReport {
        rollouts,
        horizon,
        survival: survive_count.iter().map(|c| *c as f64 / m).collect(),
        survival_halfwidth: survive_count
            .iter()
            .map(|c| wilson_halfwidth(*c, rollouts))
            .collect(),
        instantaneous: instant_count.iter().map(|c| *c as f64 / m).collect(),
        instantaneous_halfwidth: instant_count
            .iter()
            .map(|c| wilson_halfwidth(*c, rollouts))
            .collect(),
    })
}

/// For each probe `x` in the safe set, the frequency over `draws` noise
/// samples of `F((A + B K) x + w) <= lambda g`.
#[allow(clippy::too_many_arguments)]
pub fn one_step_contractivity(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    s: &PolyhedralSet,
    lambda: f64,
    noise: &NoiseModel,
    probes: &[DVector<f64>],
    draws: usize,
    seed: u64,
) -> Result<Vec<ProbeFrequency>> {
    crate::synth_model::check_lambda(lambda)?;
    if draws == 0 {
        return Err(Error::domain("need at least one draw"));
    }
    let cl = sys.closed_loop(gain)?;
    let shrunk = s.scale(lambda)?;
    for (i, p) in probes.iter().enumerate() {
        if !s.contains(p)? {
            return Err(Error::domain(format!(
                "probe {i} lies outside the safe set"
            )));
        }
    }
    let per_probe = |i: usize| -> ProbeFrequency {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let sampler = noise.sampler();
        let base = &cl * &probes[i];
        let mut successes = 0usize;
        for _ in 0..draws {
            let x_next = &base + sampler.draw(&mut rng);
            if shrunk.contains(&x_next).unwrap_or(false) {
                successes += 1;
            }
        }
        ProbeFrequency {
            probe: probes[i].clone(),
            successes,
            draws,
            frequency: successes as f64 / draws as f64,
            halfwidth: wilson_halfwidth(successes, draws),
        }
    };
    Ok(run_indexed(
        probes.len(),
        cfg!(feature = "parallel"),
        per_probe,
    ))
}

/// Estimates `E[V(x+)] - lambda V(x)` over a grid by averaging the
/// polyhedral Lyapunov value across `draws` noise samples at every point,
/// flagging points whose margin exceeds `3 * std_error`.
#[allow(clippy::too_many_arguments)]
pub fn esip_check(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    s: &PolyhedralSet,
    lambda: f64,
    noise: &NoiseModel,
    grid: &[DVector<f64>],
    draws: usize,
    seed: u64,
) -> Result<EsipReport> {
    crate::synth_model::check_lambda(lambda)?;
    if grid.is_empty() {
        return Err(Error::Empty("esip grid"));
    }
    if draws == 0 {
        return Err(Error::domain("need at least one draw"));
    }
    if s.g().iter().any(|g| *g <= 0.0) {
        return Err(Error::domain("esip check requires every g_i > 0"));
    }
    let cl = sys.closed_loop(gain)?;
    for (i, x) in grid.iter().enumerate() {
        if !s.contains(x)? {
            return Err(Error::domain(format!(
                "grid point {i} lies outside the safe set"
            )));
        }
    }
    let per_point = |i: usize| -> Result<EsipPoint> {
        let x = &grid[i];
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let sampler = noise.sampler();
        let base = &cl * x;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let v = s.lyapunov_value(&(&base + sampler.draw(&mut rng)))?;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / draws as f64;
        let variance = (sum_sq / draws as f64 - mean * mean).max(0.0);
        let std_error = (variance / draws as f64).sqrt();
        let v_x = s.lyapunov_value(x)?;
        let margin = mean - lambda * v_x;
        Ok(EsipPoint {
            x: x.clone(),
            v_x,
            mean_v_next: mean,
            margin,
            std_error,
            flagged: margin > 3.0 * std_error + 1e-10,
        })
    };
    let points: Vec<EsipPoint> = run_indexed(grid.len(), cfg!(feature = "parallel"), per_point)
        .into_iter()
        .collect::<Result<_>>()?;
    let max_margin = points
        .iter()
        .map(|p| p.margin)
        .fold(f64::NEG_INFINITY, f64::max);
    let any_flagged = points.iter().any(|p| p.flagged);
    Ok(EsipReport {
        lambda,
        points,
        max_margin,
        any_flagged,
    })
}

/// `max |eig(A + B K)|`.
pub fn spectral_radius(sys: &LinearSystem, gain: &DMatrix<f64>) -> Result<f64> {
    let cl = sys.closed_loop(gain)?;
    Ok(cl
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0f64, f64::max))
}

/// Boundary probe points for contractivity checks: the vertices when
/// `n = 2`, otherwise one support point per row direction plus the
/// Chebyshev center. Unbounded directions fall back to the projection of
/// the origin onto each facet. Points are deduplicated and
/// membership-filtered.
pub fn probe_points(s: &PolyhedralSet, cfg: &SolverConfig) -> Result<Vec<DVector<f64>>> {
    let mut points: Vec<DVector<f64>> = Vec::new();
    if s.dim() == 2 {
        for v in vertices_2d(s)? {
            points.push(DVector::from_vec(vec![v.x, v.y]));
        }
    } else {
        for i in 0..s.num_rows() {
            if let Some(p) = support_point(s, i, cfg)? {
                points.push(p);
            }
        }
        if let Some(center) = chebyshev_center(s, cfg)? {
            points.push(center);
        }
    }
    let mut unique = dedupe_members(s, points);
    if unique.is_empty() {
        // fall back to facet projections of the origin: they exist even
        // when every support LP is unbounded (halfspaces, slabs)
        let projections = (0..s.num_rows())
            .map(|i| {
                let row = s.f().row(i).transpose();
                let norm_sq = row.norm_squared();
                row * (s.g()[i] / norm_sq)
            })
            .collect();
        unique = dedupe_members(s, projections);
    }
    if unique.is_empty() {
        return Err(Error::Empty("no probe points found inside the set"));
    }
    Ok(unique)
}

fn dedupe_members(s: &PolyhedralSet, points: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let mut unique: Vec<DVector<f64>> = Vec::new();
    for p in points {
        if s.contains(&p).unwrap_or(false) && !unique.iter().any(|u| (u - &p).amax() < 1e-9) {
            unique.push(p);
        }
    }
    unique
}

/// Maximizes `F_i x` inside the set; `None` when that direction is
/// unbounded.
fn support_point(
    s: &PolyhedralSet,
    row: usize,
    cfg: &SolverConfig,
) -> Result<Option<DVector<f64>>> {
    let n = s.dim();
    let mut b = LpBuilder::new();
    let x0 = b.vars("x", n, 0.0, f64::NEG_INFINITY, f64::INFINITY);
    for j in 0..n {
        b.set_objective(x0 + j, -s.f()[(row, j)]);
    }
    for i in 0..s.num_rows() {
        let coeffs = (0..n)
            .filter(|j| s.f()[(i, *j)] != 0.0)
            .map(|j| (x0 + j, s.f()[(i, j)]))
            .collect();
        b.ub(coeffs, s.g()[i]);
    }
    match solve_lp(&b.build()?, cfg.lp_tol)? {
        SolveStatus::Optimal(opt) => Ok(Some(DVector::from_iterator(
            n,
            (0..n).map(|j| opt.primal[x0 + j]),
        ))),
        SolveStatus::Unbounded { .. } => Ok(None),
        SolveStatus::Infeasible { .. } => {
            Err(Error::Solver("probe LP infeasible: empty set".into()))
        }
        SolveStatus::NumericalFailure { detail } => Err(Error::Solver(detail)),
    }
}

/// Chebyshev center: the deepest point `max r: F_i x + ||F_i|| r <= g_i`.
fn chebyshev_center(s: &PolyhedralSet, cfg: &SolverConfig) -> Result<Option<DVector<f64>>> {
    let n = s.dim();
    let mut b = LpBuilder::new();
    let x0 = b.vars("x", n, 0.0, f64::NEG_INFINITY, f64::INFINITY);
    let r = b.var("r", -1.0, 0.0, f64::INFINITY);
    for i in 0..s.num_rows() {
        let mut coeffs: Vec<(usize, f64)> = (0..n)
            .filter(|j| s.f()[(i, *j)] != 0.0)
            .map(|j| (x0 + j, s.f()[(i, j)]))
            .collect();
        coeffs.push((r, s.f().row(i).norm()));
        b.ub(coeffs, s.g()[i]);
    }
    match solve_lp(&b.build()?, cfg.lp_tol)? {
        SolveStatus::Optimal(opt) => Ok(Some(DVector::from_iterator(
            n,
            (0..n).map(|j| opt.primal[x0 + j]),
        ))),
        SolveStatus::Unbounded { .. } => Ok(None),
        SolveStatus::Infeasible { .. } => {
            Err(Error::Solver("center LP infeasible: empty set".into()))
        }
        SolveStatus::NumericalFailure { detail } => Err(Error::Solver(detail)),
    }
}

/// Wilson score 95% half-width for `successes` out of `trials`.
pub fn wilson_halfwidth(successes: usize, trials: usize) -> f64 {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    (WILSON_Z / (1.0 + z2 / n)) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

fn gain_fingerprint(gain: &DMatrix<f64>) -> String {
    // FNV-1a over the gain bytes; stable within a build, which is all a
    // diagnostic label needs
    let mut h: u64 = 0xcbf29ce484222325;
    for v in gain.iter() {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("k-{:016x}", h)
}

#[cfg(feature = "parallel")]
fn run_indexed<T: Send>(
    count: usize,
    parallel: bool,
    f: impl Fn(usize) -> T + Send + Sync,
) -> Vec<T> {
    use rayon::prelude::*;
    if parallel {
        (0..count).into_par_iter().map(f).collect()
    } else {
        (0..count).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_indexed<T: Send>(
    count: usize,
    _parallel: bool,
    f: impl Fn(usize) -> T + Send + Sync,
) -> Vec<T> {
    (0..count).map(f).collect()
}
