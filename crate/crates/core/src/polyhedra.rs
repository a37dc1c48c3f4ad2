//! Polyhedral sets `S(F, g) = {x : F x <= g}`, the polyhedral Lyapunov
//! function `V(x) = max_i |F_i x / g_i|`, and Farkas containment
//! certificates.
//!
//! Containment of one polyhedron in another is decided row by row: the set
//! `S(F, g)` lies inside the halfspace `{x : H_i x <= h_i}` exactly when a
//! nonnegative multiplier vector `p` exists with `F' p = H_i'` and
//! `g' p <= h_i` (Farkas lemma, valid for nonempty `S`). Stacking the row
//! multipliers gives the certificate matrix `P >= 0` with `P F = H` and
//! `P g <= h`.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::solver::{solve_lp, LpBuilder, SolveStatus, SolverConfig};
use crate::{Error, Result};

/// Tolerance accepted on certificate equalities `PF = H` and slack
/// `Pg <= h`; matches the LP solver's feasibility tolerance.
pub const CONTAINMENT_TOL: f64 = 1e-8;

/// The polyhedron `{x : F x <= g}`. Rows of `F` must be nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyhedralSet {
    f: DMatrix<f64>,
    g: DVector<f64>,
}

impl PolyhedralSet {
    pub fn new(f: DMatrix<f64>, g: DVector<f64>) -> Result<Self> {
        if f.nrows() == 0 {
            return Err(Error::Empty("polyhedral set needs at least one row"));
        }
        if f.nrows() != g.len() {
            return Err(Error::dim("polyhedral set", f.nrows(), g.len()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("g must be finite"));
        }
        for i in 0..f.nrows() {
            if f.row(i).iter().all(|v| *v == 0.0) {
                return Err(Error::domain(format!("row {i} of F is all zero")));
            }
        }
        Ok(PolyhedralSet { f, g })
    }

    /// Convenience constructor from row-major data.
    pub fn from_rows(rows: &[Vec<f64>], g: &[f64]) -> Result<Self> {
        let q = rows.len();
        if q == 0 {
            return Err(Error::Empty("polyhedral set needs at least one row"));
        }
        let n = rows[0].len();
        let mut f = DMatrix::zeros(q, n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::dim("polyhedron row", n, r.len()));
            }
            for (j, v) in r.iter().enumerate() {
                f[(i, j)] = *v;
            }
        }
        Self::new(f, DVector::from_column_slice(g))
    }

    /// The axis-aligned box `|x_i| <= half_width` in `n` dimensions.
    pub fn symmetric_box(n: usize, half_width: f64) -> Self {
        let mut f = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            f[(i, i)] = 1.0;
            f[(n + i, i)] = -1.0;
        }
        PolyhedralSet {
            f,
            g: DVector::from_element(2 * n, half_width),
        }
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    /// Number of rows (constraints).
    pub fn num_rows(&self) -> usize {
        self.f.nrows()
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    /// Componentwise `F x <= g`, exact comparison.
    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(Error::dim("contains", self.dim(), x.len()));
        }
        let fx = &self.f * x;
        Ok(fx.iter().zip(self.g.iter()).all(|(v, gi)| v <= gi))
    }

    /// Per-row slack `g - F x` (nonnegative everywhere iff `x` is inside).
    pub fn slack(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("slack", self.dim(), x.len()));
        }
        Ok(&self.g - &self.f * x)
    }

    /// The shrunk set `S(F, lambda * g)` for `lambda` in `(0, 1]`.
    pub fn scale(&self, lambda: f64) -> Result<PolyhedralSet> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::domain(format!(
                "scale factor must lie in (0, 1], got {lambda}"
            )));
        }
        Ok(PolyhedralSet {
            f: self.f.clone(),
            g: &self.g * lambda,
        })
    }

    /// Polyhedral Lyapunov value `V(x) = max_i |F_i x / g_i|`.
    ///
    /// Requires every `g_i > 0`; then `V(0) = 0` and `V(x) <= 1` iff `x`
    /// lies in `S(F, g)` intersected with `S(-F, g)`.
    pub fn lyapunov_value(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dim("lyapunov_value", self.dim(), x.len()));
        }
        if self.g.iter().any(|v| *v <= 0.0) {
            return Err(Error::domain("lyapunov_value requires every g_i > 0"));
        }
        let fx = &self.f * x;
        Ok(fx
            .iter()
            .zip(self.g.iter())
            .map(|(v, gi)| (v / gi).abs())
            .fold(0.0f64, f64::max))
    }

    /// LP feasibility check: does any point satisfy `F x <= g`?
    pub fn is_nonempty(&self, cfg: &SolverConfig) -> Result<bool> {
        let mut b = LpBuilder::new();
        let x0 = b.vars("x", self.dim(), 0.0, f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..self.num_rows() {
            let coeffs = (0..self.dim())
                .filter(|j| self.f[(i, *j)] != 0.0)
                .map(|j| (x0 + j, self.f[(i, j)]))
                .collect();
            b.ub(coeffs, self.g[i]);
        }
        match solve_lp(&b.build()?, cfg.lp_tol)? {
            SolveStatus::Optimal(_) => Ok(true),
            SolveStatus::Infeasible { .. } => Ok(false),
            other => Err(Error::Solver(format!(
                "feasibility check returned {}",
                other.label()
            ))),
        }
    }
}

/// Nonnegative row-multiplier matrix witnessing `S(F, g)` inside
/// `{x : H x <= h}`: `P F = H` and `P g <= h` within [`CONTAINMENT_TOL`].
#[derive(Clone, Debug)]
pub struct ContainmentCertificate {
    /// `q_outer x q_inner`, entrywise nonnegative.
    pub p: DMatrix<f64>,
    /// `h - P g`, nonnegative within tolerance.
    pub slack: DVector<f64>,
}

/// Outcome of [`check_containment`].
#[derive(Clone, Debug)]
pub enum Containment {
    Certified(ContainmentCertificate),
    NotContained,
}

impl Containment {
    pub fn certificate(&self) -> Option<&ContainmentCertificate> {
        match self {
            Containment::Certified(c) => Some(c),
            Containment::NotContained => None,
        }
    }

    pub fn is_certified(&self) -> bool {
        matches!(self, Containment::Certified(_))
    }
}

/// Decides `inner subset of {x : H x <= h}` by one small LP per row of `H`:
/// minimize `g' p` over `p >= 0` with `F' p = H_i'`, then compare the
/// optimum against `h_i`.
///
/// Sound only for nonempty `inner`; emptiness is the caller's
/// responsibility and is not re-checked here.
pub fn check_containment(
    inner: &PolyhedralSet,
    h_mat: &DMatrix<f64>,
    h_vec: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<Containment> {
    if h_mat.ncols() != inner.dim() {
        return Err(Error::dim("check_containment", inner.dim(), h_mat.ncols()));
    }
    if h_mat.nrows() != h_vec.len() {
        return Err(Error::dim(
            "check_containment h",
            h_mat.nrows(),
            h_vec.len(),
        ));
    }
    let q_in = inner.num_rows();
    let mut p = DMatrix::zeros(h_mat.nrows(), q_in);
    for i in 0..h_mat.nrows() {
        let mut b = LpBuilder::new();
        let pv = b.vars("p", q_in, 0.0, 0.0, f64::INFINITY);
        for (k, gk) in inner.g().iter().enumerate() {
            b.set_objective(pv + k, *gk);
        }
        // F' p = H_i'
        for j in 0..inner.dim() {
            let coeffs = (0..q_in)
                .filter(|k| inner.f()[(*k, j)] != 0.0)
                .map(|k| (pv + k, inner.f()[(k, j)]))
                .collect();
            b.eq(coeffs, h_mat[(i, j)]);
        }
        match solve_lp(&b.build()?, cfg.lp_tol)? {
            SolveStatus::Optimal(opt) => {
                if opt.objective > h_vec[i] + CONTAINMENT_TOL {
                    return Ok(Containment::NotContained);
                }
                for k in 0..q_in {
                    p[(i, k)] = opt.primal[pv + k].max(0.0);
                }
            }
            // H_i is not in the cone of the rows of F: some direction of
            // inner is unbounded along H_i.
            SolveStatus::Infeasible { .. } => return Ok(Containment::NotContained),
            // An unbounded multiplier LP certifies an empty inner set,
            // which violates the caller contract.
            SolveStatus::Unbounded { .. } => {
                return Err(Error::Solver(
                    "containment LP unbounded: inner set is empty".into(),
                ))
            }
            SolveStatus::NumericalFailure { detail } => return Err(Error::Solver(detail)),
        }
    }
    let slack = h_vec - &p * inner.g();
    Ok(Containment::Certified(ContainmentCertificate { p, slack }))
}

/// Vertices of a bounded 2-D polyhedron by pairwise row intersection.
///
/// Used for probe-point selection in simulation; higher dimensions are out
/// of scope. Returned vertices are deduplicated and sorted by angle around
/// their centroid.
pub fn vertices_2d(s: &PolyhedralSet) -> Result<Vec<Vector2<f64>>> {
    if s.dim() != 2 {
        return Err(Error::dim("vertices_2d", 2usize, s.dim()));
    }
    let q = s.num_rows();
    let mut verts: Vec<Vector2<f64>> = Vec::new();
    for i in 0..q {
        for j in (i + 1)..q {
            let (a1, b1, c1) = (s.f()[(i, 0)], s.f()[(i, 1)], s.g()[i]);
            let (a2, b2, c2) = (s.f()[(j, 0)], s.f()[(j, 1)], s.g()[j]);
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-12 {
                continue;
            }
            let x = (c1 * b2 - c2 * b1) / det;
            let y = (a1 * c2 - a2 * c1) / det;
            let v = DVector::from_vec(vec![x, y]);
            let inside = s
                .slack(&v)?
                .iter()
                .all(|sl| *sl >= -1e-9 * (1.0 + s.g().amax()));
            if inside
                && !verts
                    .iter()
                    .any(|w| (w.x - x).abs() + (w.y - y).abs() < 1e-9)
            {
                verts.push(Vector2::new(x, y));
            }
        }
    }
    if verts.len() > 2 {
        let cx = verts.iter().map(|v| v.x).sum::<f64>() / verts.len() as f64;
        let cy = verts.iter().map(|v| v.y).sum::<f64>() / verts.len() as f64;
        verts.sort_by(|a, b| {
            let ta = (a.y - cy).atan2(a.x - cx);
            let tb = (b.y - cy).atan2(b.x - cx);
            ta.partial_cmp(&tb).unwrap()
        });
    }
    Ok(verts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> PolyhedralSet {
        PolyhedralSet::symmetric_box(2, 1.0)
    }

    #[test]
    fn contains_basics() {
        let s = PolyhedralSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 1.0]).unwrap();
        assert!(s.contains(&DVector::from_vec(vec![0.5, -0.3])).unwrap());
        assert!(!s.contains(&DVector::from_vec(vec![1.5, 0.0])).unwrap());
    }

    #[test]
    fn contains_scaled_state_bound_row() {
        // x_2 <= 0.1 normalized to F = [0, 10, 0, 0], g = 1
        let s = PolyhedralSet::from_rows(&[vec![0.0, 10.0, 0.0, 0.0]], &[1.0]).unwrap();
        let x = DVector::from_vec(vec![3.0, 0.05, -7.0, 2.0]);
        assert!(s.contains(&x).unwrap());
    }

    #[test]
    fn scale_shrinks_g() {
        let s = PolyhedralSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[2.0, 4.0]).unwrap();
        let t = s.scale(0.98).unwrap();
        assert!((t.g()[0] - 1.96).abs() < 1e-15);
        assert!((t.g()[1] - 3.92).abs() < 1e-15);
        let id = s.scale(1.0).unwrap();
        assert_eq!(id, s);
        assert!(s.scale(0.0).is_err());
        assert!(s.scale(1.5).is_err());
    }

    #[test]
    fn lyapunov_values() {
        let s = PolyhedralSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 1.0]).unwrap();
        let v = s
            .lyapunov_value(&DVector::from_vec(vec![0.5, -0.8]))
            .unwrap();
        assert!((v - 0.8).abs() < 1e-15);
        assert_eq!(s.lyapunov_value(&DVector::zeros(2)).unwrap(), 0.0);

        let s2 = PolyhedralSet::from_rows(&[vec![2.0, 0.0]], &[4.0]).unwrap();
        let v2 = s2
            .lyapunov_value(&DVector::from_vec(vec![3.0, 7.0]))
            .unwrap();
        assert!((v2 - 1.5).abs() < 1e-15);

        let bad = PolyhedralSet::from_rows(&[vec![1.0]], &[-1.0]).unwrap();
        assert!(bad.lyapunov_value(&DVector::zeros(1)).is_err());
    }

    #[test]
    fn containment_unit_box_inside_halfspace() {
        let cfg = SolverConfig::default();
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let inside =
            check_containment(&unit_box(), &h, &DVector::from_vec(vec![2.0]), &cfg).unwrap();
        let cert = inside.certificate().expect("contained");
        // PF = H, Pg <= h, P >= 0
        let pf = &cert.p * unit_box().f();
        assert!((pf - &h).amax() <= CONTAINMENT_TOL * 10.0);
        assert!(cert.p.iter().all(|v| *v >= 0.0));
        assert!(cert.slack[0] >= -CONTAINMENT_TOL);

        let outside =
            check_containment(&unit_box(), &h, &DVector::from_vec(vec![1.0]), &cfg).unwrap();
        assert!(!outside.is_certified());
    }

    #[test]
    fn containment_identity_certificate() {
        let cfg = SolverConfig::default();
        let s = unit_box();
        let res = check_containment(&s, s.f(), s.g(), &cfg).unwrap();
        let cert = res.certificate().expect("self-containment");
        // any valid certificate must reproduce F and respect g; the
        // identity is one witness, the LP may return an equivalent one
        assert!(((&cert.p * s.f()) - s.f()).amax() <= 1e-7);
        assert!((&cert.p * s.g() - s.g()).max() <= 1e-7);
    }

    #[test]
    fn vertices_of_unit_box() {
        let wrong_dim = vertices_2d(&PolyhedralSet::symmetric_box(3, 1.0));
        assert!(wrong_dim.is_err());
        let verts = vertices_2d(&unit_box()).unwrap();
        assert_eq!(verts.len(), 4);
        for v in &verts {
            assert!((v.x.abs() - 1.0).abs() < 1e-9);
            assert!((v.y.abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn slack_matches_contains() {
        let s = unit_box();
        for x in [
            DVector::from_vec(vec![0.3, -0.9]),
            DVector::from_vec(vec![1.2, 0.0]),
            DVector::from_vec(vec![-1.0, 1.0]),
        ] {
            let inside = s.contains(&x).unwrap();
            let all_nonneg = s.slack(&x).unwrap().iter().all(|v| *v >= 0.0);
            assert_eq!(inside, all_nonneg);
        }
    }
}
