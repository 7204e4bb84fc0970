//! Tensor grids on the flattened half space, quadrature, spectral
//! differentiation, mixed space-time norms, and CSV field serialization.
//!
//! The spatial variable lives on a d-dimensional torus of period `L` sampled
//! at `N` equispaced nodes per axis (`d` is 1 or 2); the time-like variable
//! (depth into the half space) lives on a graded node set `0 = t_0 < t_1 <
//! ... < t_{K-1} = T`, geometrically clustered near `t = 0` where semigroup
//! kernels are steep. Quadrature is trapezoid in t and uniform-weight
//! (spectrally accurate) in x.
//!
//! Flattened index convention for d = 2: a node `(j_1, j_2)` maps to
//! `j_1 + N * j_2` (axis 1 fastest). All matrices built here and in the
//! operator modules act on vectors in this flattened order.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{HelmError, Result};

/// Node policy for the time-like axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePolicy {
    /// Truncation horizon `T`; the last node lands exactly on it.
    pub t_horizon: f64,
    /// Number of nodes, including both endpoints.
    pub count: usize,
    /// Ratio between consecutive interval lengths; 1 gives a uniform grid.
    pub grading_ratio: f64,
}

/// Tensor grid over the flattened half space.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfGrid {
    d: usize,
    n: usize,
    l: f64,
    t_nodes: Vec<f64>,
    t_weights: Vec<f64>,
}

/// Build a grid: `n` even nodes per x-axis over period `l`, and a
/// geometrically graded time axis with the given policy.
///
/// With ratio `rho > 1` and `M = count - 1` intervals the first interval is
/// `T (rho - 1) / (rho^M - 1)` and each subsequent interval is `rho` times
/// the previous one, so the nodes follow the geometric-series closed form
/// `t_j = T (rho^j - 1) / (rho^M - 1)`; the last node is pinned to `T`
/// exactly. Ratio 1 gives the uniform grid.
pub fn make_grid(d: usize, n: usize, l: f64, policy: TimePolicy) -> Result<HalfGrid> {
    if !(1..=2).contains(&d) {
        return Err(HelmError::Config(format!("d must be 1 or 2, got {d}")));
    }
    if !n.is_multiple_of(2) || n < 8 {
        return Err(HelmError::Config(format!("n must be even and >= 8, got {n}")));
    }
    if !(l.is_finite() && l > 0.0) {
        return Err(HelmError::Config(format!("period l must be positive, got {l}")));
    }
    let TimePolicy {
        t_horizon: t,
        count,
        grading_ratio: rho,
    } = policy;
    if !(t.is_finite() && t > 0.0) {
        return Err(HelmError::Config(format!("t_horizon must be positive, got {t}")));
    }
    if count < 2 {
        return Err(HelmError::Config(format!("count must be >= 2, got {count}")));
    }
    if !(rho.is_finite() && rho >= 1.0) {
        return Err(HelmError::Config(format!(
            "grading_ratio must be >= 1, got {rho}"
        )));
    }
    let m = count - 1;
    let mut t_nodes = Vec::with_capacity(count);
    if rho == 1.0 {
        for j in 0..count {
            t_nodes.push(t * j as f64 / m as f64);
        }
    } else {
        // t_j = T (rho^j - 1) / (rho^M - 1), evaluated through expm1-style
        // differences for stability at ratios close to 1.
        let log_rho = rho.ln();
        let denom = (m as f64 * log_rho).exp_m1();
        for j in 0..count {
            t_nodes.push(t * (j as f64 * log_rho).exp_m1() / denom);
        }
    }
    t_nodes[0] = 0.0;
    t_nodes[m] = t;
    for w in t_nodes.windows(2) {
        if w[1] <= w[0] || w[1].is_nan() {
            return Err(HelmError::Config(format!(
                "time nodes not strictly increasing near t = {}",
                w[0]
            )));
        }
    }
    HalfGrid::with_nodes(d, n, l, t_nodes)
}

impl HalfGrid {
    /// Build a grid from an explicit strictly increasing node list starting
    /// at 0. Quadrature weights are the trapezoid weights of the node set.
    pub fn with_nodes(d: usize, n: usize, l: f64, t_nodes: Vec<f64>) -> Result<HalfGrid> {
        if !(1..=2).contains(&d) {
            return Err(HelmError::Config(format!("d must be 1 or 2, got {d}")));
        }
        if !n.is_multiple_of(2) || n < 4 {
            return Err(HelmError::Config(format!("n must be even and >= 4, got {n}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(HelmError::Config(format!("period l must be positive, got {l}")));
        }
        if t_nodes.len() < 2 || t_nodes[0] != 0.0 {
            return Err(HelmError::Config(
                "time nodes must start at 0 and contain at least 2 entries".into(),
            ));
        }
        for w in t_nodes.windows(2) {
            if !(w[1].is_finite() && w[1] > w[0]) {
                return Err(HelmError::Config(
                    "time nodes must be finite and strictly increasing".into(),
                ));
            }
        }
        let t_weights = trapezoid_weights(&t_nodes);
        Ok(HalfGrid {
            d,
            n,
            l,
            t_nodes,
            t_weights,
        })
    }

    /// Spatial boundary dimension (1 or 2).
    pub fn d(&self) -> usize {
        self.d
    }

    /// Nodes per x-axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of x-nodes, `n^d`.
    pub fn nx(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Spatial period.
    pub fn l(&self) -> f64 {
        self.l
    }

    /// Spatial mesh width `L / N`.
    pub fn h(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Uniform quadrature weight of one x-node, `h^d`.
    pub fn x_weight(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    /// Time nodes (first entry 0, last entry the horizon).
    pub fn t_nodes(&self) -> &[f64] {
        &self.t_nodes
    }

    /// Trapezoid quadrature weights matching `t_nodes`.
    pub fn t_weights(&self) -> &[f64] {
        &self.t_weights
    }

    /// Number of time nodes.
    pub fn t_count(&self) -> usize {
        self.t_nodes.len()
    }

    /// Truncation horizon `T`.
    pub fn t_horizon(&self) -> f64 {
        *self.t_nodes.last().unwrap()
    }

    /// The `n` nodes of one x-axis.
    pub fn x_axis(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.n).map(|j| j as f64 * h).collect()
    }

    /// Coordinates of all `n^d` x-nodes in flattened order, row `i` holding
    /// the d coordinates of node `i`.
    pub fn x_nodes(&self) -> Array2<f64> {
        let nx = self.nx();
        let h = self.h();
        let mut out = Array2::zeros((nx, self.d));
        for i in 0..nx {
            let mut rest = i;
            for axis in 0..self.d {
                let j = rest % self.n;
                rest /= self.n;
                out[(i, axis)] = j as f64 * h;
            }
        }
        out
    }

    /// True when two grids index the same sample set exactly.
    pub fn compatible(&self, other: &HalfGrid) -> bool {
        self == other
    }
}

/// Trapezoid weights for a strictly increasing node list.
pub fn trapezoid_weights(t_nodes: &[f64]) -> Vec<f64> {
    let k = t_nodes.len();
    let mut w = vec![0.0; k];
    w[0] = 0.5 * (t_nodes[1] - t_nodes[0]);
    w[k - 1] = 0.5 * (t_nodes[k - 1] - t_nodes[k - 2]);
    for j in 1..k - 1 {
        w[j] = 0.5 * (t_nodes[j + 1] - t_nodes[j - 1]);
    }
    w
}

/// Fourier differentiation matrix on `n` equispaced nodes of a period-`l`
/// torus (`n` even), with the unresolved sawtooth mode zeroed.
///
/// Entries: `D[j,k] = (pi/l) (-1)^(j-k) cot(pi (j-k) / n)` off the diagonal,
/// zero on it (and exactly zero when `j - k = n/2`, where the cotangent
/// vanishes). Built skew-symmetric by construction: the lower triangle is
/// computed and mirrored with a sign flip, so `D^T = -D` holds exactly in
/// floating point. Resolved Fourier modes (|wavenumber index| < n/2)
/// differentiate exactly; the constant and sawtooth vectors are annihilated.
pub fn diff_matrix_1d(n: usize, l: f64) -> Array2<f64> {
    assert!(n >= 2 && n.is_multiple_of(2), "diff matrix needs even n >= 2");
    let scale = PI / l;
    let mut d = Array2::zeros((n, n));
    for j in 0..n {
        for k in 0..j {
            let m = j - k;
            let val = if 2 * m == n {
                0.0
            } else {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                sign * scale / (PI * m as f64 / n as f64).tan()
            };
            d[(j, k)] = val;
            d[(k, j)] = -val;
        }
    }
    d
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for k in 0..ac {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for r in 0..br {
                for s in 0..bc {
                    out[(i * br + r, k * bc + s)] = aik * b[(r, s)];
                }
            }
        }
    }
    out
}

/// Per-axis spectral differentiation matrices on the flattened `n^d` lattice
/// (one `nx`-by-`nx` matrix per axis, in the flattened index convention).
pub fn spectral_gradient(grid: &HalfGrid) -> Vec<Array2<f64>> {
    let d1 = diff_matrix_1d(grid.n(), grid.l());
    match grid.d() {
        1 => vec![d1],
        2 => {
            let eye = Array2::eye(grid.n());
            vec![kron(&eye, &d1), kron(&d1, &eye)]
        }
        _ => unreachable!("grid dimension validated at construction"),
    }
}

/// Second-order finite-difference matrix for d/dt on an arbitrary strictly
/// increasing node set: three-point nonuniform stencils in the interior,
/// one-sided three-point stencils at both ends. Each row's diagonal entry is
/// defined as minus the sum of its off-diagonal entries, so the matrix
/// annihilates constants exactly in floating point.
pub fn time_fd_matrix(t_nodes: &[f64]) -> Result<Array2<f64>> {
    let k = t_nodes.len();
    if k < 3 {
        return Err(HelmError::Config(
            "time finite differences need at least 3 nodes".into(),
        ));
    }
    let mut m = Array2::zeros((k, k));
    // Left end: nodes 0, 1, 2.
    {
        let h1 = t_nodes[1] - t_nodes[0];
        let h2 = t_nodes[2] - t_nodes[1];
        let c1 = (h1 + h2) / (h1 * h2);
        let c2 = -h1 / (h2 * (h1 + h2));
        m[(0, 1)] = c1;
        m[(0, 2)] = c2;
        m[(0, 0)] = -(c1 + c2);
    }
    // Interior rows.
    for j in 1..k - 1 {
        let h1 = t_nodes[j] - t_nodes[j - 1];
        let h2 = t_nodes[j + 1] - t_nodes[j];
        let cm = -h2 / (h1 * (h1 + h2));
        let cp = h1 / (h2 * (h1 + h2));
        m[(j, j - 1)] = cm;
        m[(j, j + 1)] = cp;
        m[(j, j)] = -(cm + cp);
    }
    // Right end: nodes k-3, k-2, k-1.
    {
        let g1 = t_nodes[k - 1] - t_nodes[k - 2];
        let g2 = t_nodes[k - 2] - t_nodes[k - 3];
        let c1 = -(g1 + g2) / (g1 * g2);
        let c2 = g1 / (g2 * (g1 + g2));
        m[(k - 1, k - 2)] = c1;
        m[(k - 1, k - 3)] = c2;
        m[(k - 1, k - 1)] = -(c1 + c2);
    }
    Ok(m)
}

/// Mixed-norm exponent pair: outer exponent `q` in time, inner exponent `r`
/// in space; both in (1, infinity]. Infinite exponents select suprema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedNormSpec {
    q: f64,
    r: f64,
}

impl MixedNormSpec {
    pub fn new(q: f64, r: f64) -> Result<MixedNormSpec> {
        for (name, v) in [("q", q), ("r", r)] {
            if v <= 1.0 || v.is_nan() {
                return Err(HelmError::Config(format!(
                    "exponent {name} must lie in (1, inf], got {v}"
                )));
            }
        }
        Ok(MixedNormSpec { q, r })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Conjugate exponent `q' = q / (q - 1)` (1 when `q` is infinite).
    pub fn q_conjugate(&self) -> f64 {
        if self.q.is_infinite() {
            1.0
        } else {
            self.q / (self.q - 1.0)
        }
    }

    /// Conjugate exponent `r' = r / (r - 1)` (1 when `r` is infinite).
    pub fn r_conjugate(&self) -> f64 {
        if self.r.is_infinite() {
            1.0
        } else {
            self.r / (self.r - 1.0)
        }
    }
}

/// Sampled field on a [`HalfGrid`]: one or more scalar components, each of
/// shape `(t_count, nx)` (row `k` is the t = t_k slice in flattened x order).
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceField {
    grid: HalfGrid,
    components: Vec<Array2<f64>>,
}

impl HalfSpaceField {
    /// Wrap components, validating shapes and finiteness.
    pub fn new(grid: HalfGrid, components: Vec<Array2<f64>>) -> Result<HalfSpaceField> {
        if components.is_empty() {
            return Err(HelmError::Shape("field needs at least one component".into()));
        }
        let want = (grid.t_count(), grid.nx());
        for (c, comp) in components.iter().enumerate() {
            if comp.dim() != want {
                return Err(HelmError::Shape(format!(
                    "component {c} has shape {:?}, grid wants {:?}",
                    comp.dim(),
                    want
                )));
            }
            if !comp.iter().all(|v| v.is_finite()) {
                return Err(HelmError::Shape(format!(
                    "component {c} contains non-finite samples"
                )));
            }
        }
        Ok(HalfSpaceField { grid, components })
    }

    /// Single-component field.
    pub fn scalar(grid: HalfGrid, values: Array2<f64>) -> Result<HalfSpaceField> {
        HalfSpaceField::new(grid, vec![values])
    }

    /// All-zero field with `ncomp` components.
    pub fn zeros(grid: HalfGrid, ncomp: usize) -> HalfSpaceField {
        let shape = (grid.t_count(), grid.nx());
        HalfSpaceField {
            grid,
            components: (0..ncomp).map(|_| Array2::zeros(shape)).collect(),
        }
    }

    pub fn grid(&self) -> &HalfGrid {
        &self.grid
    }

    pub fn ncomp(&self) -> usize {
        self.components.len()
    }

    pub fn comp(&self, c: usize) -> &Array2<f64> {
        &self.components[c]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut Array2<f64> {
        &mut self.components[c]
    }

    pub fn components(&self) -> &[Array2<f64>] {
        &self.components
    }

    pub fn into_components(self) -> Vec<Array2<f64>> {
        self.components
    }

    /// Pointwise Euclidean magnitude across components, shape `(t_count, nx)`.
    pub fn magnitude(&self) -> Array2<f64> {
        let mut acc = Array2::<f64>::zeros(self.components[0].dim());
        for comp in &self.components {
            acc.zip_mut_with(comp, |a, v| *a += v * v);
        }
        acc.mapv_into(f64::sqrt)
    }

    /// `self + alpha * other`, grids and component counts must match.
    pub fn axpy(&self, alpha: f64, other: &HalfSpaceField) -> Result<HalfSpaceField> {
        if !self.grid.compatible(&other.grid) || self.ncomp() != other.ncomp() {
            return Err(HelmError::Shape(
                "field combination needs matching grids and component counts".into(),
            ));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a + &(b * alpha))
            .collect();
        HalfSpaceField::new(self.grid.clone(), components)
    }

    pub fn add(&self, other: &HalfSpaceField) -> Result<HalfSpaceField> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &HalfSpaceField) -> Result<HalfSpaceField> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> HalfSpaceField {
        HalfSpaceField {
            grid: self.grid.clone(),
            components: self.components.iter().map(|c| c * alpha).collect(),
        }
    }

    /// Apply an `nx`-by-`nx` matrix to every t-slice of every component.
    pub fn apply_matrix(&self, m: &Array2<f64>) -> HalfSpaceField {
        assert_eq!(m.dim(), (self.grid.nx(), self.grid.nx()));
        HalfSpaceField {
            grid: self.grid.clone(),
            components: self.components.iter().map(|c| c.dot(&m.t())).collect(),
        }
    }

    /// Apply a `t_count`-by-`t_count` matrix along the time axis (used for
    /// finite-difference time derivatives).
    pub fn apply_time_matrix(&self, m: &Array2<f64>) -> HalfSpaceField {
        assert_eq!(m.dim(), (self.grid.t_count(), self.grid.t_count()));
        HalfSpaceField {
            grid: self.grid.clone(),
            components: self.components.iter().map(|c| m.dot(c)).collect(),
        }
    }
}

/// Mixed norm `( sum_k w_k (h^d sum_j |F(j, t_k)|^r)^(q/r) )^(1/q)` with the
/// pointwise Euclidean magnitude across components; infinite exponents
/// replace the corresponding sum by a maximum. Shape consistency is
/// guaranteed by the field constructor.
pub fn mixed_norm(field: &HalfSpaceField, spec: &MixedNormSpec) -> f64 {
    let mag = field.magnitude();
    let hx = field.grid().x_weight();
    let r = spec.r();
    let q = spec.q();
    let slice_norms: Vec<f64> = mag
        .rows()
        .into_iter()
        .map(|row| {
            if r.is_infinite() {
                row.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            } else {
                let s: f64 = row.iter().map(|v| v.abs().powf(r)).sum();
                (hx * s).powf(1.0 / r)
            }
        })
        .collect();
    if q.is_infinite() {
        slice_norms.into_iter().fold(0.0f64, f64::max)
    } else {
        let s: f64 = field
            .grid()
            .t_weights()
            .iter()
            .zip(&slice_norms)
            .map(|(w, v)| w * v.powf(q))
            .sum();
        s.powf(1.0 / q)
    }
}

/// Mixed norm of the space-time gradient `(D w, dw/dt)` of a scalar field,
/// with the time derivative taken by second-order finite differences on the
/// grid nodes (one-sided at the endpoints).
pub fn gradient_mixed_norm(w: &HalfSpaceField, spec: &MixedNormSpec) -> Result<f64> {
    let grad = space_time_gradient(w)?;
    Ok(mixed_norm(&grad, spec))
}

/// The `(d+1)`-component field `(D_1 w, ..., D_d w, dw/dt)` of a scalar
/// field: spectral derivatives in x, second-order finite differences in t.
pub fn space_time_gradient(w: &HalfSpaceField) -> Result<HalfSpaceField> {
    if w.ncomp() != 1 {
        return Err(HelmError::Shape(
            "space-time gradient takes a scalar field".into(),
        ));
    }
    let grid = w.grid().clone();
    let fd = time_fd_matrix(grid.t_nodes())?;
    let mut comps = Vec::with_capacity(grid.d() + 1);
    for dm in spectral_gradient(&grid) {
        comps.push(w.comp(0).dot(&dm.t()));
    }
    comps.push(fd.dot(w.comp(0)));
    HalfSpaceField::new(grid, comps)
}

/// Space-time pairing: trapezoid in t, uniform weight in x, summed over
/// components (the discrete `L^2` inner product of the slab; a dot product
/// for vector fields).
pub fn l2_inner(a: &HalfSpaceField, b: &HalfSpaceField) -> Result<f64> {
    if !a.grid().compatible(b.grid()) || a.ncomp() != b.ncomp() {
        return Err(HelmError::Shape(
            "pairing needs matching grids and component counts".into(),
        ));
    }
    let hx = a.grid().x_weight();
    let weights = a.grid().t_weights();
    let mut total = 0.0;
    for c in 0..a.ncomp() {
        let ac = a.comp(c);
        let bc = b.comp(c);
        for (k, w) in weights.iter().enumerate() {
            let mut s = 0.0;
            for (x, y) in ac.row(k).iter().zip(bc.row(k).iter()) {
                s += x * y;
            }
            total += w * hx * s;
        }
    }
    Ok(total)
}

/// Write a field as CSV with header `t,x1[,x2],component,value`, one row per
/// sample, 17 significant digits (round-trip exact for f64).
pub fn write_field(field: &HalfSpaceField, path: &Path) -> Result<()> {
    let grid = field.grid();
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "x1".to_string()];
    if grid.d() == 2 {
        header.push("x2".to_string());
    }
    header.push("component".into());
    header.push("value".into());
    wtr.write_record(&header)?;
    let xs = grid.x_nodes();
    for (k, t) in grid.t_nodes().iter().enumerate() {
        for j in 0..grid.nx() {
            for c in 0..field.ncomp() {
                let mut rec = vec![format!("{:.16e}", t), format!("{:.16e}", xs[(j, 0)])];
                if grid.d() == 2 {
                    rec.push(format!("{:.16e}", xs[(j, 1)]));
                }
                rec.push(c.to_string());
                rec.push(format!("{:.16e}", field.comp(c)[(k, j)]));
                wtr.write_record(&rec)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Read a field written by [`write_field`] back onto the given grid,
/// validating coordinates (within 1e-12 absolute) and canonical row order.
pub fn read_field(grid: &HalfGrid, ncomp: usize, path: &Path) -> Result<HalfSpaceField> {
    let mut rdr = csv::Reader::from_path(path)?;
    let want_cols = 3 + grid.d();
    let headers = rdr.headers()?.clone();
    if headers.len() != want_cols {
        return Err(HelmError::FieldIo(format!(
            "expected {want_cols} columns, found {} ({:?})",
            headers.len(),
            headers
        )));
    }
    let shape = (grid.t_count(), grid.nx());
    let mut comps = vec![Array2::zeros(shape); ncomp];
    let xs = grid.x_nodes();
    let total = grid.t_count() * grid.nx() * ncomp;
    let mut row_idx = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        if row_idx >= total {
            return Err(HelmError::FieldIo(format!(
                "too many rows: expected {total}"
            )));
        }
        let c = row_idx % ncomp;
        let j = (row_idx / ncomp) % grid.nx();
        let k = row_idx / (ncomp * grid.nx());
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| HelmError::FieldIo(format!("row {}: bad {what}: {e}", row_idx + 2)))
        };
        let t_val = parse(&rec[0], "t")?;
        if (t_val - grid.t_nodes()[k]).abs() > 1e-12 * (1.0 + grid.t_horizon()) {
            return Err(HelmError::FieldIo(format!(
                "row {}: t = {t_val} does not match node {}",
                row_idx + 2,
                grid.t_nodes()[k]
            )));
        }
        for axis in 0..grid.d() {
            let x_val = parse(&rec[1 + axis], "x")?;
            if (x_val - xs[(j, axis)]).abs() > 1e-12 * (1.0 + grid.l()) {
                return Err(HelmError::FieldIo(format!(
                    "row {}: x{} = {x_val} does not match node {}",
                    row_idx + 2,
                    axis + 1,
                    xs[(j, axis)]
                )));
            }
        }
        let c_val: usize = rec[1 + grid.d()]
            .trim()
            .parse()
            .map_err(|e| HelmError::FieldIo(format!("row {}: bad component: {e}", row_idx + 2)))?;
        if c_val != c {
            return Err(HelmError::FieldIo(format!(
                "row {}: component {c_val} out of canonical order (expected {c})",
                row_idx + 2
            )));
        }
        comps[c][(k, j)] = parse(&rec[1 + grid.d() + 1], "value")?;
        row_idx += 1;
    }
    if row_idx != total {
        return Err(HelmError::FieldIo(format!(
            "expected {total} rows, found {row_idx}"
        )));
    }
    HalfSpaceField::new(grid.clone(), comps)
}

/// Closed-form sampler: fill a scalar field from `f(t, x)` (d = 1) given as
/// a closure over (t, x-coordinates-slice).
pub fn sample_scalar(grid: &HalfGrid, f: impl Fn(f64, &[f64]) -> f64) -> HalfSpaceField {
    let xs = grid.x_nodes();
    let mut vals = Array2::zeros((grid.t_count(), grid.nx()));
    for (k, t) in grid.t_nodes().iter().enumerate() {
        for j in 0..grid.nx() {
            let row = xs.row(j);
            vals[(k, j)] = f(*t, row.as_slice().unwrap());
        }
    }
    HalfSpaceField::scalar(grid.clone(), vals).expect("closed-form sampler produced bad field")
}

/// Closed-form sampler for a multi-component field.
pub fn sample_vector(
    grid: &HalfGrid,
    ncomp: usize,
    f: impl Fn(f64, &[f64], usize) -> f64,
) -> HalfSpaceField {
    let xs = grid.x_nodes();
    let mut comps = vec![Array2::zeros((grid.t_count(), grid.nx())); ncomp];
    for (k, t) in grid.t_nodes().iter().enumerate() {
        for j in 0..grid.nx() {
            let row = xs.row(j);
            for (c, comp) in comps.iter_mut().enumerate() {
                comp[(k, j)] = f(*t, row.as_slice().unwrap(), c);
            }
        }
    }
    HalfSpaceField::new(grid.clone(), comps).expect("closed-form sampler produced bad field")
}

/// Evaluate a matrix applied to a vector, convenience for tests and
/// certificates (`m` is `nx`-by-`nx`).
pub fn matvec(m: &Array2<f64>, v: &Array1<f64>) -> Array1<f64> {
    m.dot(v)
}
