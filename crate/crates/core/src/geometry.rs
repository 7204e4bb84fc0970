//! Lipschitz graph domains, the flattening map, pull-back coefficients, and
//! transport of fields between the domain and the half space.
//!
//! A domain `Omega = { (x, x_{d+1}) : x_{d+1} > eta(x) }` above the graph of
//! a Lipschitz function `eta` is flattened onto the half space by
//! `Phi(x, x_{d+1}) = (x, x_{d+1} - eta(x))`, whose inverse relabels grid
//! node `(y_j, t_k)` to the physical point `(y_j, t_k + eta(y_j))`. `Phi` has
//! unit Jacobian determinant, so quadrature on the half-space grid is also
//! quadrature on `Omega`. Under the flattening, the Laplacian pulls back to
//! the divergence-form operator with coefficient matrix
//!
//! ```text
//!   A(x) = [ I      a(x) ]      a = -grad eta,   b = 1 + |grad eta|^2,
//!          [ a(x)^T b(x) ]
//! ```
//!
//! which is t-independent: the property every factorization downstream
//! rests on.
//!
//! The boundary catalog ships four profiles: flat, constant slope
//! (periodized by using the constant coefficient fields only, since a linear
//! profile is not torus-periodic), a sinusoid, and sampled data with
//! trigonometric interpolation.

use ndarray::{Array1, Array2};

use crate::error::{HelmError, Result};
use crate::grid::{spectral_gradient, HalfGrid, HalfSpaceField};
use crate::tol;

/// Boundary profile catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaSpec {
    /// `eta = 0`.
    Flat,
    /// `eta(x) = c x_1`; not torus-periodic, realized through its constant
    /// coefficient fields `a = (-c, 0, ...)`, `b = 1 + c^2` only.
    Slope { c: f64 },
    /// `eta(x) = alpha sin(2 pi x_1 / L)`.
    Sine { alpha: f64 },
    /// Uniform samples of one period of a profile in `x_1`, evaluated
    /// everywhere by trigonometric interpolation (sawtooth mode kept as a
    /// pure cosine; its derivative is dropped, matching the differentiation
    /// matrix convention).
    Samples { values: Vec<f64> },
}

impl EtaSpec {
    fn kind_name(&self) -> &'static str {
        match self {
            EtaSpec::Flat => "flat",
            EtaSpec::Slope { .. } => "slope",
            EtaSpec::Sine { .. } => "sine",
            EtaSpec::Samples { .. } => "samples",
        }
    }
}

/// Trigonometric interpolant helpers for the `Samples` profile.
struct TrigInterp<'a> {
    values: &'a [f64],
    l: f64,
}

impl TrigInterp<'_> {
    fn coeff(&self, k: usize) -> (f64, f64) {
        let ns = self.values.len();
        let mut a = 0.0;
        let mut b = 0.0;
        for (j, s) in self.values.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * (k * j) as f64 / ns as f64;
            a += s * phase.cos();
            b += s * phase.sin();
        }
        (a, b)
    }

    fn eval(&self, x: f64) -> f64 {
        let ns = self.values.len();
        let scale = 2.0 * std::f64::consts::PI / self.l;
        let (a0, _) = self.coeff(0);
        let mut out = a0 / ns as f64;
        for k in 1..ns / 2 {
            let (a, b) = self.coeff(k);
            let w = scale * k as f64 * x;
            out += 2.0 / ns as f64 * (a * w.cos() + b * w.sin());
        }
        let (any, _) = self.coeff(ns / 2);
        out += any / ns as f64 * (scale * (ns / 2) as f64 * x).cos();
        out
    }

    fn deriv(&self, x: f64) -> f64 {
        let ns = self.values.len();
        let scale = 2.0 * std::f64::consts::PI / self.l;
        let mut out = 0.0;
        for k in 1..ns / 2 {
            let (a, b) = self.coeff(k);
            let wk = scale * k as f64;
            let w = wk * x;
            out += 2.0 / ns as f64 * wk * (-a * w.sin() + b * w.cos());
        }
        // Sawtooth derivative dropped by convention.
        out
    }
}

/// A Lipschitz graph domain: profile, period, and declared Lipschitz bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDomainSpec {
    eta: EtaSpec,
    l: f64,
    lip: f64,
}

impl GraphDomainSpec {
    /// Validate and wrap a profile. Checks: finite parameters, sample counts,
    /// periodicity of the profile (skipped for the slope, which is periodic
    /// only through its coefficients), and the declared Lipschitz bound
    /// against a dense probe of the gradient.
    pub fn new(eta: EtaSpec, l: f64, lip: f64) -> Result<GraphDomainSpec> {
        if !(l.is_finite() && l > 0.0) {
            return Err(HelmError::Domain(format!("period must be positive, got {l}")));
        }
        if !(lip.is_finite() && lip >= 0.0) {
            return Err(HelmError::Domain(format!(
                "lipschitz bound must be nonnegative, got {lip}"
            )));
        }
        match &eta {
            EtaSpec::Flat => {}
            EtaSpec::Slope { c } => {
                if !c.is_finite() {
                    return Err(HelmError::Domain("slope must be finite".into()));
                }
                if c.abs() > lip * (1.0 + 1e-12) {
                    return Err(HelmError::Domain(format!(
                        "slope {c} exceeds declared lipschitz bound {lip}"
                    )));
                }
            }
            EtaSpec::Sine { alpha } => {
                if !alpha.is_finite() {
                    return Err(HelmError::Domain("sine amplitude must be finite".into()));
                }
            }
            EtaSpec::Samples { values } => {
                if values.len() < 4 || values.len() % 2 != 0 {
                    return Err(HelmError::Domain(format!(
                        "sample profile needs an even count >= 4, got {}",
                        values.len()
                    )));
                }
                if !values.iter().all(|v| v.is_finite()) {
                    return Err(HelmError::Domain("sample profile has non-finite values".into()));
                }
            }
        }
        let spec = GraphDomainSpec { eta, l, lip };
        // Periodicity probe (pointwise identity for every catalog entry but
        // the slope).
        if !matches!(spec.eta, EtaSpec::Slope { .. }) {
            let e0 = spec.eta_at(&[0.0]);
            let el = spec.eta_at(&[l]);
            if (e0 - el).abs() > 1e-12 * (1.0 + e0.abs()) {
                return Err(HelmError::Domain(format!(
                    "profile is not L-periodic: eta(0) = {e0}, eta(L) = {el}"
                )));
            }
        }
        // Lipschitz probe on a dense node set (between-node excursions are
        // the caller's responsibility by contract).
        let probes = match &spec.eta {
            EtaSpec::Samples { values } => 8 * values.len().max(128),
            _ => 1024,
        };
        let mut worst = 0.0f64;
        for j in 0..probes {
            let x = l * j as f64 / probes as f64;
            let g = spec.grad_eta_at(&[x]);
            let mag = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(mag);
        }
        if worst > lip * (1.0 + 1e-10) + 1e-14 {
            return Err(HelmError::Domain(format!(
                "gradient magnitude {worst} exceeds declared lipschitz bound {lip}"
            )));
        }
        Ok(spec)
    }

    /// Flat boundary.
    pub fn flat(l: f64) -> GraphDomainSpec {
        GraphDomainSpec::new(EtaSpec::Flat, l, 0.0).expect("flat profile is always valid")
    }

    /// Constant slope `c` with the tight Lipschitz bound.
    pub fn slope(l: f64, c: f64) -> Result<GraphDomainSpec> {
        GraphDomainSpec::new(EtaSpec::Slope { c }, l, c.abs())
    }

    /// Sinusoid `alpha sin(2 pi x / L)` with the tight Lipschitz bound.
    pub fn sine(l: f64, alpha: f64) -> Result<GraphDomainSpec> {
        let lip = (2.0 * std::f64::consts::PI * alpha / l).abs();
        GraphDomainSpec::new(EtaSpec::Sine { alpha }, l, lip)
    }

    pub fn eta_spec(&self) -> &EtaSpec {
        &self.eta
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn kind_name(&self) -> &'static str {
        self.eta.kind_name()
    }

    /// Evaluate the profile at a point (only `x[0]` matters for the shipped
    /// catalog; d = 2 profiles are cylinders over the first axis).
    pub fn eta_at(&self, x: &[f64]) -> f64 {
        match &self.eta {
            EtaSpec::Flat => 0.0,
            EtaSpec::Slope { c } => c * x[0],
            EtaSpec::Sine { alpha } => {
                alpha * (2.0 * std::f64::consts::PI * x[0] / self.l).sin()
            }
            EtaSpec::Samples { values } => TrigInterp { values, l: self.l }.eval(x[0]),
        }
    }

    /// Evaluate the profile gradient at a point; the result has the same
    /// length as `x`.
    pub fn grad_eta_at(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match &self.eta {
            EtaSpec::Flat => {}
            EtaSpec::Slope { c } => g[0] = *c,
            EtaSpec::Sine { alpha } => {
                let w = 2.0 * std::f64::consts::PI / self.l;
                g[0] = alpha * w * (w * x[0]).cos();
            }
            EtaSpec::Samples { values } => {
                g[0] = TrigInterp { values, l: self.l }.deriv(x[0]);
            }
        }
        g
    }
}

/// Pull-back coefficient fields sampled on a grid: `a = -grad eta` (one
/// vector per axis), `b = 1 + |a|^2` (the identity of the graph case holds
/// exactly by construction), and certified bounds on the quadratic form of
/// the assembled matrix `A`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    a: Vec<Array1<f64>>,
    b: Array1<f64>,
    nu1: f64,
    nu2: f64,
    lip: f64,
}

impl Coefficients {
    /// Per-axis coefficient vectors `a_i` at the x-nodes.
    pub fn a(&self) -> &[Array1<f64>] {
        &self.a
    }

    /// `b = 1 + |a|^2` at the x-nodes.
    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    /// Certified lower bound of the quadratic form of `A` over the nodes.
    pub fn nu1(&self) -> f64 {
        self.nu1
    }

    /// Certified upper bound of the quadratic form of `A` over the nodes.
    pub fn nu2(&self) -> f64 {
        self.nu2
    }

    /// Declared Lipschitz bound of the generating domain.
    pub fn lip(&self) -> f64 {
        self.lip
    }
}

/// Sample the pull-back coefficients of a domain on a grid and certify their
/// ellipticity.
///
/// The extreme eigenvalues of `A = [[I, a], [a^T, b]]` with `b = 1 + |a|^2`
/// are `lam_plus = 1 + s/2 + sqrt(s^2 + 4 s)/2` (`s = |a|^2`) and
/// `lam_minus = 1 / lam_plus` (the product of the two nontrivial eigenvalues
/// equals `det = b - |a|^2 = 1`); all other eigenvalues equal 1. Since
/// `lam_plus <= 1 + |a| + |a|^2`, the certified bounds are
/// `nu1 >= 1/(1 + lip + lip^2)` and `nu2 <= 1 + lip + lip^2`.
pub fn build_coefficients(domain: &GraphDomainSpec, grid: &HalfGrid) -> Result<Coefficients> {
    if domain.l() != grid.l() {
        return Err(HelmError::Domain(format!(
            "period mismatch: domain {} vs grid {}",
            domain.l(),
            grid.l()
        )));
    }
    let nx = grid.nx();
    let d = grid.d();
    let xs = grid.x_nodes();
    let mut a: Vec<Array1<f64>> = (0..d).map(|_| Array1::zeros(nx)).collect();
    let mut b = Array1::zeros(nx);
    let mut nu1 = f64::INFINITY;
    let mut nu2 = f64::NEG_INFINITY;
    for j in 0..nx {
        let row = xs.row(j);
        let x = row.as_slice().unwrap();
        let g = domain.grad_eta_at(x);
        if !g.iter().all(|v| v.is_finite()) {
            return Err(HelmError::Domain(format!(
                "profile gradient non-finite at node {j}"
            )));
        }
        let mut s = 0.0;
        for (axis, gi) in g.iter().enumerate() {
            a[axis][j] = -gi;
            s += gi * gi;
        }
        b[j] = 1.0 + s;
        let lam_plus = 1.0 + 0.5 * s + 0.5 * (s * s + 4.0 * s).sqrt();
        let lam_minus = 1.0 / lam_plus;
        nu1 = nu1.min(lam_minus).min(1.0);
        nu2 = nu2.max(lam_plus).max(1.0);
    }
    let lip = domain.lip();
    let lower = 1.0 / (1.0 + lip + lip * lip) - tol::ELLIPTICITY_SLACK;
    let upper = 1.0 + lip + lip * lip + tol::ELLIPTICITY_SLACK;
    if nu1 < lower || nu2 > upper {
        return Err(HelmError::Domain(format!(
            "ellipticity certificate failed: [{nu1}, {nu2}] outside [{lower}, {upper}]"
        )));
    }
    Ok(Coefficients {
        a,
        b,
        nu1,
        nu2,
        lip,
    })
}

/// Physical points `Phi^{-1}(y_j, t_k) = (y_j, t_k + eta(y_j))`, one row per
/// sample in canonical order (`t` outer, flattened x inner), `d + 1` columns.
pub fn omega_points(domain: &GraphDomainSpec, grid: &HalfGrid) -> Result<Array2<f64>> {
    if domain.l() != grid.l() {
        return Err(HelmError::Domain(format!(
            "period mismatch: domain {} vs grid {}",
            domain.l(),
            grid.l()
        )));
    }
    let d = grid.d();
    let nx = grid.nx();
    let xs = grid.x_nodes();
    let mut pts = Array2::zeros((grid.t_count() * nx, d + 1));
    for (k, t) in grid.t_nodes().iter().enumerate() {
        for j in 0..nx {
            let row = xs.row(j);
            for axis in 0..d {
                pts[(k * nx + j, axis)] = row[axis];
            }
            pts[(k * nx + j, d)] = t + domain.eta_at(row.as_slice().unwrap());
        }
    }
    Ok(pts)
}

/// A `(d+1)`-component vector field sampled at the canonical image points of
/// a grid under the inverse flattening.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaVectorField {
    domain: GraphDomainSpec,
    grid: HalfGrid,
    components: Vec<Array2<f64>>,
}

impl OmegaVectorField {
    /// Wrap components (each `(t_count, nx)`, one per coordinate direction
    /// of the ambient space).
    pub fn new(
        domain: GraphDomainSpec,
        grid: HalfGrid,
        components: Vec<Array2<f64>>,
    ) -> Result<OmegaVectorField> {
        if domain.l() != grid.l() {
            return Err(HelmError::Domain(
                "period mismatch between domain and grid".into(),
            ));
        }
        if components.len() != grid.d() + 1 {
            return Err(HelmError::Shape(format!(
                "domain vector field needs {} components, got {}",
                grid.d() + 1,
                components.len()
            )));
        }
        let want = (grid.t_count(), grid.nx());
        for (c, comp) in components.iter().enumerate() {
            if comp.dim() != want {
                return Err(HelmError::Shape(format!(
                    "component {c} has shape {:?}, want {:?}",
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
        Ok(OmegaVectorField {
            domain,
            grid,
            components,
        })
    }

    /// Sample a closed-form field `f(point, component)` at the image points.
    pub fn sample(
        domain: &GraphDomainSpec,
        grid: &HalfGrid,
        f: impl Fn(&[f64], usize) -> f64,
    ) -> Result<OmegaVectorField> {
        let d = grid.d();
        let xs = grid.x_nodes();
        let mut comps = vec![Array2::zeros((grid.t_count(), grid.nx())); d + 1];
        let mut point = vec![0.0; d + 1];
        for (k, t) in grid.t_nodes().iter().enumerate() {
            for j in 0..grid.nx() {
                let row = xs.row(j);
                for axis in 0..d {
                    point[axis] = row[axis];
                }
                point[d] = t + domain.eta_at(row.as_slice().unwrap());
                for (c, comp) in comps.iter_mut().enumerate() {
                    comp[(k, j)] = f(&point, c);
                }
            }
        }
        OmegaVectorField::new(domain.clone(), grid.clone(), comps)
    }

    pub fn domain(&self) -> &GraphDomainSpec {
        &self.domain
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

    /// The physical sample points, canonical order.
    pub fn points(&self) -> Array2<f64> {
        omega_points(&self.domain, &self.grid).expect("validated at construction")
    }

    pub fn axpy(&self, alpha: f64, other: &OmegaVectorField) -> Result<OmegaVectorField> {
        if self.domain != other.domain || !self.grid.compatible(&other.grid) {
            return Err(HelmError::Shape(
                "field combination needs matching domains and grids".into(),
            ));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a + &(b * alpha))
            .collect();
        OmegaVectorField::new(self.domain.clone(), self.grid.clone(), components)
    }

    pub fn sub(&self, other: &OmegaVectorField) -> Result<OmegaVectorField> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> OmegaVectorField {
        OmegaVectorField {
            domain: self.domain.clone(),
            grid: self.grid.clone(),
            components: self.components.iter().map(|c| c * alpha).collect(),
        }
    }
}

/// Push a domain field forward to the half space: `F = f compose Phi^{-1}`.
/// Samples live on the image grid, so this is a relabeling, bit-exact.
pub fn push_forward(f: &OmegaVectorField) -> HalfSpaceField {
    HalfSpaceField::new(f.grid.clone(), f.components.clone())
        .expect("relabeling preserves validity")
}

/// Inverse relabeling of [`push_forward`]: attach half-space samples to the
/// image points of a domain. Bit-exact.
pub fn pull_back_field(domain: &GraphDomainSpec, f: &HalfSpaceField) -> Result<OmegaVectorField> {
    OmegaVectorField::new(domain.clone(), f.grid().clone(), f.components().to_vec())
}

/// Chain rule through the flattening: given `w` and its time derivative on
/// the half space, return the ambient gradient of `p = w compose Phi` at the
/// image points:
///
/// ```text
///   grad_x p = D w + a (dw/dt)        (a = -grad eta)
///   d p / d x_{d+1} = dw/dt
/// ```
pub fn pull_back_gradient(
    domain: &GraphDomainSpec,
    w: &HalfSpaceField,
    dtw: &HalfSpaceField,
) -> Result<OmegaVectorField> {
    if w.ncomp() != 1 || dtw.ncomp() != 1 {
        return Err(HelmError::Shape("gradient pull-back takes scalar fields".into()));
    }
    if !w.grid().compatible(dtw.grid()) {
        return Err(HelmError::Shape(
            "scalar field and its time derivative live on different grids".into(),
        ));
    }
    let grid = w.grid().clone();
    let coeffs = build_coefficients(domain, &grid)?;
    let ds = spectral_gradient(&grid);
    let mut comps = Vec::with_capacity(grid.d() + 1);
    for (axis, dm) in ds.iter().enumerate() {
        let mut dxw = w.comp(0).dot(&dm.t());
        // Row k of dtw.comp(0) holds the t_k slice; scale column j by a_j.
        for (j, aj) in coeffs.a()[axis].iter().enumerate() {
            let mut col = dxw.column_mut(j);
            let dt_col = dtw.comp(0).column(j);
            for (v, dv) in col.iter_mut().zip(dt_col.iter()) {
                *v += aj * dv;
            }
        }
        comps.push(dxw);
    }
    comps.push(dtw.comp(0).clone());
    OmegaVectorField::new(domain.clone(), grid, comps)
}

/// Write a domain field as CSV with header `t,x1[,x2],component,value`,
/// where the `t` column carries the physical vertical coordinate
/// `t_k + eta(y_j)`.
pub fn write_omega_field(field: &OmegaVectorField, path: &std::path::Path) -> Result<()> {
    let grid = field.grid();
    let pts = field.points();
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "x1".to_string()];
    if grid.d() == 2 {
        header.push("x2".to_string());
    }
    header.push("component".into());
    header.push("value".into());
    wtr.write_record(&header)?;
    for k in 0..grid.t_count() {
        for j in 0..grid.nx() {
            let row = k * grid.nx() + j;
            for c in 0..field.ncomp() {
                let mut rec = vec![
                    format!("{:.16e}", pts[(row, grid.d())]),
                    format!("{:.16e}", pts[(row, 0)]),
                ];
                if grid.d() == 2 {
                    rec.push(format!("{:.16e}", pts[(row, 1)]));
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, sample_scalar, TimePolicy};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid64() -> HalfGrid {
        make_grid(
            1,
            64,
            2.0 * PI,
            TimePolicy {
                t_horizon: 1.0,
                count: 17,
                grading_ratio: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn flat_coefficients_are_trivial() {
        let g = grid64();
        let dom = GraphDomainSpec::flat(2.0 * PI);
        let c = build_coefficients(&dom, &g).unwrap();
        assert!(c.a()[0].iter().all(|v| *v == 0.0));
        assert!(c.b().iter().all(|v| *v == 1.0));
        assert_abs_diff_eq!(c.nu1(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.nu2(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn slope_coefficients_are_constant() {
        let g = grid64();
        let dom = GraphDomainSpec::slope(2.0 * PI, 2.0).unwrap();
        let c = build_coefficients(&dom, &g).unwrap();
        assert!(c.a()[0].iter().all(|v| *v == -2.0));
        assert!(c.b().iter().all(|v| *v == 5.0));
    }

    #[test]
    fn sine_coefficients_at_origin() {
        let g = grid64();
        let dom = GraphDomainSpec::sine(2.0 * PI, 1.0).unwrap();
        let c = build_coefficients(&dom, &g).unwrap();
        // eta = sin x: at x = 0, a = -cos 0 = -1, b = 2.
        assert_abs_diff_eq!(c.a()[0][0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.b()[0], 2.0, epsilon = 1e-15);
        // b = 1 + |a|^2 holds exactly everywhere by construction.
        for j in 0..g.nx() {
            let aj = c.a()[0][j];
            assert_eq!(c.b()[j], 1.0 + aj * aj);
        }
    }

    #[test]
    fn ellipticity_certificate_brackets_the_quadratic_form() {
        let g = grid64();
        let dom = GraphDomainSpec::sine(2.0 * PI, 2.0).unwrap();
        let c = build_coefficients(&dom, &g).unwrap();
        // The quadratic form of A at every node must sit inside [nu1, nu2].
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let j = rng.random_range(0..g.nx());
            let xi = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let norm2 = xi[0] * xi[0] + xi[1] * xi[1];
            if norm2 < 1e-6 {
                continue;
            }
            let a = c.a()[0][j];
            let b = c.b()[j];
            let form = xi[0] * xi[0] + 2.0 * a * xi[0] * xi[1] + b * xi[1] * xi[1];
            let ratio = form / norm2;
            assert!(ratio >= c.nu1() - 1e-12, "form {ratio} below nu1 {}", c.nu1());
            assert!(ratio <= c.nu2() + 1e-12, "form {ratio} above nu2 {}", c.nu2());
        }
        // And the certified interval respects the closed-form lip bound.
        let lip = dom.lip();
        assert!(c.nu1() >= 1.0 / (1.0 + lip + lip * lip) - 1e-12);
        assert!(c.nu2() <= 1.0 + lip + lip * lip + 1e-12);
    }

    #[test]
    fn declared_lipschitz_bound_is_enforced() {
        assert!(GraphDomainSpec::new(EtaSpec::Sine { alpha: 1.0 }, 2.0 * PI, 0.5).is_err());
        assert!(GraphDomainSpec::new(EtaSpec::Slope { c: 2.0 }, 2.0 * PI, 1.0).is_err());
        assert!(GraphDomainSpec::new(EtaSpec::Sine { alpha: 1.0 }, 2.0 * PI, 1.0).is_ok());
    }

    #[test]
    fn sampled_profile_reproduces_band_limited_truth() {
        let l = 2.0 * PI;
        let ns = 32;
        let truth = |x: f64| 0.3 * x.sin() + 0.1 * (3.0 * x).cos();
        let dtruth = |x: f64| 0.3 * x.cos() - 0.3 * (3.0 * x).sin();
        let values: Vec<f64> = (0..ns).map(|j| truth(l * j as f64 / ns as f64)).collect();
        let dom = GraphDomainSpec::new(EtaSpec::Samples { values }, l, 0.7).unwrap();
        for j in 0..48 {
            let x = l * (j as f64 + 0.21) / 48.0;
            assert_abs_diff_eq!(dom.eta_at(&[x]), truth(x), epsilon = 1e-12);
            assert_abs_diff_eq!(dom.grad_eta_at(&[x])[0], dtruth(x), epsilon = 1e-11);
        }
    }

    #[test]
    fn push_forward_relabels_vertical_coordinate() {
        let g = grid64();
        let dom = GraphDomainSpec::sine(2.0 * PI, 1.0).unwrap();
        // f(x~) = x_{d+1} sampled on the image grid.
        let f = OmegaVectorField::sample(&dom, &g, |p, c| if c == 0 { 0.0 } else { p[1] }).unwrap();
        let pushed = push_forward(&f);
        let xs = g.x_nodes();
        for (k, t) in g.t_nodes().iter().enumerate() {
            for j in 0..g.nx() {
                let want = t + xs[(j, 0)].sin();
                assert_abs_diff_eq!(pushed.comp(1)[(k, j)], want, epsilon = 1e-12);
            }
        }
        // Round trip back to the domain is bit-exact.
        let back = pull_back_field(&dom, &pushed).unwrap();
        assert_eq!(back.comp(0), f.comp(0));
        assert_eq!(back.comp(1), f.comp(1));
    }

    #[test]
    fn push_forward_flat_and_constant_are_identities() {
        let g = grid64();
        let dom = GraphDomainSpec::flat(2.0 * PI);
        let f = OmegaVectorField::sample(&dom, &g, |p, c| {
            if c == 0 {
                1.0
            } else {
                p[0].cos() * (-p[1]).exp()
            }
        })
        .unwrap();
        let pushed = push_forward(&f);
        assert_eq!(pushed.comp(0), f.comp(0));
        // Constant component stays constant.
        assert!(pushed.comp(0).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn omega_points_match_stated_examples() {
        let g = grid64();
        let flat = GraphDomainSpec::flat(2.0 * PI);
        let pts = omega_points(&flat, &g).unwrap();
        // Flat: points are the grid nodes themselves.
        assert_eq!(pts[(0, 0)], 0.0);
        assert_eq!(pts[(0, 1)], 0.0);
        let dom = GraphDomainSpec::sine(2.0 * PI, 1.0).unwrap();
        let pts = omega_points(&dom, &g).unwrap();
        // Node (0, t_0): sin 0 = 0, so the point is (0, 0).
        assert_abs_diff_eq!(pts[(0, 1)], 0.0, epsilon = 1e-15);
        // Node (pi/2, t_0) sits on the graph: (pi/2, 1). x = pi/2 is node 16.
        assert_abs_diff_eq!(pts[(16, 0)], PI / 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(pts[(16, 1)], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn gradient_pull_back_chain_rule_examples() {
        let g = grid64();
        let dom = GraphDomainSpec::sine(2.0 * PI, 1.0).unwrap();
        // w = t: grad p = (-cos x, 1).
        let w = sample_scalar(&g, |t, _| t);
        let dtw = sample_scalar(&g, |_, _| 1.0);
        let gp = pull_back_gradient(&dom, &w, &dtw).unwrap();
        let xs = g.x_nodes();
        for k in 0..g.t_count() {
            for j in 0..g.nx() {
                assert_abs_diff_eq!(gp.comp(0)[(k, j)], -xs[(j, 0)].cos(), epsilon = 1e-11);
                assert_eq!(gp.comp(1)[(k, j)], 1.0);
            }
        }
        // Constant w: zero gradient.
        let w = sample_scalar(&g, |_, _| 3.0);
        let dtw = sample_scalar(&g, |_, _| 0.0);
        let gp = pull_back_gradient(&dom, &w, &dtw).unwrap();
        for c in 0..2 {
            assert!(gp.comp(c).iter().all(|v| v.abs() < 1e-11));
        }
    }

    #[test]
    fn gradient_pull_back_matches_analytic_flat_oracle() {
        let g = grid64();
        let dom = GraphDomainSpec::flat(2.0 * PI);
        let w = sample_scalar(&g, |t, x| x[0].sin() * (-t).exp());
        let dtw = sample_scalar(&g, |t, x| -x[0].sin() * (-t).exp());
        let gp = pull_back_gradient(&dom, &w, &dtw).unwrap();
        let xs = g.x_nodes();
        for (k, t) in g.t_nodes().iter().enumerate() {
            for j in 0..g.nx() {
                let x = xs[(j, 0)];
                assert_abs_diff_eq!(gp.comp(0)[(k, j)], x.cos() * (-t).exp(), epsilon = 1e-8);
                assert_abs_diff_eq!(gp.comp(1)[(k, j)], -x.sin() * (-t).exp(), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn omega_csv_writes_physical_heights() {
        let g = make_grid(
            1,
            8,
            2.0 * PI,
            TimePolicy {
                t_horizon: 1.0,
                count: 3,
                grading_ratio: 1.0,
            },
        )
        .unwrap();
        let dom = GraphDomainSpec::sine(2.0 * PI, 1.0).unwrap();
        let f = OmegaVectorField::sample(&dom, &g, |p, _| p[1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("omega.csv");
        write_omega_field(&f, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,component,value");
        // Second data row group: node x_1 = pi/4, height sin(pi/4).
        let second_node_row = text.lines().nth(3).unwrap();
        let t_field: f64 = second_node_row.split(',').next().unwrap().parse().unwrap();
        assert_abs_diff_eq!(t_field, (PI / 4.0).sin(), epsilon = 1e-12);
    }

    #[test]
    fn period_mismatch_is_rejected() {
        let g = grid64();
        let dom = GraphDomainSpec::flat(1.0);
        assert!(build_coefficients(&dom, &g).is_err());
        assert!(omega_points(&dom, &g).is_err());
    }
}
