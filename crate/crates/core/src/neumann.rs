//! Weak Neumann solvers on the flattened half-space.
//!
//! The inhomogeneous problem is driven by a `(d+1)`-component load
//! `F = (F', F_last)`: the interior equation reads
//! `div A grad w = div_x F' + d/dt (F_last + a . F')` and the conormal flux
//! at the boundary equals the trace of `G = -(F_last + a . F')`.  Two
//! independent routes produce `w`:
//!
//! * [`solve_formula`] integrates the first-order factorization of the
//!   operator: an anticausal march through the conjugate semigroup builds
//!   the auxiliary profile `v`, a causal march through the decay semigroup
//!   lifts it to `w`, and the boundary condition enters through the flux
//!   map's pseudo-inverse.  The time derivative comes from the factorized
//!   identity `dw/dt = v - P w`, never from finite differences.
//! * [`solve_direct`] discretizes the variational form on the truncated
//!   slab with spectral derivatives in `x` and piecewise-linear elements in
//!   `t`, whose interior stencils are the compact second-order differences
//!   of the strip discretization (natural condition at the boundary,
//!   homogeneous condition at the truncation depth).  The assembled system
//!   is symmetric positive definite and block-tridiagonal, factored by a
//!   block `L D L^T` decomposition.  It shares no operator code with the
//!   mild route.
//!
//! Both routes normalize the additive constant so the solution has zero
//! mean over the slab, and both report their internal consistency
//! measurements in [`NeumannDiagnostics`].

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{HelmError, Result};
use crate::geometry::Coefficients;
use crate::grid::{
    mixed_norm, spectral_gradient, time_fd_matrix, HalfGrid, HalfSpaceField, MixedNormSpec,
};
use crate::operator::{fro, pseudo_inverse, scale_cols, OperatorBundle};
use crate::semigroup::SemigroupEvaluator;
use crate::tol;

/// Method tag of the mild-solution (semigroup) route.
pub const METHOD_FORMULA: &str = "semigroup-formula";

/// Method tag of the variational route on the truncated slab.
pub const METHOD_DIRECT: &str = "variational-direct";

/// Prepared Neumann data: the tangential and vertical load components and
/// the derived boundary-direction forcing `G = -(F_last + a . F')` with its
/// boundary trace.
#[derive(Debug, Clone)]
pub struct NeumannData {
    fprime: HalfSpaceField,
    flast: HalfSpaceField,
    g: HalfSpaceField,
    trace_g: Array1<f64>,
}

impl NeumannData {
    /// Tangential load (`d` components).
    pub fn fprime(&self) -> &HalfSpaceField {
        &self.fprime
    }

    /// Vertical load (scalar).
    pub fn flast(&self) -> &HalfSpaceField {
        &self.flast
    }

    /// Boundary-direction forcing `G = -(F_last + a . F')` (scalar).
    pub fn g(&self) -> &HalfSpaceField {
        &self.g
    }

    /// Trace of `G` on the boundary slice.
    pub fn trace_g(&self) -> &Array1<f64> {
        &self.trace_g
    }

    /// The grid all components live on.
    pub fn grid(&self) -> &HalfGrid {
        self.fprime.grid()
    }
}

/// Splits a `(d+1)`-component load into prepared Neumann data, forming the
/// boundary-direction forcing pointwise from the boundary slope.
pub fn build_neumann_data(f: &HalfSpaceField, coeffs: &Coefficients) -> Result<NeumannData> {
    let grid = f.grid();
    let d = grid.d();
    if f.ncomp() != d + 1 {
        return Err(HelmError::Shape(format!(
            "Neumann data needs a {}-component load on a dimension-{} grid, got {} components",
            d + 1,
            d,
            f.ncomp()
        )));
    }
    check_coeffs(coeffs, grid)?;
    let nx = grid.nx();
    let k_count = grid.t_nodes().len();
    let mut g = Array2::<f64>::zeros((k_count, nx));
    for k in 0..k_count {
        for j in 0..nx {
            let mut s = f.comp(d)[[k, j]];
            for (i, ai) in coeffs.a().iter().enumerate() {
                s += ai[j] * f.comp(i)[[k, j]];
            }
            g[[k, j]] = -s;
        }
    }
    let trace_g = g.row(0).to_owned();
    let fprime = HalfSpaceField::new(grid.clone(), f.components()[..d].to_vec())?;
    let flast = HalfSpaceField::new(grid.clone(), vec![f.comp(d).clone()])?;
    let g = HalfSpaceField::new(grid.clone(), vec![g])?;
    Ok(NeumannData {
        fprime,
        flast,
        g,
        trace_g,
    })
}

/// Consistency measurements recorded by the solvers.
#[derive(Debug, Clone, Serialize)]
pub struct NeumannDiagnostics {
    /// How much of the marched (mild route) or prescribed (variational
    /// route) data survives at the truncation depth, relative to its peak.
    pub tail_ratio: f64,
    /// True when `tail_ratio` exceeds the route's decay threshold.
    pub tail_warning: bool,
    /// Largest neutral component of the weighted divergence load relative
    /// to its size (mild route only; analytically zero).
    pub data_neutral_defect: Option<f64>,
    /// Largest neutral component of the boundary-condition right side
    /// relative to its size (mild route only; asserted, not assumed).
    pub boundary_neutral_defect: Option<f64>,
    /// Galerkin orthogonality defect `|w^T S w - r^T w| / |w^T S w|`
    /// (variational route only).
    pub energy_defect: Option<f64>,
    /// Relative residual of the factored linear solve (variational route
    /// only).
    pub solve_residual: Option<f64>,
}

/// A solution of the weak Neumann problem: the potential, its full
/// space-time gradient, the route that produced it, and diagnostics.
#[derive(Debug, Clone)]
pub struct NeumannSolution {
    w: HalfSpaceField,
    gradw: HalfSpaceField,
    method: &'static str,
    diagnostics: NeumannDiagnostics,
}

impl NeumannSolution {
    /// The potential, normalized to zero mean over the slab.
    pub fn w(&self) -> &HalfSpaceField {
        &self.w
    }

    /// Space-time gradient: `d` spectral tangential derivatives followed by
    /// the time derivative.
    pub fn gradw(&self) -> &HalfSpaceField {
        &self.gradw
    }

    /// Which route produced the solution.
    pub fn method(&self) -> &'static str {
        self.method
    }

    /// Consistency measurements recorded while solving.
    pub fn diagnostics(&self) -> &NeumannDiagnostics {
        &self.diagnostics
    }
}

fn check_coeffs(coeffs: &Coefficients, grid: &HalfGrid) -> Result<()> {
    if coeffs.a().len() != grid.d() || coeffs.b().len() != grid.nx() {
        return Err(HelmError::Shape(
            "coefficient tables do not match the grid".into(),
        ));
    }
    Ok(())
}

fn check_bundle(bundle: &OperatorBundle, grid: &HalfGrid) -> Result<()> {
    if bundle.dmats().len() != grid.d() || bundle.b().len() != grid.nx() {
        return Err(HelmError::Shape(
            "operator bundle does not match the data grid".into(),
        ));
    }
    Ok(())
}

/// Mean of a scalar slab field under the trapezoid-in-time, uniform-in-x
/// quadrature.
fn slab_mean(rows: &Array2<f64>, weights: &[f64]) -> f64 {
    let nx = rows.ncols() as f64;
    let total_t: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (k, wk) in weights.iter().enumerate() {
        acc += wk * rows.row(k).sum() / nx;
    }
    acc / total_t
}

/// Solves the weak Neumann problem by the first-order factorization: an
/// anticausal march through the conjugate semigroup, a causal march through
/// the decay semigroup, and the flux map's pseudo-inverse for the boundary
/// condition.
///
/// Fails when the bundle's certificates did not all pass, or when the
/// weighted divergence load carries a neutral component beyond rounding
/// (which a divergence cannot do unless assembly is broken).
pub fn solve_formula(bundle: &OperatorBundle, data: &NeumannData) -> Result<NeumannSolution> {
    let grid = data.grid().clone();
    check_bundle(bundle, &grid)?;
    if !bundle.all_certificates_pass() {
        let failed: Vec<&str> = bundle
            .certificates()
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(HelmError::Solver(format!(
            "operator bundle carries failed certificates: {}",
            failed.join(", ")
        )));
    }
    let t_nodes = grid.t_nodes().to_vec();
    let d = grid.d();
    let b = bundle.b().clone();
    let binv = b.mapv(|x| 1.0 / x);

    // Divergence of the tangential load, with its analytically vanishing
    // neutral components gated as an assembly check.
    let mut divf = Array2::<f64>::zeros(data.g.comp(0).raw_dim());
    for i in 0..d {
        divf = divf + data.fprime.comp(i).dot(&bundle.dmats()[i].t());
    }
    // Range condition in the vertically weighted pairing: it reduces to the
    // raw divergence against the neutral directions, which is analytically
    // zero (derivative matrices annihilate the neutral space on both sides).
    // Normalize by the data feeding the divergence, not by the divergence
    // itself: for tangentially neutral loads the divergence is pure
    // roundoff and its own size is no yardstick.
    let data_scale = (0..d)
        .map(|i| {
            let fnorm = data
                .fprime
                .comp(i)
                .rows()
                .into_iter()
                .map(|r| r.dot(&r).sqrt())
                .fold(0.0f64, f64::max);
            fnorm * fro(&bundle.dmats()[i])
        })
        .fold(0.0f64, f64::max);
    let raw_defect = divf
        .dot(bundle.neutral())
        .iter()
        .fold(0.0f64, |m, c| m.max(c.abs()));
    let data_defect = if data_scale == 0.0 {
        0.0
    } else {
        raw_defect / data_scale
    };
    if data_defect > tol::COMPATIBILITY_REL {
        return Err(HelmError::Solver(format!(
            "weighted divergence load has neutral component {data_defect:.3e}, \
             beyond the rounding allowance {:.1e}",
            tol::COMPATIBILITY_REL
        )));
    }

    // Anticausal march: the integrand combines the weighted boundary
    // forcing with the conjugate generator's pseudo-inverse applied to the
    // weighted divergence, once per time slice.
    let qpinv = pseudo_inverse(bundle.adjoint(), bundle.kappa())?;
    let gb = scale_cols(data.g.comp(0), &binv);
    let qdiv = scale_cols(&divf, &binv).dot(&qpinv.t());
    let integrand = &gb - &qdiv;

    let ev_p = SemigroupEvaluator::new(bundle.solvent().clone())?;
    let ev_q = ev_p.conjugate_transpose(&b)?;
    let (tail_int, tail_ratio) = ev_q.march_backward(&t_nodes, &integrand)?;
    let v = tail_int.dot(&bundle.adjoint().t()) - &gb;

    // Causal lift and the boundary correction through the flux map.
    let w1 = ev_p.march_forward(&t_nodes, &v)?;
    let gamma_v = v.row(0).to_owned();
    let h = &(&b * &gamma_v) + &data.trace_g;
    let boundary_defect = {
        let num = bundle
            .neutral()
            .t()
            .dot(&h)
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()));
        let den = h.dot(&h).sqrt();
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    };
    let w0 = bundle.lambda_pinv()?.dot(&h);
    let w2 = ev_p.decay_profile(&t_nodes, &w0, false)?;
    let mut w = &w1 + &w2;

    // Factorized time derivative and spectral tangential derivatives.
    let dtw = &v - &w.dot(&bundle.solvent().t());
    let mut comps = Vec::with_capacity(d + 1);
    for i in 0..d {
        comps.push(w.dot(&bundle.dmats()[i].t()));
    }
    comps.push(dtw);

    let mean = slab_mean(&w, grid.t_weights());
    w.mapv_inplace(|x| x - mean);

    Ok(NeumannSolution {
        w: HalfSpaceField::new(grid.clone(), vec![w])?,
        gradw: HalfSpaceField::new(grid, comps)?,
        method: METHOD_FORMULA,
        diagnostics: NeumannDiagnostics {
            tail_ratio,
            tail_warning: tail_ratio > tol::ANTICAUSAL_TAIL_REL,
            data_neutral_defect: Some(data_defect),
            boundary_neutral_defect: Some(boundary_defect),
            energy_defect: None,
            solve_residual: None,
        },
    })
}

/// How much of the forcing survives at the truncation depth, relative to
/// its overall peak (infinity norms over slices, maximized over the
/// boundary forcing and all tangential components).
fn forcing_tail_ratio(data: &NeumannData) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut scan = |rows: &Array2<f64>| {
        let last = rows.nrows() - 1;
        num = num.max(rows.row(last).iter().fold(0.0f64, |m, x| m.max(x.abs())));
        den = den.max(rows.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    };
    scan(data.g.comp(0));
    for i in 0..data.fprime.ncomp() {
        scan(data.fprime.comp(i));
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Solves the weak Neumann problem variationally on the truncated slab:
/// spectral derivatives in `x`, piecewise-linear elements on the time nodes
/// (whose interior stencils are the same compact second-order differences
/// the strip oracle uses), natural condition at the boundary and a
/// homogeneous condition at the truncation depth.  The assembled system is
/// symmetric positive definite and block-tridiagonal; it is factored by a
/// block `L D L^T` decomposition and the residual is verified.
///
/// Fails when the forcing has not decayed at the truncation depth (the
/// homogeneous condition would be imposed on live data) or when the
/// factored solve does not reproduce the right side.
pub fn solve_direct(
    coeffs: &Coefficients,
    grid: &HalfGrid,
    data: &NeumannData,
) -> Result<NeumannSolution> {
    if !data.grid().compatible(grid) {
        return Err(HelmError::Shape(
            "Neumann data does not live on the requested grid".into(),
        ));
    }
    check_coeffs(coeffs, grid)?;
    let t_nodes = grid.t_nodes().to_vec();
    let k_count = t_nodes.len();
    if k_count < 4 {
        return Err(HelmError::Config(
            "the truncated slab needs at least 4 time slices".into(),
        ));
    }
    let tail_ratio = forcing_tail_ratio(data);
    if tail_ratio > tol::DIRECT_TAIL_REL {
        return Err(HelmError::Config(format!(
            "forcing retains {tail_ratio:.3e} of its peak at the truncation depth \
             (limit {:.1e}); deepen the slab before imposing the homogeneous condition",
            tol::DIRECT_TAIL_REL
        )));
    }

    let d = grid.d();
    let nx = grid.nx();
    let dmats = spectral_gradient(grid);

    // Spatial building blocks of the quadratic form: the stiffness part,
    // the slope coupling (and its transpose), and the vertical weight.
    let mut xx = Array2::<f64>::zeros((nx, nx));
    let mut cmat = Array2::<f64>::zeros((nx, nx));
    for (dm, ai) in dmats.iter().zip(coeffs.a()) {
        xx = xx + dm.t().dot(dm);
        cmat = cmat + scale_cols(&dm.t().to_owned(), ai);
    }
    let cmat_t = cmat.t().to_owned();
    let csym = &cmat + &cmat_t;
    let bdiag = Array2::from_diag(coeffs.b());

    // Element-by-element assembly over the time intervals.  On each
    // interval the trial and test functions are linear, time derivatives
    // are constant, and the coefficients do not depend on time, so every
    // element integral is exact.  The final node is pinned to zero, which
    // reduces the system to the first `k_count - 1` nodes.
    let kk = k_count - 1;
    let mut diag: Vec<Array2<f64>> = (0..kk).map(|_| Array2::zeros((nx, nx))).collect();
    let mut sub: Vec<Array2<f64>> = (0..kk - 1).map(|_| Array2::zeros((nx, nx))).collect();

    // Load functional blocks: the tangential load meets the spectral
    // derivatives of the test function, the boundary-direction forcing
    // meets its time derivative.
    let mut divt = Array2::<f64>::zeros((k_count, nx));
    for (i, dm) in dmats.iter().enumerate() {
        divt = divt + data.fprime.comp(i).dot(dm);
    }
    let g_rows = data.g.comp(0);
    let mut r: Vec<Array1<f64>> = (0..kk).map(|_| Array1::zeros(nx)).collect();

    for e in 0..k_count - 1 {
        let dt = t_nodes[e + 1] - t_nodes[e];
        // S_00 / S_11: mass-weighted stiffness, the uncanceled half of the
        // slope coupling (it survives only at the slab ends), and the
        // compact vertical second difference.
        if e < kk {
            diag[e] = &diag[e] + &(&xx * (dt / 3.0) - &(&csym * 0.5) + &bdiag * (1.0 / dt));
            let rl = &divt.row(e) * (dt / 3.0)
                + &divt.row(e + 1) * (dt / 6.0)
                + &(&g_rows.row(e) + &g_rows.row(e + 1)) * 0.5;
            r[e] = &r[e] + &rl;
        }
        if e + 1 < kk {
            diag[e + 1] =
                &diag[e + 1] + &(&xx * (dt / 3.0) + &(&csym * 0.5) + &bdiag * (1.0 / dt));
            sub[e] = &sub[e]
                + &(&xx * (dt / 6.0) + &(&cmat_t - &cmat) * 0.5 - &bdiag * (1.0 / dt));
            let rl = &divt.row(e) * (dt / 6.0)
                + &divt.row(e + 1) * (dt / 3.0)
                - &(&g_rows.row(e) + &g_rows.row(e + 1)) * 0.5;
            r[e + 1] = &r[e + 1] + &rl;
        }
    }

    // Block-tridiagonal LDL^T factorization (unit lower factors, SPD
    // pivots), then forward, diagonal, and backward sweeps.
    use ndarray_linalg::Inverse;
    let mut pivots: Vec<Array2<f64>> = Vec::with_capacity(kk);
    let mut pinvs: Vec<Array2<f64>> = Vec::with_capacity(kk);
    let mut lower: Vec<Array2<f64>> = Vec::with_capacity(kk - 1);
    for k in 0..kk {
        let mut dk = diag[k].clone();
        if k >= 1 {
            dk = dk - lower[k - 1].dot(&pivots[k - 1]).dot(&lower[k - 1].t());
        }
        let dk = (&dk + &dk.t()) * 0.5;
        let di = dk
            .inv()
            .map_err(|e| HelmError::Solver(format!("slab pivot inversion failed: {e}")))?;
        if k + 1 < kk {
            lower.push(sub[k].dot(&di));
        }
        pivots.push(dk);
        pinvs.push(di);
    }
    let mut y: Vec<Array1<f64>> = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut yk = r[k].clone();
        if k >= 1 {
            yk = yk - lower[k - 1].dot(&y[k - 1]);
        }
        y.push(yk);
    }
    let mut x: Vec<Array1<f64>> = vec![Array1::zeros(nx); kk];
    for k in (0..kk).rev() {
        let mut xk = pinvs[k].dot(&y[k]);
        if k + 1 < kk {
            xk = xk - lower[k].t().dot(&x[k + 1]);
        }
        x[k] = xk;
    }

    // Residual and Galerkin-orthogonality audit through the stored blocks.
    let mut res_sq = 0.0;
    let mut rhs_sq = 0.0;
    let mut energy = 0.0;
    let mut load = 0.0;
    for k in 0..kk {
        let mut sx = diag[k].dot(&x[k]);
        if k >= 1 {
            sx = sx + sub[k - 1].dot(&x[k - 1]);
        }
        if k + 1 < kk {
            sx = sx + sub[k].t().dot(&x[k + 1]);
        }
        energy += x[k].dot(&sx);
        load += x[k].dot(&r[k]);
        let diff = &sx - &r[k];
        res_sq += diff.dot(&diff);
        rhs_sq += r[k].dot(&r[k]);
    }
    let solve_residual = if rhs_sq == 0.0 {
        0.0
    } else {
        (res_sq / rhs_sq).sqrt()
    };
    if solve_residual > tol::GALERKIN_ENERGY_REL {
        return Err(HelmError::Solver(format!(
            "slab factorization left relative residual {solve_residual:.3e}"
        )));
    }
    let energy_defect = if energy == 0.0 {
        0.0
    } else {
        ((energy - load) / energy).abs()
    };

    // Assemble the full slab solution (pinned final slice) and both
    // derivative families; the reported time derivative uses the same
    // second-order nodal differences as the rest of the gradient pipeline.
    let mut w = Array2::<f64>::zeros((k_count, nx));
    for (k, xk) in x.iter().enumerate() {
        w.row_mut(k).assign(xk);
    }
    let mut comps = Vec::with_capacity(d + 1);
    for dm in &dmats {
        comps.push(w.dot(&dm.t()));
    }
    comps.push(time_fd_matrix(&t_nodes)?.dot(&w));

    let mean = slab_mean(&w, grid.t_weights());
    w.mapv_inplace(|v| v - mean);

    Ok(NeumannSolution {
        w: HalfSpaceField::new(grid.clone(), vec![w])?,
        gradw: HalfSpaceField::new(grid.clone(), comps)?,
        method: METHOD_DIRECT,
        diagnostics: NeumannDiagnostics {
            tail_ratio,
            tail_warning: false,
            data_neutral_defect: None,
            boundary_neutral_defect: None,
            energy_defect: Some(energy_defect),
            solve_residual: Some(solve_residual),
        },
    })
}

/// Conormal flux of a solution on the boundary slice,
/// `-(a . grad_x w + b dw/dt)` at the first time node.  For admissible data
/// this reproduces the trace of the boundary-direction forcing.
pub fn boundary_flux(sol: &NeumannSolution, coeffs: &Coefficients) -> Result<Array1<f64>> {
    let grid = sol.w.grid();
    check_coeffs(coeffs, grid)?;
    let d = grid.d();
    let nx = grid.nx();
    let mut flux = Array1::<f64>::zeros(nx);
    for j in 0..nx {
        let mut s = coeffs.b()[j] * sol.gradw.comp(d)[[0, j]];
        for (i, ai) in coeffs.a().iter().enumerate() {
            s += ai[j] * sol.gradw.comp(i)[[0, j]];
        }
        flux[j] = -s;
    }
    Ok(flux)
}

/// Observed stability of the mild route over a family of loads: each ratio
/// is the mixed norm of the solution gradient over the mixed norm of the
/// load, with inner exponent 2 and the given outer exponent.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityEstimate {
    /// Largest observed ratio.
    pub constant: f64,
    /// Per-load ratios, in input order.
    pub ratios: Vec<f64>,
}

/// Runs the mild route over a family of loads and reports the largest
/// gradient-to-data mixed-norm ratio.  Loads must be nonzero.
pub fn estimate_stability(
    bundle: &OperatorBundle,
    coeffs: &Coefficients,
    loads: &[HalfSpaceField],
    q: f64,
) -> Result<StabilityEstimate> {
    if loads.is_empty() {
        return Err(HelmError::Config(
            "stability estimation needs at least one load".into(),
        ));
    }
    let spec = MixedNormSpec::new(q, 2.0)?;
    let mut ratios = Vec::with_capacity(loads.len());
    for f in loads {
        let denom = mixed_norm(f, &spec);
        if denom == 0.0 {
            return Err(HelmError::Config(
                "stability estimation received an identically zero load".into(),
            ));
        }
        let data = build_neumann_data(f, coeffs)?;
        let sol = solve_formula(bundle, &data)?;
        ratios.push(mixed_norm(&sol.gradw, &spec) / denom);
    }
    let constant = ratios.iter().fold(0.0f64, |m, r| m.max(*r));
    Ok(StabilityEstimate { constant, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use crate::geometry::{build_coefficients, GraphDomainSpec};
    use crate::grid::{make_grid, TimePolicy};

    fn grid_with(n: usize, t_horizon: f64, count: usize) -> HalfGrid {
        make_grid(
            1,
            n,
            2.0 * PI,
            TimePolicy {
                t_horizon,
                count,
                grading_ratio: 1.0,
            },
        )
        .unwrap()
    }

    fn setup(
        domain: &GraphDomainSpec,
        n: usize,
        t_horizon: f64,
        count: usize,
    ) -> (HalfGrid, Coefficients, OperatorBundle) {
        let grid = grid_with(n, t_horizon, count);
        let coeffs = build_coefficients(domain, &grid).unwrap();
        let bundle = OperatorBundle::build(&coeffs, &grid).unwrap();
        (grid, coeffs, bundle)
    }

    /// `(F', F_last)` with separable components `profile(t) * shape(x)`.
    fn separable_load(
        grid: &HalfGrid,
        fprime: impl Fn(f64, f64) -> f64,
        flast: impl Fn(f64, f64) -> f64,
    ) -> HalfSpaceField {
        let nx = grid.nx();
        let h = grid.l() / nx as f64;
        let mut cp = Array2::<f64>::zeros((grid.t_nodes().len(), nx));
        let mut cl = cp.clone();
        for (k, &t) in grid.t_nodes().iter().enumerate() {
            for j in 0..nx {
                let x = j as f64 * h;
                cp[[k, j]] = fprime(t, x);
                cl[[k, j]] = flast(t, x);
            }
        }
        HalfSpaceField::new(grid.clone(), vec![cp, cl]).unwrap()
    }

    /// Band-limited load with a smooth compactly-decayed time profile
    /// `t^2 exp(-2t)`: both components random trigonometric polynomials.
    fn band_limited_load(grid: &HalfGrid, seed: u64) -> HalfSpaceField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coef = Vec::new();
        for _ in 0..2 {
            let modes: Vec<(f64, f64, f64)> = (1..=3)
                .map(|k| {
                    (
                        k as f64,
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            coef.push(modes);
        }
        let shape = |modes: &[(f64, f64, f64)], x: f64| -> f64 {
            modes
                .iter()
                .map(|(k, a, p)| a * (k * x + p).cos())
                .sum::<f64>()
        };
        let profile = |t: f64| t * t * (-2.0 * t).exp();
        let c0 = coef[0].clone();
        let c1 = coef[1].clone();
        separable_load(
            grid,
            move |t, x| profile(t) * shape(&c0, x),
            move |t, x| profile(t) * shape(&c1, x),
        )
    }

    fn rel_l2l2(a: &HalfSpaceField, b: &HalfSpaceField) -> f64 {
        let spec = MixedNormSpec::new(2.0, 2.0).unwrap();
        let diff = a.add(&b.scale(-1.0)).unwrap();
        mixed_norm(&diff, &spec) / mixed_norm(b, &spec)
    }

    #[test]
    fn data_preparation_follows_the_boundary_slope() {
        let (grid, coeffs, _) = setup(&GraphDomainSpec::sine(2.0 * PI, 1.0).unwrap(), 16, 2.0, 9);
        let f = band_limited_load(&grid, 7);
        let data = build_neumann_data(&f, &coeffs).unwrap();
        // Componentwise identity against an independent recomputation.
        for k in 0..grid.t_nodes().len() {
            for j in 0..grid.nx() {
                let expect = -(f.comp(1)[[k, j]] + coeffs.a()[0][j] * f.comp(0)[[k, j]]);
                assert!((data.g().comp(0)[[k, j]] - expect).abs() <= 1e-14);
            }
        }
        // The trace is exactly the first slice.
        for j in 0..grid.nx() {
            assert_eq!(data.trace_g()[j], data.g().comp(0)[[0, j]]);
        }
        // Zero load prepares zero data.
        let zero = HalfSpaceField::zeros(grid.clone(), 2);
        let zd = build_neumann_data(&zero, &coeffs).unwrap();
        assert_eq!(zd.g().comp(0).iter().fold(0.0f64, |m, x| m.max(x.abs())), 0.0);
        // Slope -1 at the node x = 0 of the unit sine profile cancels a
        // constant (1, 1) load there.
        let ones = separable_load(&grid, |_, _| 1.0, |_, _| 1.0);
        let od = build_neumann_data(&ones, &coeffs).unwrap();
        assert!(od.g().comp(0)[[0, 0]].abs() <= 1e-14);
    }

    #[test]
    fn zero_data_yields_zero_solutions_on_both_routes() {
        let (grid, coeffs, bundle) = setup(&GraphDomainSpec::sine(2.0 * PI, 0.5).unwrap(), 8, 3.0, 17);
        let data = build_neumann_data(&HalfSpaceField::zeros(grid.clone(), 2), &coeffs).unwrap();
        for sol in [
            solve_formula(&bundle, &data).unwrap(),
            solve_direct(&coeffs, &grid, &data).unwrap(),
        ] {
            let flat = |f: &HalfSpaceField| {
                f.components()
                    .iter()
                    .flat_map(|c| c.iter())
                    .fold(0.0f64, |m, x| m.max(x.abs()))
            };
            assert_eq!(flat(sol.w()), 0.0);
            assert_eq!(flat(sol.gradw()), 0.0);
            assert!(!sol.diagnostics().tail_warning);
        }
    }

    /// Over a flat boundary with load `(0, cos(x) exp(-t))` the problem
    /// separates: the profile solves `-u'' + u = exp(-t)` with unit flux
    /// slope at zero and decay, giving `w = ((t-1)/2) exp(-t) cos(x)`.
    fn resonant_oracle(grid: &HalfGrid) -> (HalfSpaceField, HalfSpaceField, HalfSpaceField) {
        let load = separable_load(grid, |_, _| 0.0, |t, x| (-t).exp() * x.cos());
        let w = separable_load(grid, |t, x| 0.5 * (t - 1.0) * (-t).exp() * x.cos(), |_, _| 0.0);
        let w = HalfSpaceField::new(grid.clone(), vec![w.comp(0).clone()]).unwrap();
        let dtw = separable_load(grid, |t, x| 0.5 * (2.0 - t) * (-t).exp() * x.cos(), |_, _| 0.0);
        let dtw = HalfSpaceField::new(grid.clone(), vec![dtw.comp(0).clone()]).unwrap();
        (load, w, dtw)
    }

    #[test]
    fn mild_route_reproduces_the_separable_resonant_profile() {
        let (grid, coeffs, bundle) = setup(&GraphDomainSpec::flat(2.0 * PI), 64, 12.0, 257);
        let (load, w_exact, dtw_exact) = resonant_oracle(&grid);
        let data = build_neumann_data(&load, &coeffs).unwrap();
        let sol = solve_formula(&bundle, &data).unwrap();
        assert_eq!(sol.method(), METHOD_FORMULA);
        assert!(rel_l2l2(sol.w(), &w_exact) <= tol::SOLVER_ORACLE_REL);
        let dtw = HalfSpaceField::new(grid.clone(), vec![sol.gradw().comp(1).clone()]).unwrap();
        assert!(rel_l2l2(&dtw, &dtw_exact) <= tol::SOLVER_ORACLE_REL);
        let d = sol.diagnostics();
        assert!(d.data_neutral_defect.unwrap() <= tol::COMPATIBILITY_REL);
        assert!(d.boundary_neutral_defect.unwrap() <= 1e-10);
        assert!(!d.tail_warning || d.tail_ratio <= 1e-4);
    }

    #[test]
    fn variational_route_reproduces_the_separable_resonant_profile() {
        let grid = grid_with(64, 12.0, 257);
        let coeffs = build_coefficients(&GraphDomainSpec::flat(2.0 * PI), &grid).unwrap();
        let (load, w_exact, _) = resonant_oracle(&grid);
        let data = build_neumann_data(&load, &coeffs).unwrap();
        let sol = solve_direct(&coeffs, &grid, &data).unwrap();
        assert_eq!(sol.method(), METHOD_DIRECT);
        assert!(rel_l2l2(sol.w(), &w_exact) <= tol::SOLVER_ORACLE_REL);
        let d = sol.diagnostics();
        assert!(d.energy_defect.unwrap() <= tol::GALERKIN_ENERGY_REL);
        assert!(d.solve_residual.unwrap() <= tol::GALERKIN_ENERGY_REL);
    }

    #[test]
    fn both_routes_agree_and_improve_under_refinement() {
        let domain = GraphDomainSpec::sine(2.0 * PI, 0.5).unwrap();
        let mut errs = Vec::new();
        for (n, count) in [(16usize, 65usize), (32, 129)] {
            let (grid, coeffs, bundle) = setup(&domain, n, 8.0, count);
            let load = band_limited_load(&grid, 42);
            let data = build_neumann_data(&load, &coeffs).unwrap();
            let mild = solve_formula(&bundle, &data).unwrap();
            let direct = solve_direct(&coeffs, &grid, &data).unwrap();
            errs.push(rel_l2l2(mild.gradw(), direct.gradw()));
        }
        assert!(
            errs[1] <= tol::CROSS_METHOD_REL,
            "fine-grid disagreement {} above {}",
            errs[1],
            tol::CROSS_METHOD_REL
        );
        assert!(
            errs[0] >= tol::CROSS_METHOD_IMPROVEMENT * errs[1],
            "refinement improved {}x only (coarse {}, fine {})",
            errs[0] / errs[1],
            errs[0],
            errs[1]
        );
    }

    #[test]
    fn boundary_flux_reproduces_the_prescribed_trace() {
        let (grid, coeffs, bundle) = setup(&GraphDomainSpec::sine(2.0 * PI, 0.5).unwrap(), 32, 8.0, 129);
        let load = band_limited_load(&grid, 11);
        let data = build_neumann_data(&load, &coeffs).unwrap();
        // The profile t^2 exp(-2t) vanishes at the boundary slice, so the
        // prescribed trace is zero and the computed flux must follow.
        assert_eq!(data.trace_g().iter().fold(0.0f64, |m, x| m.max(x.abs())), 0.0);
        let sol = solve_formula(&bundle, &data).unwrap();
        let flux = boundary_flux(&sol, &coeffs).unwrap();
        let hx = grid.x_weight().sqrt();
        let flux_norm = flux.dot(&flux).sqrt() * hx;
        let spec = MixedNormSpec::new(2.0, 2.0).unwrap();
        let load_norm = mixed_norm(&load, &spec);
        assert!(
            flux_norm <= tol::FLUX_TRACE_REL * load_norm,
            "flux leak {} vs allowance {}",
            flux_norm,
            tol::FLUX_TRACE_REL * load_norm
        );
    }

    #[test]
    fn both_routes_are_linear_in_the_data() {
        let (grid, coeffs, bundle) = setup(&GraphDomainSpec::sine(2.0 * PI, 0.5).unwrap(), 8, 8.0, 33);
        let f1 = band_limited_load(&grid, 1);
        let f2 = band_limited_load(&grid, 2);
        let combo = f1.scale(0.7).add(&f2.scale(-1.3)).unwrap();
        let solve_both = |f: &HalfSpaceField| {
            let data = build_neumann_data(f, &coeffs).unwrap();
            (
                solve_formula(&bundle, &data).unwrap(),
                solve_direct(&coeffs, &grid, &data).unwrap(),
            )
        };
        let (m1, d1) = solve_both(&f1);
        let (m2, d2) = solve_both(&f2);
        let (mc, dc) = solve_both(&combo);
        let mix = |a: &NeumannSolution, b: &NeumannSolution| {
            a.gradw().scale(0.7).add(&b.gradw().scale(-1.3)).unwrap()
        };
        assert!(rel_l2l2(&mix(&m1, &m2), mc.gradw()) <= 1e-9);
        assert!(rel_l2l2(&mix(&d1, &d2), dc.gradw()) <= 1e-9);
    }

    #[test]
    fn direct_route_rejects_undecayed_data() {
        let grid = grid_with(8, 4.0, 17);
        let coeffs = build_coefficients(&GraphDomainSpec::flat(2.0 * PI), &grid).unwrap();
        // exp(-t) keeps ~1.8% of its peak at depth 4: live data at the slab end.
        let load = separable_load(&grid, |_, _| 0.0, |t, x| (-t).exp() * x.cos());
        let data = build_neumann_data(&load, &coeffs).unwrap();
        let err = solve_direct(&coeffs, &grid, &data).unwrap_err();
        assert!(err.is_config(), "expected a configuration error, got {err}");
    }

    #[test]
    fn mild_route_flags_undecayed_tails() {
        let (grid, coeffs, bundle) = setup(&GraphDomainSpec::flat(2.0 * PI), 8, 4.0, 17);
        let load = separable_load(&grid, |_, _| 0.0, |t, x| (-t).exp() * x.cos());
        let data = build_neumann_data(&load, &coeffs).unwrap();
        let sol = solve_formula(&bundle, &data).unwrap();
        assert!(sol.diagnostics().tail_warning);
        assert!(sol.diagnostics().tail_ratio > tol::ANTICAUSAL_TAIL_REL);
    }

    #[test]
    fn solutions_are_slab_mean_free_with_consistent_gradients() {
        let (grid, coeffs, bundle) = setup(&GraphDomainSpec::sine(2.0 * PI, 0.5).unwrap(), 16, 8.0, 65);
        let load = band_limited_load(&grid, 5);
        let data = build_neumann_data(&load, &coeffs).unwrap();
        let dmats = spectral_gradient(&grid);
        for sol in [
            solve_formula(&bundle, &data).unwrap(),
            solve_direct(&coeffs, &grid, &data).unwrap(),
        ] {
            let scale = sol
                .w()
                .comp(0)
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()))
                .max(tol::TINY_FLOOR);
            let mean = slab_mean(sol.w().comp(0), grid.t_weights());
            assert!(mean.abs() <= 1e-12 * scale, "slab mean {mean} vs scale {scale}");
            // The tangential gradient component is the spectral derivative
            // of the reported potential (the normalization shift drops out).
            let dx = sol.w().comp(0).dot(&dmats[0].t());
            let defect = (&dx - sol.gradw().comp(0))
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()));
            let gscale = sol
                .gradw()
                .comp(0)
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()))
                .max(tol::TINY_FLOOR);
            assert!(defect <= 1e-12 * gscale);
        }
    }

    #[test]
    fn stability_probe_reports_finite_ratios() {
        let (grid, coeffs, bundle) = setup(&GraphDomainSpec::flat(2.0 * PI), 16, 6.0, 65);
        let loads: Vec<HalfSpaceField> =
            (0..3).map(|s| band_limited_load(&grid, 100 + s)).collect();
        let est = estimate_stability(&bundle, &coeffs, &loads, 2.0).unwrap();
        assert_eq!(est.ratios.len(), 3);
        assert!(est.constant.is_finite() && est.constant > 0.0);
        for r in &est.ratios {
            assert!(r.is_finite() && *r >= 0.0 && *r <= est.constant);
        }
        assert!(estimate_stability(&bundle, &coeffs, &[], 2.0).is_err());
        let zero = HalfSpaceField::zeros(grid.clone(), 2);
        assert!(estimate_stability(&bundle, &coeffs, &[zero], 2.0).is_err());
    }
}
