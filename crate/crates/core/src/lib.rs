//! Spectral half-space calculus for Helmholtz decomposition over Lipschitz
//! graph domains.
//!
//! The library works on domains `Omega = { (x, x_{d+1}) : x_{d+1} > eta(x) }`
//! lying above the graph of a Lipschitz function `eta`. Flattening `Omega`
//! onto the half space by `Phi(x, x_{d+1}) = (x, x_{d+1} - eta(x))` turns the
//! Laplacian into a divergence-form operator with t-independent coefficients
//!
//! ```text
//!   A = [ I    a ]          a = -grad eta,   b = 1 + |grad eta|^2,
//!       [ a^T  b ]
//! ```
//!
//! and every boundary-value problem used here into algebra over three matrix
//! families on the boundary torus: multiplication operators `M_a`, `M_b`, the
//! spectral differentiation matrices `D`, and a one-parameter semigroup
//! generated by a Poisson-type operator `P` extracted from the quadratic
//! pencil `mu^2 M_b - mu (M_a D + D M_a) - D^T D`.
//!
//! Module layout:
//!
//! * [`grid`] - tensor grids, quadrature, spectral differentiation, mixed
//!   space-time norms, CSV field serialization.
//! * [`geometry`] - the graph-domain catalog, pull-back coefficients, and
//!   push-forward / pull-back of fields between `Omega` and the half space.
//! * [`operator`] - the operator pencil, extraction of the stabilizing
//!   solvent `P`, the boundary-to-boundary map `Lambda`, the adjoint
//!   generator `Q`, and two independent oracles (Fourier symbols, a
//!   finite-element strip discretization).
//! * [`semigroup`] - evaluation of `exp(-tP)` and `exp(-tQ)`, Duhamel
//!   convolutions on graded time grids, and composite causal operators.
//! * [`neumann`] - two solvers for the weak Neumann problem: a mild-solution
//!   (semigroup) route and a variational (space-time Galerkin) route.
//! * [`pipeline`] - the Helmholtz decomposition `f = u + grad p` on `Omega`,
//!   with certificates and stability sweeps.
//! * [`verify`] - the named-check verification battery emitting a JSON
//!   report; its test inputs are deterministic seeded families of
//!   band-limited fields, shared across resolutions.
//!
//! All operations are pure functions over immutable values; nothing in the
//! crate mutates shared state, so values may be used concurrently.

pub mod error;
pub mod geometry;
pub mod grid;
pub mod operator;
pub mod neumann;
pub mod pipeline;
pub mod semigroup;
pub mod tol;
pub mod verify;

pub use error::{HelmError, Result};
pub use geometry::{Coefficients, EtaSpec, GraphDomainSpec, OmegaVectorField};
pub use grid::{HalfGrid, HalfSpaceField, MixedNormSpec, TimePolicy};
pub use neumann::{
    build_neumann_data, estimate_stability, solve_direct, solve_formula, NeumannData,
    NeumannDiagnostics, NeumannSolution, StabilityEstimate,
};
pub use operator::{Certificate, CertKind, OperatorBundle};
pub use pipeline::{
    decompose, decompose_with, ensemble_field, gradient_test_battery, idempotence_check,
    stability_sweep, weak_divergence_residual, DecompositionDiagnostics, DecompositionResult,
    DecompositionSummary, IdempotenceReport, SweepCell, SweepConfig, SweepTable, TaperPolicy,
};
pub use semigroup::{anticausal_q, duhamel, op_t1, op_t2, AnticausalOutcome, SemigroupEvaluator, SgMode};
pub use verify::{
    coverage_audit, full_suite, reference_domains, run_identity_checks, run_semigroup_checks,
    run_solver_checks, Check, SuiteContext, SuiteSummary, VerificationReport, CLAIM_ANCHORS,
};
