//! Jacobi flow on SMP matrices for two-interval spectral sets.
//!
//! The crate covers the isospectral curve and its map, eventually-periodic
//! SMP operators, the block-unitary flow and its inverse, extraction of the
//! associated Jacobi coefficients, the Killip–Simon functionals and the
//! uniformization data of the set `E = V^{-1}([-2, 2])`.

pub mod banded;
pub mod error;
pub mod flow;
pub mod ks;
pub mod orbit;
pub mod parallel;
pub mod quadrature;
pub mod sample;
pub mod smp;
pub mod spectral;
pub mod tol;
pub mod uniformization;
pub mod verify;

pub use error::{Error, Result};
pub use flow::{
    curve_flow_map, curve_flow_map_inverse, extract_jacobi, flow_iterate, flow_step,
    flow_step_inverse, geometric_flow_step, krylov_jacobi_oracle, periodic_jacobi_coeffs, u_block,
    JacobiOperator, UBlock,
};
pub use ks::{
    blocks_trace_form, delta_half, ks_full, ks_half, main_lemma_residual, v_decomposition,
    KsReport, VBandDecomposition,
};
pub use orbit::{orbit, Closure, Orbit};
pub use parallel::Execution;
pub use smp::{
    cyclicity_check, inverse_band_entries, tau_involution, tilde_e0, CoreWindow,
    CyclicityReport, IndexedVec, InverseBands, SmpOperator,
};
pub use spectral::{
    band_endpoints, build_periodic_smp, curve_residual, curve_solve_p1, delta_eval,
    magic_residual, v_eval, CurveParams, CurvePoint, TwoIntervalSet,
};
pub use tol::Tolerances;
pub use uniformization::{group_multiplier, uniformizing_coordinate, UniformizationData};
