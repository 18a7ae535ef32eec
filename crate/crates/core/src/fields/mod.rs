//! Domain models for the MFG fields: the ground metric and interaction
//! kernel parameterizations, the staggered density/velocity state, the torus
//! convolution, and the four discrete constraint residuals.

pub mod kernel;
pub mod metric;
pub mod residuals;
pub mod state;

pub use kernel::{
    cross_correlate_direct, cross_correlate_fft, quotient_of_offset, quotient_shifts, relative_l2,
    ExpandedKernel, InteractionKernel, FFT_CUTOVER_M,
};
pub use metric::{EntryMaps, GroundMetricModel, RunningCostF, SymMat2};
pub use residuals::{
    continuity_residual, curl_residual, hje_residual, loop_sums, residuals, xi_field, xi_kernel,
    xi_metric, Energy, ResidualNorms, Residuals,
};
pub use state::{StaggeredState, RHO_FLOOR};
