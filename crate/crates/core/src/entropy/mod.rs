//! Quantization, noise surrogate, PMFs, context windows and the estimator.

pub mod context;
pub mod diagnostic;
pub mod estimator;
pub mod latent;
pub mod noise;
pub mod pmf;
pub mod rate;

pub use context::{extract_ctx_known, extract_ctx_prime};
pub use diagnostic::{normalization_diagnostic, NormalizationReport};
pub use estimator::{backward_position, estimate_grid, forward_position, estimate_params_f, estimate_position, EntropyParams};
pub use latent::{quantize, quantize_backward, Bounds, LatentGrid, Quantized};
pub use noise::add_uniform_noise;
pub use pmf::{pmf_gaussian_uniform, pmf_zero_mean};
pub use rate::{rate_scale_only, rate_y, rate_z, RateBreakdown, RateReport, P_FLOOR};
