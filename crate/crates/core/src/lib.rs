//! Low-light image enhancement by nonlocal Retinex decomposition.
//!
//! An observation `I` is color-corrected to `Ĩ`, then split into reflectance
//! `R ∈ [0,1]^{C×M}`, illumination `L ∈ R^M` (with `L ≥ max_k Ĩ_k`) and noise
//! `N` by minimizing
//!
//! ```text
//! ½‖R∘L + N − Ĩ‖² + α‖∇_w R‖ + (β/2)‖∇L‖ + (λ/2)‖N‖² + (μ/2)‖(∇R − ∇Î)_ŵ‖²
//! ```
//!
//! with a primal-dual scheme. `∇_w` is a nonlocal gradient over
//! patch-similarity weights on `Ĩ`, and the last term ties the reflectance
//! gradient to the gradient of a denoised guide `Î` through gradient-patch
//! weights `ŵ`. The enhanced image is `L^γ ∘ R` with `γ` chosen so that
//! `mean(L^γ) = 0.5`.
//!
//! Everything is generic over the scalar type ([`Real`]: `f32` or `f64`);
//! the `*F32` / `*F64` aliases below name the concrete instantiations.

pub mod error;
pub mod gamma;
pub mod image;
pub mod metrics;
pub mod operators;
pub mod preprocess;
pub mod scalar;
pub mod solver;
pub mod weights;

pub use crate::error::{Error, Result};
pub use crate::gamma::{auto_gamma, enhance, GammaEstimate, GammaParams, GammaStatus};
pub use crate::image::{load_image, save_image, BitDepth, ColorImage, GradField, ScalarField};
pub use crate::metrics::{psnr, ssim, MetricReport, SsimColor};
pub use crate::operators::{NLField, NLGradFidField};
pub use crate::preprocess::{build_guide, color_correct, denoise, ColorCorrectionParams, GuideParams};
pub use crate::scalar::Real;
pub use crate::solver::{
    Decomposition, DecompositionState, Diagnostics, GradientFidelity, IllumPrior, Problem, ReflPrior,
    SolverParams,
};
pub use crate::weights::{
    build_gradient_weights, build_intensity_weights, NLGradWeights, NLWeights, Stencil, WeightParams,
};

pub type ColorImageF32 = ColorImage<f32>;
pub type ColorImageF64 = ColorImage<f64>;
pub type ScalarFieldF32 = ScalarField<f32>;
pub type ScalarFieldF64 = ScalarField<f64>;
pub type NLWeightsF64 = NLWeights<f64>;
pub type NLGradWeightsF64 = NLGradWeights<f64>;
pub type SolverParamsF32 = SolverParams<f32>;
pub type SolverParamsF64 = SolverParams<f64>;
pub type DecompositionF32 = Decomposition<f32>;
pub type DecompositionF64 = Decomposition<f64>;
