//! Depth-map geometry and evaluation toolkit.
//!
//! The pieces line up as a pipeline: sparse depth comes in (or is
//! simulated from dense ground truth with [`sample_sparse`]), gets
//! densified by validity-aware morphological [`closing`], is
//! backprojected through the camera into points, and per-pixel surface
//! normals are fitted over local windows ([`normals_from_depth`]).
//! Training losses with analytic gradients live in [`losses`];
//! standard depth and normal metrics in [`metrics`]; 16-bit PNG and
//! camera-file codecs in [`io`]; Sobel gradients, edge masks, and
//! Gaussian smoothing in [`filtering`].
//!
//! Numeric code is generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`). Types default to `f64`; `*F32` aliases at the
//! crate root pick the single-precision instantiations.

pub mod densify;
pub mod error;
pub mod filtering;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod sampling;
pub mod scalar;

pub use densify::{closing, density_stats, dilate, erode, ClosingConfig, DensityStats};
pub use error::{Error, Result};
pub use filtering::{
    edge_mask, gaussian_blur, sobel, EdgeConfig, GaussianConfig, GradientField,
};
pub use geometry::{
    backproject, fit_normal, normals_from_depth, NormalMap, PlaneFitConfig, PointCloud,
};
pub use grid::{
    apply_cap, CameraIntrinsics, ChannelField, CropRect, DepthMap, GrayImage, ScalarField,
    ValidityMask,
};
pub use losses::{
    cosine_dissimilarity, evaluate, loss_2p5d, loss_cosine, loss_cross_entropy,
    loss_cross_entropy_gradient, loss_gradient, LossKind, LossSpec, Reduction,
};
pub use metrics::{
    depth_metrics, depth_metrics_scaled, normals_metrics, DepthMetricsReport,
    NormalsMetricsReport,
};
pub use sampling::{sample_sparse, SamplerConfig, GENERATOR};
pub use scalar::Scalar;

pub type DepthMapF32 = DepthMap<f32>;
pub type GrayImageF32 = GrayImage<f32>;
pub type ScalarFieldF32 = ScalarField<f32>;
pub type ChannelFieldF32 = ChannelField<f32>;
pub type PointCloudF32 = PointCloud<f32>;
pub type NormalMapF32 = NormalMap<f32>;
pub type CameraIntrinsicsF32 = CameraIntrinsics<f32>;
