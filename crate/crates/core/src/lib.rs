//! Inference kernels for compact point-cloud classifiers whose residual MLP
//! blocks are replaced by explicit-Euler ODE blocks.
//!
//! The crate is `no_std` (with `alloc`) so the same code can back a host
//! reference and an embedded target. Everything is generic over [`Scalar`],
//! with `f64` as the reference arithmetic and [`Fixed24`] (signed Q8.16) as
//! the accelerator arithmetic.
//!
//! ```
//! use pointode_core::{build_sampling_plan, infer, ModelConfig, ModelParams, NumericMode, PointCloud};
//!
//! let config = ModelConfig { group_size: 4, ..ModelConfig::elite() };
//! let params = ModelParams::build(&config, 7).unwrap();
//! let pts: Vec<[f64; 3]> = (0..32).map(|i| {
//!     let a = i as f64 * 0.7;
//!     [a.cos() * 0.5, a.sin() * 0.5, (i as f64 / 32.0) - 0.5]
//! }).collect();
//! let cloud = PointCloud::new(pts).unwrap();
//! let plan = build_sampling_plan(&cloud, &config).unwrap();
//! let out = infer(&cloud, &plan, &params, NumericMode::Float).unwrap();
//! assert_eq!(out.logits.len(), 40);
//! assert_eq!(out.stage_features[3].shape(), (2, 256));
//! ```
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

mod error;
pub mod fixed;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod numeric;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use fixed::{FixedFormat, Fixed24, Rounding};
pub use geometry::{build_sampling_plan, farthest_point_sample, knn, normalize_unit_sphere, GroupIndex, PointCloud, SamplingPlan};
pub use model::{count_flops, count_params, infer, InferenceResult, ModelConfig, ModelParams, NumericMode, Variant};
pub use numeric::Scalar;
pub use tensor::Matrix;
