//! Bergman kernels of harmonic forms on products of elliptic curves.

// `!(x > t)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod embedding;
pub mod error;
pub mod fit;
pub mod harmonic;
pub mod kernel;
pub mod model;
pub mod theta;

pub use embedding::{fs_distance, phi, ProjectivePoint, PullbackMethod, PullbackSample};
pub use error::{Error, Result};
pub use fit::{fit_linear, fit_slope, LinearFit};
pub use harmonic::{BasisJets, HarmonicBasis, SectionKind};
pub use kernel::{density, kernel, ExpansionModel, KernelSample};
pub use model::{MetricFrame, NormalChart, Point, ProductModel, TorusFactor};
pub use nalgebra::DMatrix;
pub use num_complex::Complex64;
pub use theta::ThetaSeries;
