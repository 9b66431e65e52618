//! DC optimal power flow price generation and machine-learning surrogate
//! benchmarking.
//!
//! The numeric kernels ([`qp`], [`linalg`], [`models::scaler`],
//! [`models::mlp`], [`eval::mape`]) are generic over [`scalar::Scalar`];
//! grid, dataset and tree code works in `f64`.

pub mod dataset;
pub mod eval;
pub mod grid;
pub mod linalg;
pub mod models;
pub mod opf;
pub mod presets;
pub mod qp;
pub mod scalar;
pub mod scenario;
pub mod seed;

pub type QpProblemF64 = qp::QpProblem<f64>;
pub type QpProblemF32 = qp::QpProblem<f32>;
pub type QpSolutionF64 = qp::QpSolution<f64>;
pub type QpSolutionF32 = qp::QpSolution<f32>;
pub type ScalerF64 = models::ScalerParams<f64>;
pub type ScalerF32 = models::ScalerParams<f32>;
pub type MlpF64 = models::Mlp<f64>;
pub type MlpF32 = models::Mlp<f32>;
