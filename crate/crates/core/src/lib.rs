//! Point Transformer classification and transfer learning on point clouds.

pub mod datasets;
pub mod geometry;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod training;
pub mod verify;

pub use geometry::{NeighborIndex, Point, PointCloud, TriMesh};
pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, Var};

pub type TensorF64 = Tensor<f64>;
pub type TensorF32 = Tensor<f32>;
pub type TapeF64 = Tape<f64>;
pub type PointCloudF64 = PointCloud<f64>;
pub type TriMeshF64 = TriMesh<f64>;
