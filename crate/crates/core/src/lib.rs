//! CPU volumetric mapping with directional bitmask kernels.
//!
//! Posed LiDAR scans are fused into a dense truncated signed distance field
//! where each voxel stores its distance as a run of low bits. Fusing a return
//! stamps a fixed `K³` kernel with bitwise AND, so the cost per return does
//! not depend on the map resolution. The field can be meshed with marching
//! cubes and scored against ground truth.

pub mod error;
pub mod grid;
pub mod integrator;
pub mod io;
pub mod kernels;
mod mc_tables;
pub mod mesher;
pub mod metrics;
pub mod motion;
pub mod oracle;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{decode_distance, Sign, Voxel, VoxelGrid};
pub use integrator::{FrameStats, IntegrationParams, Integrator};
pub use kernels::{KernelBank, KernelParams, ShadowModel};
pub use mesher::{extract_mesh, TriangleMesh};
pub use metrics::{evaluate, MetricsReport};
pub use motion::{CompensationMode, Pose, ScanFrame};
