//! Learning observable IMU integration terms.
//!
//! A recurrent network refines raw IMU samples; refined samples are
//! preintegrated into the rotation, velocity and position terms
//! `(Δq, Δβ, Δγ)` that depend on the measurements alone, and the network is
//! trained against terms derived from ground-truth poses.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod imu;
pub mod losses;
pub mod net;
pub mod preint;
pub mod so3;
pub mod trainer;

pub use error::{Error, Result};
pub use imu::{GravityModel, ImuIntrinsics, ImuSample, ImuState};
pub use preint::{PreintegrationDelta, Scheme};
pub use so3::{UnitQuaternion, Vec3};
