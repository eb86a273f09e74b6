//! Stereo visual odometry and occupancy mapping for scenes with moving
//! objects.
//!
//! The pipeline tracks a calibrated stereo camera frame to frame while
//! rejecting image features that sit on moving objects. Two independent
//! filters feed the rejection: per-pixel semantic label masks (produced
//! offline by any segmenter) and an epipolar-consistency check driven by
//! sparse optical flow. Surviving features drive a motion-only pose
//! estimator; a log-odds voxel map fuses per-frame point clouds posed by
//! the estimated trajectory, so departed objects leave no ghost geometry.
//!
//! Modules follow the processing order:
//!
//! * [`imaging`] — rasters, pyramids, FAST/Harris detection, ORB descriptors
//! * [`flow`] — pyramidal Lucas-Kanade tracking of Harris points
//! * [`geometry`] — camera models, fundamental matrix, epipolar tests, stereo
//! * [`semantics`] — label masks, dynamic-class policy, movement check
//! * [`odometry`] — feature matching and motion-only pose estimation
//! * [`mapping`] — point clouds and the log-odds voxel map
//! * [`evaluation`] — trajectory alignment and absolute pose error
//! * [`datasets`] — sequence loaders and the settings file
//! * [`synth`] — synthetic stereo scene renderer with exact ground truth

pub mod config;
pub mod datasets;
pub mod evaluation;
pub mod flow;
pub mod geometry;
pub mod imaging;
pub mod mapping;
pub mod odometry;
pub mod semantics;
pub mod synth;

pub use config::Config;
pub use geometry::{CameraIntrinsics, StereoRig};
pub use odometry::{PoseSE3, Trajectory};
