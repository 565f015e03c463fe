//! Non-neural core of a monocular vehicle-following pipeline.
//!
//! Geometry and depth-map machinery, virtual-normal sampling and loss,
//! bounding-box IoU/GIoU, Shi-Tomasi + Lucas-Kanade feature tracking,
//! DLT perspective-n-point, histogram-based target depth extraction,
//! asynchronous Kalman fusion of two depth sources, pure-pursuit control,
//! depth-map error metrics, and a synthetic scene simulator that ties the
//! pieces together end to end.

pub mod control;
pub mod depth_target;
pub mod detect;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pnp;
pub mod sim;
pub mod vnl;
