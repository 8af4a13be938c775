//! Ray-space Gaussian rendering, fitting and evaluation for equirectangular
//! panoramas.
//!
//! Gaussians are evaluated per pixel ray on the unit sphere instead of being
//! splatted through a linearized projection, so the same code path serves any
//! orientation of an ERP camera.

pub mod backward;
pub mod camera;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod losses;
pub mod optim;
pub mod render;
pub mod sh;
pub mod ssim;
pub mod train;

pub use camera::{ErpCamera, SphericalAngles};
pub use error::{Error, Result};
pub use gaussian::{Gaussian3D, GaussianScene, LocalRay};
pub use render::{render, RenderOptions, RenderOutput};
