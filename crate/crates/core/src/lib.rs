pub mod defcomplex;
pub mod error;
pub mod fiber;
pub mod family;
pub mod forms;
pub mod grid;
pub mod linalg;
pub mod quiver;
pub mod scenario;
pub mod torus;
pub mod vortex;
pub mod wpgeom;

pub use error::{Error, Result};
