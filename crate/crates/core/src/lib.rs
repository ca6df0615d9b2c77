//! Surface-integral-equation solver for arrays of PEC scatterers.
//!
//! Each array element is replaced by a reduced-order macromodel: an
//! equivalent electric current on an enclosing closed surface plus a
//! transfer operator relating it to the physical scatterer current. The
//! exterior problem is then solved only for the equivalent-surface field
//! coefficients, optionally with FFT-accelerated (AIM) coupling.

pub mod aim;
pub mod basis;
pub mod config;
pub mod excitation;
pub mod kernels;
pub mod linalg;
pub mod macromodel;
pub mod mesh;
pub mod oracle;
pub mod postproc;
pub mod quadrature;
pub mod report;
pub mod solver;
pub mod system;

pub type C64 = num_complex::Complex<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type CMat = nalgebra::DMatrix<C64>;
pub type CVec = nalgebra::DVector<C64>;
