pub mod band;
pub mod coefficients;
pub mod dynamics;
pub mod error;
pub mod fgr;
pub mod lattice;
pub mod linearization;
pub mod model;
pub mod operator;
pub mod resolvent;
pub mod soliton;
pub mod verify;

pub use num_complex::Complex64 as C64;
