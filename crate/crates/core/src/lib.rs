pub mod error;
pub mod measurement;
pub mod model;
pub mod montecarlo;
pub mod psf;
pub mod quadrature;
pub mod sld;
