pub mod backward;
pub mod baselines;
pub mod error;
pub mod gauss;
pub mod harness;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod nonlinearity;
pub mod qgsf;
pub mod qgss;
pub mod quadrature;
pub mod reduction;
pub mod rng;
pub mod simulate;
