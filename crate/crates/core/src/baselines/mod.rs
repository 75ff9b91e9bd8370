//! Reference estimators: Kalman filter/smoother, EKF/EKS on the extended
//! system, and particle filter/smoother.

pub mod extended;
pub mod kalman;
pub mod particle;
