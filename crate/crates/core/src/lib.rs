pub mod catalog;
pub mod error;
pub mod linalg;
pub mod walk;
pub mod monitoring;
pub mod ergodic;
pub mod sampling;
pub mod quadrature;
pub mod continuous;
pub mod trajectory;
