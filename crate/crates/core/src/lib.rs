pub mod cli;
pub mod integrators;
pub mod linalg;
pub mod nonlinear;
pub mod operators;
pub mod relaxation;
pub mod semidisc;
