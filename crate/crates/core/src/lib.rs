pub mod cli;
pub mod ctf;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod fft;
pub mod geometry;
pub mod io;
pub mod nufft;
pub mod projector;
pub mod sim;
pub mod solver;
pub mod toeplitz;
pub mod volume;
