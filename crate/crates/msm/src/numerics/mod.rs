//! Numeric substrate: tensors, seeded RNG, unitary FFT, tensor file IO.

pub mod fft;
pub mod io;
pub mod rng;
pub mod tensor;

pub use fft::{dft, dft2};
pub use rng::RngState;
pub use tensor::Tensor;
