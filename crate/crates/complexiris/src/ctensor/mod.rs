//! Complex scalars, dense complex tensors, and the 2-D FFT.
//!
//! Storage is split-plane: one contiguous real array and one contiguous
//! imaginary array of identical length, so a tensor with `C` complex
//! channels maps directly onto a `2C` real-channel feature-map layout
//! (real half first, imaginary half second).

mod fft;
mod shape;
mod tensor;

pub use fft::{fft2, ifft2};
pub use shape::Shape;
pub use tensor::{ComplexTensor, RealTensor};
