//! Complex-valued network operations: convolution, zReLU, batch
//! normalization, spectral pooling, and Gabor kernel initialization.

mod act;
mod bn;
mod conv;
mod gabor;
mod pool;

pub use act::{zrelu, zrelu_backward};
pub use bn::{
    bn_backward, bn_eval_forward, bn_train_forward, bn_update_running, BNState, BnCtx,
};
pub use conv::{complex_conv2d, conv_grad_input, conv_grad_kernel, conv_out_extent, ConvSpec};
pub use gabor::{gabor_bank, gabor_grid, gabor_kernel, GaborParams};
pub use pool::{spectral_pool, spectral_pool_backward, spectral_upsample};
