//! Small deterministic CNN engine: tensors, convolutions with hand-written
//! backward passes, batch norm, the two U-net variants, MSE, Adam, gradient
//! checking and checkpoints.

mod adam;
mod checkpoint;
pub mod conv;
mod gradcheck;
mod layers;
mod loss;
mod tensor;
mod unet;

pub use adam::{AdamState, DEFAULT_LR};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradReport};
pub use layers::{
    kaiming_uniform, leaky_relu, BatchNorm2d, Conv2d, ConvTranspose2d, LeakyRelu, Module, Param, BN_EPS,
    BN_MOMENTUM,
};
pub use loss::mse_loss;
pub use tensor::{concat_channels, split_channels, Tensor4};
pub use unet::{UNet, UNetConfig, PAD_VALUE};

use crate::error::{Error, Result};

/// One forward/backward/Adam update in training mode; returns the pre-update loss.
pub fn train_step<M: Module>(net: &mut M, input: &Tensor4, target: &Tensor4, adam: &mut AdamState) -> Result<f64> {
    net.zero_grad();
    let pred = net.forward(input, true)?;
    let (loss, grad) = mse_loss(&pred, target)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: adam.step + 1,
            loss,
        });
    }
    net.backward(&grad)?;
    adam.update(&mut net.params_mut())
        .map(|_| loss)
}

/// Loss in inference mode, without touching gradients or running statistics.
pub fn eval_loss<M: Module>(net: &mut M, input: &Tensor4, target: &Tensor4) -> Result<f64> {
    let pred = net.forward(input, false)?;
    Ok(mse_loss(&pred, target)?.0)
}
