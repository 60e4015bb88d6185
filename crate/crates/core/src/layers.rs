//! Parameterized layer wrappers. Each layer registers its tensors in a
//! [`ParamSet`] under a dotted name prefix and replays itself onto a [`Tape`]
//! at forward time.

use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{BnMode, Tape, VarId};
use crate::tensor::Tensor;
use crate::trainer::xavier_uniform;

/// Batchnorm defaults; the running state folds with `r = 0.9 r + 0.1 batch`.
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        let w = xavier_uniform::<T>(&[out_ch, in_ch, kernel, kernel], fan_in, fan_out, rng);
        let weight = ps.register(format!("{name}.weight"), w, true, true)?;
        let bias = if bias {
            Some(ps.register(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true, false)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: VarId,
    ) -> Result<VarId> {
        let w = tape.param(ps, self.weight);
        let b = self.bias.map(|b| tape.param(ps, b));
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn init<T: Scalar>(ps: &mut ParamSet<T>, name: &str, channels: usize) -> Result<Self> {
        let gamma = ps.register(
            format!("{name}.gamma"),
            Tensor::full(&[channels], T::one()),
            true,
            false,
        )?;
        let beta = ps.register(format!("{name}.beta"), Tensor::zeros(&[channels]), true, false)?;
        let running_mean = ps.register(
            format!("{name}.running_mean"),
            Tensor::zeros(&[channels]),
            false,
            false,
        )?;
        let running_var = ps.register(
            format!("{name}.running_var"),
            Tensor::full(&[channels], T::one()),
            false,
            false,
        )?;
        Ok(BatchNorm2d {
            gamma,
            beta,
            running_mean,
            running_var,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &mut ParamSet<T>,
        x: VarId,
        mode: BnMode,
    ) -> Result<VarId> {
        let gamma = tape.param(ps, self.gamma);
        let beta = tape.param(ps, self.beta);
        tape.batchnorm2d(
            ps,
            x,
            gamma,
            beta,
            self.running_mean,
            self.running_var,
            mode,
            BN_EPS,
            BN_MOMENTUM,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn init<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        let w = xavier_uniform::<T>(&[in_features, out_features], in_features, out_features, rng);
        let weight = ps.register(format!("{name}.weight"), w, true, true)?;
        let bias = if bias {
            Some(ps.register(
                format!("{name}.bias"),
                Tensor::zeros(&[out_features]),
                true,
                false,
            )?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        x: VarId,
    ) -> Result<VarId> {
        let w = tape.param(ps, self.weight);
        let b = self.bias.map(|b| tape.param(ps, b));
        tape.linear(x, w, b)
    }
}
