//! Parameter store and basic trainable layers.
//!
//! Parameters are created in a fixed order from a seeded RNG, so two models
//! built with the same configuration and seed are bit-identical, and the
//! serialized name -> tensor mapping is stable across runs.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Whether a forward pass uses batch statistics (and whether it may update
/// the running averages) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Train { update_stats: bool },
    Eval,
}

impl RunMode {
    pub const TRAIN: RunMode = RunMode::Train { update_stats: true };
    /// Batch statistics without side effects; keeps repeated forward passes
    /// pure, which gradient checking relies on.
    pub const FROZEN: RunMode = RunMode::Train { update_stats: false };
}

pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
    vars: Vec<(String, Var)>,
    buffers: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType, seed: u64) -> Self {
        Self {
            device,
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
            vars: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn register(&mut self, name: &str, t: Tensor) -> Result<Var> {
        let var = Var::from_tensor(&t)?;
        self.vars.push((name.to_string(), var.clone()));
        Ok(var)
    }

    /// He (fan-in) normal initialization for conv weights.
    pub fn conv_weight(
        &mut self,
        name: &str,
        out_c: usize,
        in_c: usize,
        k: usize,
    ) -> Result<Var> {
        let fan_in = (in_c * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let n = out_c * in_c * k * k;
        let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(data, (out_c, in_c, k, k), &self.device)?
            .to_dtype(self.dtype)?;
        self.register(name, t)
    }

    /// He (fan-in) normal initialization for 1-D conv weights (out, in, k).
    pub fn conv1d_weight(
        &mut self,
        name: &str,
        out_c: usize,
        in_c: usize,
        k: usize,
    ) -> Result<Var> {
        let fan_in = (in_c * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let n = out_c * in_c * k;
        let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(data, (out_c, in_c, k), &self.device)?.to_dtype(self.dtype)?;
        self.register(name, t)
    }

    /// He (fan-in) normal initialization for linear weights (out, in).
    pub fn linear_weight(&mut self, name: &str, out_d: usize, in_d: usize) -> Result<Var> {
        let normal = Normal::new(0.0, (2.0 / in_d as f64).sqrt()).expect("valid std");
        let data: Vec<f64> = (0..out_d * in_d).map(|_| normal.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(data, (out_d, in_d), &self.device)?.to_dtype(self.dtype)?;
        self.register(name, t)
    }

    pub fn zeros(&mut self, name: &str, len: usize) -> Result<Var> {
        let t = Tensor::zeros(len, self.dtype, &self.device)?;
        self.register(name, t)
    }

    pub fn ones(&mut self, name: &str, len: usize) -> Result<Var> {
        let t = Tensor::ones(len, self.dtype, &self.device)?;
        self.register(name, t)
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffer(&mut self, name: &str, init: f64, len: usize) -> Result<Var> {
        let t = (Tensor::ones(len, self.dtype, &self.device)? * init)?;
        let var = Var::from_tensor(&t)?;
        self.buffers.push((name.to_string(), var.clone()));
        Ok(var)
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named_vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn param_count(&self) -> usize {
        self.vars
            .iter()
            .map(|(_, v)| v.as_tensor().elem_count())
            .sum()
    }

    /// All serializable tensors: trainable parameters plus buffers.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.vars
            .iter()
            .chain(self.buffers.iter())
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Overwrite every parameter and buffer from a loaded tensor map.
    pub fn load_named(&mut self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.vars.iter().chain(self.buffers.iter()) {
            let t = tensors.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor `{name}` in checkpoint"))
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.conv_weight(&format!("{name}.weight"), out_c, in_c, k)?;
        let bias = if bias {
            Some(store.zeros(&format!("{name}.bias"), out_c)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => {
                let b = b.as_tensor().reshape((1, b.as_tensor().dim(0)?, 1, 1))?;
                Ok(y.broadcast_add(&b)?)
            }
            None => Ok(y),
        }
    }
}

pub struct BatchNorm2d {
    weight: Var,
    bias: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.ones(&format!("{name}.weight"), channels)?,
            bias: store.zeros(&format!("{name}.bias"), channels)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), 0.0, channels)?,
            running_var: store.buffer(&format!("{name}.running_var"), 1.0, channels)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: RunMode) -> Result<Tensor> {
        let c = x.dim(1)?;
        let shape = (1, c, 1, 1);
        let (mean, var) = match mode {
            RunMode::Train { update_stats } => {
                let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered
                    .sqr()?
                    .mean_keepdim(0)?
                    .mean_keepdim(2)?
                    .mean_keepdim(3)?;
                if update_stats {
                    let m = self.momentum;
                    let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                        + (mean.detach().reshape(c)? * m)?)?;
                    let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                        + (var.detach().reshape(c)? * m)?)?;
                    self.running_mean.set(&new_mean)?;
                    self.running_var.set(&new_var)?;
                }
                (mean, var)
            }
            RunMode::Eval => (
                self.running_mean.as_tensor().reshape(shape)?,
                self.running_var.as_tensor().reshape(shape)?,
            ),
        };
        let normed = x
            .broadcast_sub(&mean.reshape(shape)?)?
            .broadcast_div(&(var.reshape(shape)? + self.eps)?.sqrt()?)?;
        let w = self.weight.as_tensor().reshape(shape)?;
        let b = self.bias.as_tensor().reshape(shape)?;
        Ok(normed.broadcast_mul(&w)?.broadcast_add(&b)?)
    }
}

/// 3x3 convolution + batch norm + ReLU, the decoder building block.
pub struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), in_c, out_c, k, stride, k / 2, false)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), out_c)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: RunMode) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, mode)?.relu().map_err(Into::into)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let dev = Device::Cpu;
        let mut a = ParamStore::new(dev.clone(), DType::F32, 11);
        let mut b = ParamStore::new(dev, DType::F32, 11);
        let wa = a.conv_weight("w", 8, 4, 3).unwrap();
        let wb = b.conv_weight("w", 8, 4, 3).unwrap();
        let va = wa.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = wb.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn batch_norm_normalizes_in_train_mode() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(dev.clone(), DType::F32, 0);
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let x = Tensor::rand(0f32, 4f32, (3, 2, 5, 5), &dev).unwrap();
        let y = bn.forward(&x, RunMode::FROZEN).unwrap();
        // Per-channel output mean ~0 and variance ~1.
        let mean = y
            .mean_keepdim(0)
            .unwrap()
            .mean_keepdim(2)
            .unwrap()
            .mean_keepdim(3)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        for m in mean {
            assert!(m.abs() < 1e-5);
        }
    }

    #[test]
    fn frozen_mode_leaves_running_stats_untouched() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(dev.clone(), DType::F32, 0);
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let x = Tensor::rand(0f32, 4f32, (3, 2, 5, 5), &dev).unwrap();
        let before: Vec<f32> = bn.running_mean.as_tensor().to_vec1().unwrap();
        bn.forward(&x, RunMode::FROZEN).unwrap();
        let after: Vec<f32> = bn.running_mean.as_tensor().to_vec1().unwrap();
        assert_eq!(before, after);
        bn.forward(&x, RunMode::TRAIN).unwrap();
        let updated: Vec<f32> = bn.running_mean.as_tensor().to_vec1().unwrap();
        assert_ne!(before, updated);
    }

    #[test]
    fn load_named_round_trips_bit_exactly() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(dev.clone(), DType::F32, 3);
        let _ = Conv2d::new(&mut store, "c", 3, 4, 3, 1, 1, true).unwrap();
        let saved: HashMap<String, Tensor> = store.named_tensors().into_iter().collect();

        let mut other = ParamStore::new(dev, DType::F32, 999);
        let _ = Conv2d::new(&mut other, "c", 3, 4, 3, 1, 1, true).unwrap();
        other.load_named(&saved).unwrap();
        for (name, var) in other.named_vars() {
            let a = saved[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = var
                .as_tensor()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            assert_eq!(
                a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
