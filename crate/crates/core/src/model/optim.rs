//! Adam optimizer with serializable moment state, so checkpoint resume
//! reproduces the original run exactly.

use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

pub struct Adam {
    entries: Vec<AdamEntry>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

struct AdamEntry {
    name: String,
    var: Var,
    m: Var,
    v: Var,
}

impl Adam {
    pub fn new(named_vars: &[(String, Var)], lr: f64) -> Result<Self> {
        let entries = named_vars
            .iter()
            .map(|(name, var)| {
                let zeros = var.as_tensor().zeros_like()?;
                Ok(AdamEntry {
                    name: name.clone(),
                    var: var.clone(),
                    m: Var::from_tensor(&zeros)?,
                    v: Var::from_tensor(&zeros)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for e in &self.entries {
            let Some(grad) = grads.get(e.var.as_tensor()) else {
                continue;
            };
            let m = ((e.m.as_tensor() * self.beta1)? + (grad * (1.0 - self.beta1))?)?;
            let v = ((e.v.as_tensor() * self.beta2)? + (grad.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&m * (1.0 / bc1))?;
            let v_hat = (&v * (1.0 / bc2))?;
            let update = (m_hat * self.lr)?.div(&(v_hat.sqrt()? + self.eps)?)?;
            e.var.set(&e.var.as_tensor().sub(&update)?)?;
            e.m.set(&m)?;
            e.v.set(&v)?;
        }
        Ok(())
    }

    /// Moment tensors for checkpointing, prefixed to avoid name clashes.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .flat_map(|e| {
                [
                    (format!("optim.m.{}", e.name), e.m.as_tensor().clone()),
                    (format!("optim.v.{}", e.name), e.v.as_tensor().clone()),
                ]
            })
            .collect()
    }

    pub fn load_state(&mut self, tensors: &HashMap<String, Tensor>, t: u64) -> Result<()> {
        for e in &self.entries {
            let m = tensors
                .get(&format!("optim.m.{}", e.name))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for {}", e.name)))?;
            let v = tensors
                .get(&format!("optim.v.{}", e.name))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for {}", e.name)))?;
            e.m.set(&m.to_dtype(e.m.as_tensor().dtype())?)?;
            e.v.set(&v.to_dtype(e.v.as_tensor().dtype())?)?;
        }
        self.t = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let dev = Device::Cpu;
        let var = Var::from_tensor(&Tensor::rand(0f32, 1f32, (4, 4), &dev).unwrap()).unwrap();
        let before = var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let mut opt = Adam::new(&[("w".into(), var.clone())], 0.0).unwrap();
        let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        opt.step(&grads).unwrap();
        let after = var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn descends_a_quadratic() {
        let dev = Device::Cpu;
        let var = Var::from_tensor(&Tensor::from_vec(vec![2.0f32, -3.0], (2,), &dev).unwrap())
            .unwrap();
        let mut opt = Adam::new(&[("x".into(), var.clone())], 0.1).unwrap();
        for _ in 0..200 {
            let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&grads).unwrap();
        }
        let v = var.as_tensor().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|x| x.abs() < 0.05), "{v:?}");
    }

    #[test]
    fn state_round_trip_resumes_identically() {
        let dev = Device::Cpu;
        let start = Tensor::from_vec(vec![1.0f32, 2.0, 3.0], (3,), &dev).unwrap();

        // Run A: 10 steps straight.
        let var_a = Var::from_tensor(&start).unwrap();
        let mut opt_a = Adam::new(&[("x".into(), var_a.clone())], 0.05).unwrap();
        for _ in 0..10 {
            let grads = var_a.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
            opt_a.step(&grads).unwrap();
        }

        // Run B: 5 steps, snapshot, restore into a fresh optimizer, 5 more.
        let var_b = Var::from_tensor(&start).unwrap();
        let mut opt_b = Adam::new(&[("x".into(), var_b.clone())], 0.05).unwrap();
        for _ in 0..5 {
            let grads = var_b.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
            opt_b.step(&grads).unwrap();
        }
        let snapshot: HashMap<String, Tensor> = opt_b.state_tensors().into_iter().collect();
        let t = opt_b.step_count();
        let mut opt_b2 = Adam::new(&[("x".into(), var_b.clone())], 0.05).unwrap();
        opt_b2.load_state(&snapshot, t).unwrap();
        for _ in 0..5 {
            let grads = var_b.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
            opt_b2.step(&grads).unwrap();
        }

        let a = var_a.as_tensor().to_vec1::<f32>().unwrap();
        let b = var_b.as_tensor().to_vec1::<f32>().unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}
