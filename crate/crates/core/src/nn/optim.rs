//! Optimizers over a `ParamStore`: SGD with momentum and Adam.
//!
//! Both accept an optional flat binary mask (one bit per parameter, entry
//! order). Masked positions are pinned to exactly zero: value, gradient
//! effect, and state buffers.

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    step: u64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(store: &ParamStore, lr: f64, momentum: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        let velocity = store.entries().iter().map(|e| vec![0.0; e.data.len()]).collect();
        SgdMomentum { lr, momentum, step: 0, velocity }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// θ ← θ − lr·v with v ← momentum·v + g, reading gradients from the
    /// store's buffers. Masked positions stay exactly zero.
    pub fn step(&mut self, store: &mut ParamStore, mask: Option<&[bool]>) -> Result<()> {
        check_mask(store, mask)?;
        let mut off = 0;
        for (ei, vel) in self.velocity.iter_mut().enumerate() {
            let entry = &mut store.entries_mut()[ei];
            for (i, v) in vel.iter_mut().enumerate() {
                if masked(mask, off + i) {
                    entry.data[i] = 0.0;
                    *v = 0.0;
                    continue;
                }
                *v = self.momentum * *v + entry.grad[i];
                entry.data[i] -= self.lr * *v;
            }
            off += entry.data.len();
        }
        self.step += 1;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        let m = store.entries().iter().map(|e| vec![0.0; e.data.len()]).collect();
        let v = store.entries().iter().map(|e| vec![0.0; e.data.len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, mask: Option<&[bool]>) -> Result<()> {
        check_mask(store, mask)?;
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let mut off = 0;
        for ei in 0..self.m.len() {
            let entry = &mut store.entries_mut()[ei];
            for i in 0..entry.data.len() {
                if masked(mask, off + i) {
                    entry.data[i] = 0.0;
                    self.m[ei][i] = 0.0;
                    self.v[ei][i] = 0.0;
                    continue;
                }
                let g = entry.grad[i];
                self.m[ei][i] = self.beta1 * self.m[ei][i] + (1.0 - self.beta1) * g;
                self.v[ei][i] = self.beta2 * self.v[ei][i] + (1.0 - self.beta2) * g * g;
                let mh = self.m[ei][i] / bc1;
                let vh = self.v[ei][i] / bc2;
                entry.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            off += entry.data.len();
        }
        Ok(())
    }
}

fn check_mask(store: &ParamStore, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != store.total_len() {
            return Err(Error::Config(format!(
                "mask length {} != parameter count {}",
                m.len(),
                store.total_len()
            )));
        }
    }
    Ok(())
}

fn masked(mask: Option<&[bool]>, flat_idx: usize) -> bool {
    mask.map(|m| !m[flat_idx]).unwrap_or(false)
}
