//! Adam with bias-corrected moments.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Effective step size: the configured base rate over the minibatch size.
    pub lr: f64,
}

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("optimizer state file has bad magic")]
    BadMagic,
    #[error("optimizer state has {found} parameters, model has {expected}")]
    Shape { found: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

const MAGIC: &[u8; 8] = b"SOPTADAM";

impl AdamState {
    pub fn new(n_params: usize, base_lr: f64, minibatch: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            lr: base_lr / minibatch.max(1) as f64,
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.m.len() as u64).to_le_bytes())?;
        w.write_all(&self.t.to_le_bytes())?;
        for x in [self.beta1, self.beta2, self.eps, self.lr] {
            w.write_all(&x.to_le_bytes())?;
        }
        for x in self.m.iter().chain(&self.v) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, expected_params: usize) -> Result<Self, AdamError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AdamError::BadMagic);
        }
        let mut b = [0u8; 8];
        let mut next = |r: &mut R| -> io::Result<[u8; 8]> {
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        if n != expected_params {
            return Err(AdamError::Shape {
                found: n,
                expected: expected_params,
            });
        }
        let t = u64::from_le_bytes(next(&mut r)?);
        let mut f = |r: &mut R| next(r).map(f64::from_le_bytes);
        let (beta1, beta2, eps, lr) = (f(&mut r)?, f(&mut r)?, f(&mut r)?, f(&mut r)?);
        let m = (0..n).map(|_| f(&mut r)).collect::<io::Result<Vec<_>>>()?;
        let v = (0..n).map(|_| f(&mut r)).collect::<io::Result<Vec<_>>>()?;
        Ok(AdamState {
            m,
            v,
            t,
            beta1,
            beta2,
            eps,
            lr,
        })
    }
}

/// One descent step on `params` along `grad`.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState) {
    assert_eq!(params.len(), grad.len(), "gradient shape");
    assert_eq!(params.len(), state.m.len(), "optimizer shape");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}
