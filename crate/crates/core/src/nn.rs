//! Named parameter sets, initialization and the Adam optimizer.

use crate::autodiff::{Array, Gradients, Real, Tape, Var};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::rc::Rc;

/// Ordered collection of named f32 tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Rc<Array<f32>>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array<f32>) -> usize {
        self.names.push(name.into());
        self.values.push(Rc::new(value));
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Array<f32> {
        &self.values[i]
    }

    pub fn set(&mut self, i: usize, value: Array<f32>) -> Result<()> {
        if value.shape() != self.values[i].shape() {
            return Err(Error::shape(self.values[i].shape(), value.shape()));
        }
        self.values[i] = Rc::new(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<f32>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.iter() {
            h.update(name.as_bytes());
            for &d in v.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Record every tensor on `tape`, trainable or frozen.
    pub fn bind<'t, T: Real>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .values
            .iter()
            .map(|v| {
                let rc = cast_rc(v);
                if trainable {
                    tape.param(rc)
                } else {
                    tape.frozen(rc)
                }
            })
            .collect();
        Bound { vars }
    }

    /// Gradients for every tensor (zeros where the graph did not reach).
    pub fn collect_grads<T: Real>(&self, bound: &Bound<'_, T>, grads: &mut Gradients<T>) -> Vec<Array<f32>> {
        bound
            .vars
            .iter()
            .zip(&self.values)
            .map(|(&v, p)| match grads.take(v) {
                Some(g) => g.cast(),
                None => Array::zeros(p.shape()),
            })
            .collect()
    }

    fn make_mut(&mut self, i: usize) -> &mut Array<f32> {
        Rc::make_mut(&mut self.values[i])
    }
}

fn cast_rc<T: Real>(v: &Rc<Array<f32>>) -> Rc<Array<T>> {
    // f32 shares storage; other precisions copy
    if std::any::TypeId::of::<T>() == std::any::TypeId::of::<f32>() {
        let any: &dyn std::any::Any = v;
        any.downcast_ref::<Rc<Array<T>>>().cloned().expect("f32 downcast")
    } else {
        Rc::new(v.cast())
    }
}

/// Parameters recorded on a tape, indexed like the owning [`ParamSet`].
pub struct Bound<'t, T: Real> {
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn get(&self, i: usize) -> Var<'t, T> {
        self.vars[i]
    }
}

pub fn uniform(shape: &[usize], bound: f32, rng: &mut ChaCha8Rng) -> Array<f32> {
    let n = shape.iter().product();
    Array::from_vec(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect())
}

/// Fan-in scaled (He-uniform) conv kernel `[out, in, k, k]` plus zero bias.
pub fn conv_init(cout: usize, cin: usize, k: usize, rng: &mut ChaCha8Rng) -> (Array<f32>, Array<f32>) {
    let fan_in = (cin * k * k) as f32;
    (
        uniform(&[cout, cin, k, k], (6.0 / fan_in).sqrt(), rng),
        Array::zeros(&[cout]),
    )
}

pub fn linear_init(fin: usize, fout: usize, rng: &mut ChaCha8Rng) -> (Array<f32>, Array<f32>) {
    (
        uniform(&[fin, fout], (3.0 / fin as f32).sqrt(), rng),
        Array::zeros(&[fout]),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Array<f32>>,
    pub v: Vec<Array<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.values.iter().map(|p| Array::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &[Array<f32>]) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = params.make_mut(i).data_mut();
            for j in 0..g.len() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
    }
}
