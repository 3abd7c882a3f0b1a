//! Named parameter storage and its binding onto a tape.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

/// Parameters in declaration order. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Tape handles for every parameter of one forward pass.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    /// Total scalar count of parameters whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Freezes every parameter for which `keep_trainable` is false.
    pub fn freeze_except(&mut self, keep_trainable: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.frozen = !keep_trainable(&p.name);
        }
    }

    /// Order-sensitive checksum of all values under `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        // FNV-1a over the raw bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            for v in p.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Adds every parameter to `tape` as a leaf. Frozen parameters, and all
    /// parameters when `train` is false, do not require gradients.
    pub fn bind(&self, tape: &mut Tape, train: bool) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), train && !p.frozen))
                .collect(),
        )
    }

    /// Gradients for each parameter after a backward pass, zero-filled where
    /// nothing flowed.
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(bound.vars())
            .map(|(p, &v)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }

    /// Replaces values from `(name, tensor)` pairs, checking shapes.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        for (name, t) in values {
            let p = self
                .by_name_mut(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint parameter {name} is not part of the model")))?;
            if p.value.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }
}

impl ParamStore {
    /// Central-difference check of every `stride`-th entry of every parameter
    /// whose name satisfies `select`. Returns the worst
    /// `|analytic − numeric| / max(1, |numeric|)`.
    pub fn grad_check<F>(&self, f: F, select: impl Fn(&str) -> bool, eps: f64, stride: usize) -> Result<f64>
    where
        F: Fn(&mut Tape, &Bound) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, true);
        let out = f(&mut tape, &bound)?;
        tape.backward(out)?;
        let grads = self.grads(&tape, &bound);
        let mut probe = self.clone();
        let mut worst = 0.0f64;
        let eval = |store: &ParamStore| -> Result<f64> {
            let mut t = Tape::new();
            let b = store.bind(&mut t, false);
            let out = f(&mut t, &b)?;
            Ok(t.value(out).item())
        };
        for (k, p) in self.params.iter().enumerate() {
            if !select(&p.name) {
                continue;
            }
            for i in (0..p.value.numel()).step_by(stride.max(1)) {
                let orig = p.value.data()[i];
                probe.params[k].value.data_mut()[i] = orig + eps;
                let up = eval(&probe)?;
                probe.params[k].value.data_mut()[i] = orig - eps;
                let down = eval(&probe)?;
                probe.params[k].value.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads[k].data()[i];
                if !numeric.is_finite() || !analytic.is_finite() {
                    return Err(Error::Numeric(format!("non-finite gradient for {}[{i}]", p.name)));
                }
                worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
            }
        }
        Ok(worst)
    }
}

/// Parameter initialisers drawing from one seeded stream.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("positive extents")
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, self.rng))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("positive extents")
    }

    /// Glorot-uniform for a `[fan_in, fan_out]` matrix.
    pub fn xavier(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        self.uniform(&[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    /// `1/sqrt(fan_in)` uniform for convolution kernels.
    pub fn conv(&mut self, cout: usize, cin: usize, k: usize) -> Tensor {
        self.uniform(&[cout, cin, k], (1.0 / (cin * k) as f64).sqrt())
    }
}
