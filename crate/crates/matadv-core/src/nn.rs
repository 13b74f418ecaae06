//! Linear layers and MLP stacks. Parameters live outside any tape; each
//! forward pass binds them as leaves so gradients can be read back per layer
//! and applied with the optimizer.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Fully connected layer: x (R×in) ↦ x·W + b with W in×out, b 1×out.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// He-uniform weights (±√(6/fan_in)), zero bias.
    pub fn new(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        Linear {
            name: name.into(),
            w: Tensor::new(fan_in, fan_out, data).unwrap().with_grad(),
            b: Tensor::zeros(1, fan_out).with_grad(),
        }
    }

    /// All-zero layer; used where an untrained layer must be the zero map.
    pub fn zeros(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            name: name.into(),
            w: Tensor::zeros(fan_in, fan_out).with_grad(),
            b: Tensor::zeros(1, fan_out).with_grad(),
        }
    }

    /// Inserts the parameters into `tape`; frozen layers become constants so
    /// backward skips them entirely.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundLinear {
        let (w, b) = if trainable {
            (tape.leaf(self.w.clone()), tape.leaf(self.b.clone()))
        } else {
            (tape.constant(self.w.clone()), tape.constant(self.b.clone()))
        };
        BoundLinear { w, b }
    }
}

/// Tape handles for one bound layer.
#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl BoundLinear {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.w)?;
        tape.add(h, self.b)
    }
}

/// Dense stack with relu between layers and a linear final layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists layer widths input-first, e.g. `[3, 32, 64]`.
    pub fn new(prefix: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(format!("{prefix}.{i}"), d[0], d[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn zeros(prefix: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::zeros(format!("{prefix}.{i}"), d[0], d[1]))
            .collect();
        Mlp { layers }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }

    /// Parameter tensors in bind order (w then b per layer).
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    /// (name, tensor) pairs in bind order; names end in `.w` / `.b`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    (format!("{}.w", l.name), &l.w),
                    (format!("{}.b", l.name), &l.b),
                ]
            })
            .collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    (format!("{}.w", l.name), &mut l.w),
                    (format!("{}.b", l.name), &mut l.b),
                ]
            })
            .collect()
    }
}

/// Tape handles for a bound MLP.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
}

impl BoundMlp {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Leaf handles in the same order as [`Mlp::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}
