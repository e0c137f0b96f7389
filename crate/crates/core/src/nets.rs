//! Two-block MLP decoders with hand-written backward passes, and the Adam
//! optimizers used for decoder weights (dense) and grid features (sparse).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::octree::GradientBuffer;

pub const HIDDEN_WIDTH: usize = 32;
/// Widest hidden layer the stack-allocated backward pass supports.
pub const MAX_HIDDEN: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// One output squashed by a sigmoid into (0, 1).
    Occupancy,
    /// Three raw outputs.
    Color,
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Occupancy => 1,
            Head::Color => 3,
        }
    }
}

/// `out = W2 · relu(W1 · z + b1) + b2`, with a sigmoid on the occupancy head.
///
/// Parameters are one flat vector laid out as `[W1 | b1 | W2 | b2]`, weight
/// matrices row-major (one row per output unit).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDecoder {
    head: Head,
    input_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, needed by [`MlpDecoder::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    pub input: Vec<f64>,
    /// Hidden pre-activations.
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl MlpDecoder {
    pub fn zeros(head: Head, input_dim: usize, hidden: usize) -> Self {
        assert!(hidden <= MAX_HIDDEN, "hidden width {hidden} above {MAX_HIDDEN}");
        let n = hidden * input_dim + hidden + head.output_dim() * hidden + head.output_dim();
        Self {
            head,
            input_dim,
            hidden,
            params: vec![0.0; n],
        }
    }

    /// Kaiming-uniform weights scaled by fan-in, zero biases.
    pub fn new(head: Head, input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut dec = Self::zeros(head, input_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = (6.0 / input_dim as f64).sqrt();
        let b2 = (3.0 / hidden as f64).sqrt();
        let (w1, w2) = (dec.w1_range(), dec.w2_range());
        for p in &mut dec.params[w1] {
            *p = rng.random_range(-b1..=b1);
        }
        for p in &mut dec.params[w2] {
            *p = rng.random_range(-b2..=b2);
        }
        dec
    }

    pub fn from_params(head: Head, input_dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let mut dec = Self::zeros(head, input_dim, hidden);
        if params.len() != dec.params.len() {
            return Err(Error::DimensionMismatch {
                expected: dec.params.len(),
                got: params.len(),
            });
        }
        dec.params = params;
        Ok(dec)
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.input_dim
    }

    fn b1_range(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.input_dim;
        s..s + self.hidden
    }

    fn w2_range(&self) -> std::ops::Range<usize> {
        let s = self.b1_range().end;
        s..s + self.output_dim() * self.hidden
    }

    fn b2_range(&self) -> std::ops::Range<usize> {
        let s = self.w2_range().end;
        s..s + self.output_dim()
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Allocation-free forward pass. `hidden` receives the pre-activations.
    pub fn forward_into(&self, z: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let n = self.input_dim;
        let w1 = &self.params[self.w1_range()];
        let b1 = &self.params[self.b1_range()];
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &w1[j * n..(j + 1) * n];
            *h = b1[j] + dot(row, z);
        }
        let w2 = &self.params[self.w2_range()];
        let b2 = &self.params[self.b2_range()];
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w2[k * self.hidden..(k + 1) * self.hidden];
            let mut acc = b2[k];
            for (w, &h) in row.iter().zip(hidden.iter()) {
                acc += w * h.max(0.0);
            }
            *o = acc;
        }
        if self.head == Head::Occupancy {
            out[0] = sigmoid(out[0]);
        }
    }

    /// Allocation-free backward pass. Adds `dL/dparams` into `dparams` and
    /// writes (overwrites) `dL/dz` into `dz`.
    pub fn backward_into(
        &self,
        z: &[f64],
        hidden: &[f64],
        out: &[f64],
        dout: &[f64],
        dz: &mut [f64],
        dparams: &mut [f64],
    ) {
        let n = self.input_dim;
        let hdim = self.hidden;
        let mut draw = [0.0f64; 3];
        for k in 0..self.output_dim() {
            draw[k] = dout[k];
        }
        if self.head == Head::Occupancy {
            draw[0] *= out[0] * (1.0 - out[0]);
        }
        let (w1r, b1r, w2r, b2r) = (self.w1_range(), self.b1_range(), self.w2_range(), self.b2_range());
        let w2 = &self.params[w2r.clone()];
        let mut dh = [0.0f64; MAX_HIDDEN];
        let dh = &mut dh[..hdim];
        for k in 0..self.output_dim() {
            let g = draw[k];
            dparams[b2r.start + k] += g;
            let row = &w2[k * hdim..(k + 1) * hdim];
            let drow = &mut dparams[w2r.start + k * hdim..w2r.start + (k + 1) * hdim];
            for j in 0..hdim {
                let a = hidden[j].max(0.0);
                drow[j] += g * a;
                dh[j] += g * row[j];
            }
        }
        for j in 0..hdim {
            if hidden[j] <= 0.0 {
                dh[j] = 0.0;
            }
        }
        dz.fill(0.0);
        let w1 = &self.params[w1r.clone()];
        for j in 0..hdim {
            let g = dh[j];
            if g == 0.0 {
                continue;
            }
            dparams[b1r.start + j] += g;
            let row = &w1[j * n..(j + 1) * n];
            let drow = &mut dparams[w1r.start + j * n..w1r.start + (j + 1) * n];
            for i in 0..n {
                drow[i] += g * z[i];
                dz[i] += g * row[i];
            }
        }
    }

    pub fn forward(&self, z: &[f64]) -> Result<Activations> {
        self.check_input(z)?;
        let mut hidden = vec![0.0; self.hidden];
        let mut output = vec![0.0; self.output_dim()];
        self.forward_into(z, &mut hidden, &mut output);
        Ok(Activations {
            input: z.to_vec(),
            hidden,
            output,
        })
    }

    /// Occupancy in (0, 1); requires an occupancy head.
    pub fn decode_occupancy(&self, z: &[f64]) -> Result<(f64, Activations)> {
        debug_assert_eq!(self.head, Head::Occupancy);
        let act = self.forward(z)?;
        Ok((act.output[0], act))
    }

    /// Raw RGB; requires a color head.
    pub fn decode_color(&self, z: &[f64]) -> Result<([f64; 3], Activations)> {
        debug_assert_eq!(self.head, Head::Color);
        let act = self.forward(z)?;
        Ok(([act.output[0], act.output[1], act.output[2]], act))
    }

    /// Returns `(dL/dz, dL/dparams)` for the forward pass that produced `act`.
    pub fn backward(&self, act: &Activations, dout: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(&act.input)?;
        if act.hidden.len() != self.hidden || act.output.len() != self.output_dim() {
            return Err(Error::ShapeMismatch("activations do not match decoder".into()));
        }
        if dout.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: dout.len(),
            });
        }
        let mut dz = vec![0.0; self.input_dim];
        let mut dp = vec![0.0; self.params.len()];
        self.backward_into(&act.input, &act.hidden, &act.output, dout, &mut dz, &mut dp);
        Ok((dz, dp))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Dense bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One update; a non-finite gradient leaves everything untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
        Ok(())
    }
}

/// Adam over feature slots, touching only slots that received gradient.
/// Each slot keeps its own step count so bias correction reflects how often
/// that slot was actually updated.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdam {
    pub config: AdamConfig,
    pub dim: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u32>,
}

impl SparseAdam {
    pub fn new(config: AdamConfig, dim: usize) -> Self {
        Self {
            config,
            dim,
            m: Vec::new(),
            v: Vec::new(),
            steps: Vec::new(),
        }
    }

    /// Extends the state to cover `slots` slots (new slots start fresh).
    pub fn grow(&mut self, slots: usize) {
        if slots > self.steps.len() {
            self.steps.resize(slots, 0);
            self.m.resize(slots * self.dim, 0.0);
            self.v.resize(slots * self.dim, 0.0);
        }
    }

    pub fn step(&mut self, features: &mut [f64], grads: &GradientBuffer) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        self.grow(features.len() / self.dim);
        let c = self.config;
        let d = self.dim;
        for &slot in grads.touched() {
            let s = slot as usize;
            self.steps[s] += 1;
            let t = self.steps[s] as i32;
            let bc1 = 1.0 - c.beta1.powi(t);
            let bc2 = 1.0 - c.beta2.powi(t);
            let g = grads.slot(slot);
            for k in 0..d {
                let i = s * d + k;
                self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g[k];
                self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g[k] * g[k];
                features[i] -= c.lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
