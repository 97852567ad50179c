//! Two-head multilayer perceptron with a flat parameter vector.
//!
//! Layout of the flat vector: for every trunk layer, then head 1, then head 2,
//! the weight matrix (`out x in`, column-major) followed by its bias.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::system::SimRng;
use crate::{Error, Result};

/// Parameter count of the reference convolutional model; kept for overhead accounting.
pub const REFERENCE_CNN_PARAMETER_COUNT: u64 = 1_196_928;

/// Layer sizes of the shared trunk and the two task heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    /// Channel head width, `2 N_T`.
    pub head_channel: usize,
    /// Support head width, `N`.
    pub head_support: usize,
}

impl Architecture {
    /// Default trunk of two 256-wide layers for a scenario with the given sizes.
    pub fn for_scenario(num_rf_chains: usize, num_antennas: usize, grid_size: usize) -> Self {
        Self {
            input: 3 * num_rf_chains,
            hidden: vec![256, 256],
            head_channel: 2 * num_antennas,
            head_support: grid_size,
        }
    }

    fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.head_channel, prev));
        dims.push((self.head_support, prev));
        dims
    }

    /// Total number of weights and biases `Q`.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(o, i)| o * i + o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.head_channel == 0 || self.head_support == 0 {
            return Err(Error::Config("network layer widths must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Feedforward network: ReLU trunk with inverted dropout and two linear heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    dropout: f64,
    /// `(offset, out, in)` of every layer in parameter order.
    layout: Vec<(usize, usize, usize)>,
    param_count: usize,
}

/// Squared-error losses of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Channel-head loss `L_1`.
    pub channel: f64,
    /// Support-head loss `L_2`.
    pub support: f64,
}

/// Column-stacked inputs and targets of a batch (one sample per column).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: DMatrix<f64>,
    pub channel: DMatrix<f64>,
    pub support: DMatrix<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Task weights `omega_1` (channel) and `omega_2` (support), summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub channel: f64,
    pub support: f64,
}

impl TaskWeights {
    pub fn new(channel: f64, support: f64) -> Result<Self> {
        if !(channel >= 0.0 && support >= 0.0) || ((channel + support) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "task weights must be non-negative and sum to 1, got {channel} + {support}"
            )));
        }
        Ok(Self { channel, support })
    }
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self { channel: 0.8, support: 0.2 }
    }
}

struct Trace {
    /// Layer inputs: `acts[0]` is the batch, `acts[i]` the output of trunk layer `i - 1`.
    acts: Vec<DMatrix<f64>>,
    /// Per trunk layer: derivative of the output w.r.t. the pre-activation (ReLU gate times dropout scale).
    gates: Vec<DMatrix<f64>>,
    out_channel: DMatrix<f64>,
    out_support: DMatrix<f64>,
}

impl Network {
    pub fn new(arch: Architecture, dropout: f64) -> Result<Self> {
        arch.validate()?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut layout = Vec::new();
        let mut offset = 0;
        for (o, i) in arch.layers() {
            layout.push((offset, o, i));
            offset += o * i + o;
        }
        Ok(Self { arch, dropout, layout, param_count: offset })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Uniform `+-sqrt(6 / fan_in)` weights and zero biases.
    pub fn init_params(&self, rng: &mut SimRng) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count];
        for &(off, o, i) in &self.layout {
            let bound = (6.0 / i as f64).sqrt();
            for w in &mut p[off..off + o * i] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    fn weight<'a>(&self, params: &'a [f64], layer: usize) -> (DMatrixView<'a, f64>, &'a [f64]) {
        let (off, o, i) = self.layout[layer];
        (
            DMatrixView::from_slice(&params[off..off + o * i], o, i),
            &params[off + o * i..off + o * i + o],
        )
    }

    fn check(&self, params: &[f64], features: &DMatrix<f64>) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::DimensionMismatch {
                context: "network parameters",
                expected: self.param_count,
                found: params.len(),
            });
        }
        if features.nrows() != self.arch.input {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.arch.input,
                found: features.nrows(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite network input"));
        }
        Ok(())
    }

    fn affine(&self, params: &[f64], layer: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (w, b) = self.weight(params, layer);
        let mut z = w * x;
        for mut col in z.column_iter_mut() {
            for (v, bias) in col.iter_mut().zip(b) {
                *v += bias;
            }
        }
        z
    }

    fn run(&self, params: &[f64], features: &DMatrix<f64>, mut dropout_rng: Option<&mut SimRng>) -> Trace {
        let trunk = self.arch.hidden.len();
        let keep = 1.0 - self.dropout;
        let mut acts = vec![features.clone()];
        let mut gates = Vec::with_capacity(trunk);
        for layer in 0..trunk {
            let z = self.affine(params, layer, &acts[layer]);
            let mut gate = z.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            if let (Some(rng), true) = (dropout_rng.as_deref_mut(), self.dropout > 0.0) {
                for g in gate.iter_mut() {
                    // Draw for every unit so the stream position does not depend on activations.
                    let kept = rng.random::<f64>() < keep;
                    *g = if kept { *g / keep } else { 0.0 };
                }
            }
            let a = z.component_mul(&gate);
            gates.push(gate);
            acts.push(a);
        }
        let last = &acts[trunk];
        let out_channel = self.affine(params, trunk, last);
        let out_support = self.affine(params, trunk + 1, last);
        Trace { acts, gates, out_channel, out_support }
    }

    /// Evaluation-mode outputs `(channel head, support head)`, one sample per column.
    pub fn forward(&self, params: &[f64], features: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check(params, features)?;
        let t = self.run(params, features, None);
        Ok((t.out_channel, t.out_support))
    }

    /// Weighted loss `w_1 L_1 + w_2 L_2` with `L_z = (1/B) sum_i ||f_z(x_i) - y_z,i||^2`.
    pub fn loss(&self, params: &[f64], batch: &Batch, weights: TaskWeights) -> Result<LossBreakdown> {
        let (c, s) = self.forward(params, &batch.features)?;
        Ok(losses(&c, &s, batch, weights))
    }

    /// Loss and its gradient w.r.t. the flat parameters.
    ///
    /// With `dropout_rng` the trunk runs in training mode and draws one mask per unit and sample.
    pub fn loss_and_gradient(
        &self,
        params: &[f64],
        batch: &Batch,
        weights: TaskWeights,
        dropout_rng: Option<&mut SimRng>,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        self.check(params, &batch.features)?;
        if batch.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let t = self.run(params, &batch.features, dropout_rng);
        let loss = losses(&t.out_channel, &t.out_support, batch, weights);
        let scale = 2.0 / batch.len() as f64;
        let d_channel = (&t.out_channel - &batch.channel) * (scale * weights.channel);
        let d_support = (&t.out_support - &batch.support) * (scale * weights.support);

        let mut grad = vec![0.0; self.param_count];
        let trunk = self.arch.hidden.len();
        let last = &t.acts[trunk];
        self.store_grad(&mut grad, trunk, &d_channel, last);
        self.store_grad(&mut grad, trunk + 1, &d_support, last);
        if trunk > 0 {
            let (w1, _) = self.weight(params, trunk);
            let (w2, _) = self.weight(params, trunk + 1);
            let mut d_act = w1.transpose() * &d_channel + w2.transpose() * &d_support;
            for layer in (0..trunk).rev() {
                let d_pre = d_act.component_mul(&t.gates[layer]);
                self.store_grad(&mut grad, layer, &d_pre, &t.acts[layer]);
                if layer > 0 {
                    let (w, _) = self.weight(params, layer);
                    d_act = w.transpose() * &d_pre;
                }
            }
        }
        Ok((loss, grad))
    }

    fn store_grad(&self, grad: &mut [f64], layer: usize, d_out: &DMatrix<f64>, input: &DMatrix<f64>) {
        let (off, o, i) = self.layout[layer];
        let dw = d_out * input.transpose();
        grad[off..off + o * i].copy_from_slice(dw.as_slice());
        for (r, g) in grad[off + o * i..off + o * i + o].iter_mut().enumerate() {
            *g = d_out.row(r).sum();
        }
    }
}

fn losses(c: &DMatrix<f64>, s: &DMatrix<f64>, batch: &Batch, w: TaskWeights) -> LossBreakdown {
    let b = batch.len().max(1) as f64;
    let channel = (c - &batch.channel).norm_squared() / b;
    let support = (s - &batch.support).norm_squared() / b;
    LossBreakdown { total: w.channel * channel + w.support * support, channel, support }
}
