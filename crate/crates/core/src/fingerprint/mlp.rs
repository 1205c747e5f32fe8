//! Feed-forward position regressor: seven affine layers
//! `M -> 109 -> 73 -> 54 -> 109 -> 109 -> 109 -> 2`, ReLU and dropout after
//! the first six, trained with MSE loss and Adam.

use rand::seq::SliceRandom;
use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FingerprintDatabase, FingerprintError, Normalization};
use crate::geometry::Point2;
use crate::rng::{rng_from_seed, SimRng};

pub const HIDDEN_WIDTHS: [usize; 6] = [109, 73, 54, 109, 109, 109];
pub const OUTPUT_DIM: usize = 2;
pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Fraction of records used for training; the rest is held out.
    pub train_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout_rate: 0.2,
            seed: 0,
            train_ratio: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FingerprintError> {
        let bad = |msg: &str| Err(FingerprintError::BadConfig(msg.to_string()));
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must be in (0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must be in [0, 1)");
        }
        Ok(())
    }
}

/// One affine layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn he_uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    /// `W` as an `outputs x inputs` matrix.
    fn matrix(&self) -> DMatrix<f64> {
        DMatrixView::from_slice(&self.weights, self.inputs, self.outputs).transpose()
    }

    /// `W^T` without copying.
    fn matrix_t(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.weights, self.inputs, self.outputs)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Moments {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct AdamState {
    layers: Vec<Moments>,
    step: u64,
}

/// Per-layer gradients with the same shapes as the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    fn zeros_like(layers: &[Dense]) -> Self {
        Self {
            layers: layers
                .iter()
                .map(|l| Dense {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    dropout_rate: f64,
    /// Targets are standardized per axis before training.
    target_offset: [f64; 2],
    target_scale: [f64; 2],
    adam: AdamState,
}

/// Activations of one forward pass over a batch, one column per sample.
struct Pass {
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`
    /// after activation and dropout.
    acts: Vec<DMatrix<f64>>,
    /// Combined ReLU-derivative and dropout scale per hidden unit.
    gates: Vec<DMatrix<f64>>,
}

impl MlpModel {
    /// Fresh He-uniform initialised network for `input_dim` features.
    pub fn new(input_dim: usize, dropout_rate: f64, rng: &mut impl Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(HIDDEN_WIDTHS);
        dims.push(OUTPUT_DIM);
        let layers = dims
            .windows(2)
            .map(|w| Dense::he_uniform(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            dropout_rate,
            target_offset: [0.0; 2],
            target_scale: [1.0; 2],
            adam: AdamState::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn set_target_standardization(&mut self, offset: [f64; 2], scale: [f64; 2]) {
        self.target_offset = offset;
        self.target_scale = scale;
    }

    /// Maps a position into the network's standardized output space.
    pub fn standardize_target(&self, p: Point2) -> [f64; 2] {
        [
            (p.x - self.target_offset[0]) / self.target_scale[0],
            (p.y - self.target_offset[1]) / self.target_scale[1],
        ]
    }

    /// Network output in standardized units, dropout off.
    pub fn raw_output(&self, features: &[f64]) -> [f64; 2] {
        let pass = self.forward(&[features], None);
        let out = pass.acts.last().expect("output layer");
        [out[(0, 0)], out[(1, 0)]]
    }

    /// Inference on already-normalized features.
    pub fn predict_features(&self, features: &[f64]) -> Point2 {
        let [u, v] = self.raw_output(features);
        Point2::new(
            u * self.target_scale[0] + self.target_offset[0],
            v * self.target_scale[1] + self.target_offset[1],
        )
    }

    fn forward(&self, inputs: &[&[f64]], mut dropout: Option<&mut SimRng>) -> Pass {
        let dim = self.input_dim();
        let mut acts = vec![DMatrix::from_fn(dim, inputs.len(), |i, j| inputs[j][i])];
        let mut gates = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout_rate;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.matrix() * acts.last().expect("input");
            for mut col in z.column_iter_mut() {
                for (v, b) in col.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if l < last {
                let mut gate = DMatrix::zeros(z.nrows(), z.ncols());
                for (v, g) in z.iter_mut().zip(gate.iter_mut()) {
                    let mut k = if *v > 0.0 { 1.0 } else { 0.0 };
                    if let Some(rng) = dropout.as_deref_mut() {
                        k = if rng.random::<f64>() < keep { k / keep } else { 0.0 };
                    }
                    *g = k;
                    *v *= k;
                }
                gates.push(gate);
            }
            acts.push(z);
        }
        Pass { acts, gates }
    }

    /// Adds `dL/dparams` to `grads`, where `delta` holds `dL/dout` per sample.
    fn backward(&self, pass: &Pass, mut delta: DMatrix<f64>, grads: &mut Gradients) {
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            let dw_t = &pass.acts[l] * delta.transpose();
            for (gw, d) in g.weights.iter_mut().zip(dw_t.iter()) {
                *gw += d;
            }
            for (gb, row) in g.bias.iter_mut().zip(delta.row_iter()) {
                *gb += row.sum();
            }
            if l == 0 {
                break;
            }
            delta = layer.matrix_t() * &delta;
            delta.component_mul_assign(&pass.gates[l - 1]);
        }
    }

    /// Mean squared error over samples and both outputs, and its gradient.
    /// Targets are in standardized units. Dropout is applied when `dropout`
    /// carries a random stream.
    pub fn loss_and_gradient(
        &self,
        inputs: &[&[f64]],
        targets: &[[f64; 2]],
        dropout: Option<&mut SimRng>,
    ) -> (f64, Gradients) {
        let mut grads = Gradients::zeros_like(&self.layers);
        let loss = self.accumulate(inputs, targets, dropout, &mut grads);
        (loss, grads)
    }

    fn accumulate(
        &self,
        inputs: &[&[f64]],
        targets: &[[f64; 2]],
        dropout: Option<&mut SimRng>,
        grads: &mut Gradients,
    ) -> f64 {
        let norm = 1.0 / (inputs.len() * OUTPUT_DIM) as f64;
        let pass = self.forward(inputs, dropout);
        let mut delta = pass.acts.last().expect("output layer").clone();
        let mut loss = 0.0;
        for (mut col, y) in delta.column_iter_mut().zip(targets) {
            for (v, t) in col.iter_mut().zip(y) {
                let err = *v - t;
                loss += err * err * norm;
                *v = 2.0 * err * norm;
            }
        }
        self.backward(&pass, delta, grads);
        loss
    }

    /// MSE in standardized units with dropout off.
    pub fn mse(&self, inputs: &[&[f64]], targets: &[[f64; 2]]) -> f64 {
        let norm = 1.0 / (inputs.len() * OUTPUT_DIM) as f64;
        let pass = self.forward(inputs, None);
        let out = pass.acts.last().expect("output layer");
        out.column_iter()
            .zip(targets)
            .map(|(col, y)| ((col[0] - y[0]).powi(2) + (col[1] - y[1]).powi(2)) * norm)
            .sum()
    }

    fn adam_step(&mut self, grads: &Gradients, cfg: &TrainConfig) {
        if self.adam.layers.len() != self.layers.len() {
            self.adam.layers = self
                .layers
                .iter()
                .map(|l| Moments {
                    m_w: vec![0.0; l.weights.len()],
                    v_w: vec![0.0; l.weights.len()],
                    m_b: vec![0.0; l.bias.len()],
                    v_b: vec![0.0; l.bias.len()],
                })
                .collect();
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        };
        for ((layer, g), mom) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.adam.layers.iter_mut())
        {
            update(&mut layer.weights, &g.weights, &mut mom.m_w, &mut mom.v_w);
            update(&mut layer.bias, &g.bias, &mut mom.m_b, &mut mom.v_b);
        }
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.step
    }

    pub fn to_file(&self, normalization: &Normalization) -> ModelFile {
        ModelFile {
            version: MODEL_FILE_VERSION,
            dims: std::iter::once(self.input_dim())
                .chain(self.layers.iter().map(|l| l.outputs))
                .collect(),
            dropout_rate: self.dropout_rate,
            target_offset: self.target_offset,
            target_scale: self.target_scale,
            layers: self.layers.clone(),
            normalization: normalization.clone(),
        }
    }
}

/// Serialized regressor plus the feature normalization it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub dims: Vec<usize>,
    pub dropout_rate: f64,
    pub target_offset: [f64; 2],
    pub target_scale: [f64; 2],
    pub layers: Vec<Dense>,
    pub normalization: Normalization,
}

impl ModelFile {
    pub fn into_model(self) -> Result<(MlpModel, Normalization), FingerprintError> {
        if self.version != MODEL_FILE_VERSION {
            return Err(FingerprintError::ModelVersion(self.version));
        }
        let bad = |m: String| Err(FingerprintError::BadModelFile(m));
        if self.dims.len() != self.layers.len() + 1 {
            return bad("dims and layers disagree".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs != self.dims[i]
                || l.outputs != self.dims[i + 1]
                || l.weights.len() != l.inputs * l.outputs
                || l.bias.len() != l.outputs
            {
                return bad(format!("layer {i} has inconsistent shape"));
            }
        }
        if self.normalization.len() != self.dims[0] {
            return bad("normalization length differs from input dimension".into());
        }
        Ok((
            MlpModel {
                layers: self.layers,
                dropout_rate: self.dropout_rate,
                target_offset: self.target_offset,
                target_scale: self.target_scale,
                adam: AdamState::default(),
            },
            self.normalization,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch (dropout active).
    pub epoch_losses: Vec<f64>,
    /// Full-set MSE before the first update, dropout off.
    pub initial_mse: f64,
    /// Full-set MSE after the last epoch, dropout off.
    pub final_mse: f64,
}

/// Trains a fresh regressor on every record of a preprocessed database.
pub fn train_mlp(
    db: &FingerprintDatabase,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport), FingerprintError> {
    config.validate()?;
    if db.is_empty() {
        return Err(FingerprintError::EmptyDatabase);
    }
    let mut rng = rng_from_seed(config.seed);
    let mut model = MlpModel::new(db.ap_count, config.dropout_rate, &mut rng);

    let n = db.len() as f64;
    let mut offset = [0.0; 2];
    for r in &db.records {
        offset[0] += r.position.x / n;
        offset[1] += r.position.y / n;
    }
    let mut scale = [0.0; 2];
    for r in &db.records {
        scale[0] += (r.position.x - offset[0]).powi(2) / n;
        scale[1] += (r.position.y - offset[1]).powi(2) / n;
    }
    let scale = scale.map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    model.set_target_standardization(offset, scale);

    let inputs: Vec<&[f64]> = db.records.iter().map(|r| r.rssi.as_slice()).collect();
    let targets: Vec<[f64; 2]> = db
        .records
        .iter()
        .map(|r| model.standardize_target(r.position))
        .collect();
    let initial_mse = model.mse(&inputs, &targets);

    let mut grads = Gradients::zeros_like(&model.layers);
    let mut order: Vec<usize> = (0..db.len()).collect();
    let mut batch_x: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut batch_y: Vec<[f64; 2]> = Vec::with_capacity(config.batch_size);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let use_dropout = config.dropout_rate > 0.0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| inputs[i]));
            batch_y.extend(chunk.iter().map(|&i| targets[i]));
            grads.clear();
            let loss = model.accumulate(
                &batch_x,
                &batch_y,
                use_dropout.then_some(&mut rng),
                &mut grads,
            );
            if !loss.is_finite() {
                return Err(FingerprintError::NonFiniteLoss { epoch, batch });
            }
            model.adam_step(&grads, config);
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let final_mse = model.mse(&inputs, &targets);
    Ok((
        model,
        TrainReport {
            epoch_losses,
            initial_mse,
            final_mse,
        },
    ))
}
