//! Multiple-instance neural network: a four-layer fully connected instance
//! encoder, a pooling function and a logistic bag-level head, trained on
//! bag labels with hand-derived gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, sigmoid, softplus, Matrix};
use crate::pooling::{self, argmax_rows, softmax, AttentionParams, PoolingKind, Pooled};

pub const DEFAULT_HIDDEN_WIDTHS: [usize; 3] = [64, 48, 32];
pub const DEFAULT_EMBEDDING_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub pooling: PoolingKind,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, pooling: PoolingKind) -> Self {
        Self {
            input_dim,
            hidden_widths: DEFAULT_HIDDEN_WIDTHS.to_vec(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            attention_dim: pooling::DEFAULT_ATTENTION_DIM,
            pooling,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.len() != 3 {
            return Err(Error::Config(format!(
                "encoder needs exactly 3 hidden widths, got {}",
                self.hidden_widths.len()
            )));
        }
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.pooling.needs_attention() && self.attention_dim == 0 {
            return Err(Error::Config("attention width must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of the four encoder layers.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths);
        dims.push(self.embedding_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Fully connected layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
        }
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.bias.len());
        for n in 0..input.rows() {
            let x = input.row(n);
            let dst = out.row_mut(n);
            for (o, (w, b)) in dst.iter_mut().zip(self.weights.iter_rows().zip(&self.bias)) {
                *o = b + dot(w, x);
            }
        }
        out
    }
}

/// Every trainable array of the model. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Vec<Dense>,
    pub attention: Option<AttentionParams>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

/// One contiguous parameter array.
pub struct Block<'a> {
    pub name: String,
    pub values: &'a [f64],
    /// Weights receive weight decay; biases do not.
    pub is_weight: bool,
}

impl ModelParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        Self {
            encoder: config
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
            attention: config
                .pooling
                .needs_attention()
                .then(|| AttentionParams::zeros(config.attention_dim, config.embedding_dim)),
            head_weights: vec![0.0; config.embedding_dim],
            head_bias: 0.0,
        }
    }

    pub fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.iter().enumerate() {
            out.push(Block {
                name: format!("encoder.{l}.weights"),
                values: layer.weights.as_slice(),
                is_weight: true,
            });
            out.push(Block {
                name: format!("encoder.{l}.bias"),
                values: &layer.bias,
                is_weight: false,
            });
        }
        if let Some(att) = &self.attention {
            out.push(Block {
                name: "attention.v".into(),
                values: att.v.as_slice(),
                is_weight: true,
            });
            out.push(Block {
                name: "attention.w".into(),
                values: &att.w,
                is_weight: true,
            });
        }
        out.push(Block {
            name: "head.weights".into(),
            values: &self.head_weights,
            is_weight: true,
        });
        out.push(Block {
            name: "head.bias".into(),
            values: std::slice::from_ref(&self.head_bias),
            is_weight: false,
        });
        out
    }

    /// Mutable views in the same order as [`ModelParams::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.encoder {
            out.push(layer.weights.as_mut_slice());
            out.push(&mut layer.bias);
        }
        if let Some(att) = &mut self.attention {
            out.push(att.v.as_mut_slice());
            out.push(&mut att.w);
        }
        out.push(&mut self.head_weights);
        out.push(std::slice::from_mut(&mut self.head_bias));
        out
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            let len = block.len();
            block.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Verifies every array has the shape `config` implies.
    pub fn check_shapes(&self, config: &NetworkConfig) -> Result<()> {
        let expected = ModelParams::zeros(config);
        let ours = self.blocks();
        let theirs = expected.blocks();
        if ours.len() != theirs.len() {
            return Err(Error::Shape(format!(
                "parameter layout has {} blocks, config implies {}",
                ours.len(),
                theirs.len()
            )));
        }
        for (a, b) in self.encoder.iter().zip(&expected.encoder) {
            if (a.weights.rows(), a.weights.cols()) != (b.weights.rows(), b.weights.cols()) {
                return Err(Error::Shape(format!(
                    "encoder weights {}x{} where config implies {}x{}",
                    a.weights.rows(),
                    a.weights.cols(),
                    b.weights.rows(),
                    b.weights.cols()
                )));
            }
        }
        if let (Some(a), Some(b)) = (&self.attention, &expected.attention) {
            if (a.v.rows(), a.v.cols()) != (b.v.rows(), b.v.cols()) {
                return Err(Error::Shape("attention V shape disagrees with config".into()));
            }
        }
        for (a, b) in ours.iter().zip(&theirs) {
            if a.name != b.name || a.values.len() != b.values.len() {
                return Err(Error::Shape(format!(
                    "block {} has {} values, config implies {} ({})",
                    a.name,
                    a.values.len(),
                    b.values.len(),
                    b.name
                )));
            }
        }
        Ok(())
    }

    fn first_non_finite(&self) -> Option<String> {
        self.blocks()
            .into_iter()
            .find(|b| b.values.iter().any(|v| !v.is_finite()))
            .map(|b| b.name)
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `config.seed`.
pub fn init_params(config: &NetworkConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::zeros(config);
    let mut fill = |values: &mut [f64], fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in values {
            *v = rng.gen_range(-limit..limit);
        }
    };
    for layer in &mut params.encoder {
        let (fan_out, fan_in) = (layer.weights.rows(), layer.weights.cols());
        fill(layer.weights.as_mut_slice(), fan_in, fan_out);
    }
    if let Some(att) = &mut params.attention {
        let (l, m) = (att.v.rows(), att.v.cols());
        fill(att.v.as_mut_slice(), m, l);
        fill(&mut att.w, l, 1);
    }
    let m = params.head_weights.len();
    fill(&mut params.head_weights, m, 1);
    Ok(params)
}

/// Intermediate values of one bag's forward pass, kept for backprop.
struct Trace {
    /// Layer inputs: `inputs[0]` is the raw features, `inputs[l]` the
    /// activation feeding layer `l`.
    inputs: Vec<Matrix>,
    /// Pre-activations of each layer.
    pre: Vec<Matrix>,
    embeddings: Matrix,
    pooled: Pooled,
    attention_hidden: Option<Vec<Vec<f64>>>,
    logit: f64,
}

fn check_input(params: &ModelParams, features: &Matrix) -> Result<()> {
    let width = params.encoder[0].weights.cols();
    if features.cols() != width {
        return Err(Error::Shape(format!(
            "bag has {} features per instance, model expects {width}",
            features.cols()
        )));
    }
    if features.rows() == 0 {
        return Err(Error::Domain("cannot run the network on an empty bag".into()));
    }
    Ok(())
}

fn trace(params: &ModelParams, features: &Matrix, pooling_kind: PoolingKind) -> Result<Trace> {
    check_input(params, features)?;
    let depth = params.encoder.len();
    let mut inputs = Vec::with_capacity(depth);
    let mut pre = Vec::with_capacity(depth);
    let mut current = features.clone();
    for (l, layer) in params.encoder.iter().enumerate() {
        let a = layer.forward(&current);
        let next = if l + 1 < depth {
            let mut h = a.clone();
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            h
        } else {
            a.clone()
        };
        inputs.push(current);
        pre.push(a);
        current = next;
    }
    let embeddings = current;
    if !embeddings.is_finite() {
        return Err(Error::Numeric {
            block: "encoder".into(),
            detail: "non-finite instance embedding".into(),
        });
    }

    let (pooled, attention_hidden) = match (pooling_kind, &params.attention) {
        (PoolingKind::Att | PoolingKind::Uatt, Some(att)) => {
            let (hidden, logits) = pooling::attention_hidden(att, &embeddings)?;
            let a = if pooling_kind == PoolingKind::Att {
                softmax(&logits)
            } else {
                logits.iter().map(|&l| sigmoid(l)).collect()
            };
            let z = embeddings.matvec_t(&a);
            (Pooled { z, attention: Some(a) }, Some(hidden))
        }
        (PoolingKind::Att | PoolingKind::Uatt, None) => {
            return Err(Error::Config(format!(
                "{pooling_kind} pooling requires attention parameters"
            )))
        }
        (kind, _) => (pooling::pool(kind, &embeddings, None)?, None),
    };
    let logit = params.head_bias + dot(&params.head_weights, &pooled.z);
    if !logit.is_finite() {
        return Err(Error::Numeric {
            block: "head".into(),
            detail: "non-finite bag logit".into(),
        });
    }
    Ok(Trace {
        inputs,
        pre,
        embeddings,
        pooled,
        attention_hidden,
        logit,
    })
}

/// Accumulates `scale * d(loss)/d(params)` into `grad`, where
/// `dlogit = d(loss)/d(logit)`.
fn backward(
    params: &ModelParams,
    t: &Trace,
    kind: PoolingKind,
    dlogit: f64,
    scale: f64,
    grad: &mut ModelParams,
) {
    let g = dlogit * scale;
    grad.head_bias += g;
    axpy(g, &t.pooled.z, &mut grad.head_weights);
    let dz: Vec<f64> = params.head_weights.iter().map(|w| g * w).collect();

    let h = &t.embeddings;
    let n = h.rows();
    let mut dh = Matrix::zeros(n, h.cols());
    match kind {
        PoolingKind::Max => {
            for (j, row) in argmax_rows(h).into_iter().enumerate() {
                dh.row_mut(row)[j] = dz[j];
            }
        }
        PoolingKind::Mean => {
            let inv = 1.0 / n as f64;
            for i in 0..n {
                axpy(inv, &dz, dh.row_mut(i));
            }
        }
        PoolingKind::Sum => {
            for i in 0..n {
                dh.row_mut(i).copy_from_slice(&dz);
            }
        }
        PoolingKind::Att | PoolingKind::Uatt => {
            let att = params.attention.as_ref().expect("checked in forward");
            let gatt = grad.attention.as_mut().expect("gradient mirrors params");
            let a = t.pooled.attention.as_ref().expect("attention kinds record weights");
            let hidden = t.attention_hidden.as_ref().expect("attention kinds record hidden");
            let da: Vec<f64> = h.iter_rows().map(|row| dot(row, &dz)).collect();
            let ds: Vec<f64> = if kind == PoolingKind::Att {
                let mean_da = dot(a, &da);
                a.iter().zip(&da).map(|(ai, di)| ai * (di - mean_da)).collect()
            } else {
                a.iter().zip(&da).map(|(ai, di)| di * ai * (1.0 - ai)).collect()
            };
            for i in 0..n {
                let row = h.row(i);
                axpy(a[i], &dz, dh.row_mut(i));
                let u = &hidden[i];
                axpy(ds[i], u, &mut gatt.w);
                let dpre: Vec<f64> = u
                    .iter()
                    .zip(&att.w)
                    .map(|(ui, wi)| ds[i] * wi * (1.0 - ui * ui))
                    .collect();
                for (r, &dp) in dpre.iter().enumerate() {
                    if dp != 0.0 {
                        axpy(dp, row, gatt.v.row_mut(r));
                    }
                }
                let back = att.v.matvec_t(&dpre);
                axpy(1.0, &back, dh.row_mut(i));
            }
        }
    }

    let depth = params.encoder.len();
    let mut delta = dh;
    for l in (0..depth).rev() {
        if l + 1 < depth {
            for (d, &p) in delta.as_mut_slice().iter_mut().zip(t.pre[l].as_slice()) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let input = &t.inputs[l];
        let layer = &params.encoder[l];
        let glayer = &mut grad.encoder[l];
        for i in 0..n {
            let d = delta.row(i);
            let x = input.row(i);
            for (o, &dv) in d.iter().enumerate() {
                if dv != 0.0 {
                    axpy(dv, x, glayer.weights.row_mut(o));
                    glayer.bias[o] += dv;
                }
            }
        }
        if l > 0 {
            let mut next = Matrix::zeros(n, input.cols());
            for i in 0..n {
                let back = layer.weights.matvec_t(delta.row(i));
                next.row_mut(i).copy_from_slice(&back);
            }
            delta = next;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probability: f64,
    pub logit: f64,
    pub embeddings: Matrix,
    pub attention: Option<Vec<f64>>,
}

pub fn forward(params: &ModelParams, bag: &Bag, config: &NetworkConfig) -> Result<ForwardOutput> {
    forward_features(params, &bag.feature_matrix()?, config)
}

pub fn forward_features(
    params: &ModelParams,
    features: &Matrix,
    config: &NetworkConfig,
) -> Result<ForwardOutput> {
    let t = trace(params, features, config.pooling)?;
    Ok(ForwardOutput {
        probability: sigmoid(t.logit),
        logit: t.logit,
        embeddings: t.embeddings,
        attention: t.pooled.attention,
    })
}

/// Binary cross-entropy of a probability against a 0/1 label.
pub fn bce_loss(probability: f64, label: u8) -> f64 {
    if label == 1 {
        -probability.ln()
    } else {
        -(-probability).ln_1p()
    }
}

/// Binary cross-entropy evaluated from the pre-sigmoid logit:
/// `softplus(s) - y s`.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    softplus(logit) - target * logit
}

fn target_of(bag: &Bag) -> Result<f64> {
    bag.label
        .map(f64::from)
        .ok_or_else(|| Error::Training(format!("bag {} is unlabeled", bag.patient_id)))
}

/// Mean BCE over `batch` and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    params: &ModelParams,
    batch: &[Bag],
    config: &NetworkConfig,
) -> Result<(f64, ModelParams)> {
    let prepared = batch
        .iter()
        .map(|b| Ok((b.feature_matrix()?, target_of(b)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(&Matrix, f64)> = prepared.iter().map(|(m, y)| (m, *y)).collect();
    batch_gradient(params, &refs, config.pooling)
}

/// Gradient of the mean BCE over `batch`.
pub fn gradient(params: &ModelParams, batch: &[Bag], config: &NetworkConfig) -> Result<ModelParams> {
    Ok(loss_and_gradient(params, batch, config)?.1)
}

fn batch_gradient(
    params: &ModelParams,
    batch: &[(&Matrix, f64)],
    kind: PoolingKind,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Training("gradient of an empty batch".into()));
    }
    let mut grad = zeros_like(params);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(features, target) in batch {
        let t = trace(params, features, kind)?;
        loss += bce_with_logit(t.logit, target);
        let dlogit = sigmoid(t.logit) - target;
        backward(params, &t, kind, dlogit, scale, &mut grad);
    }
    if let Some(block) = grad.first_non_finite() {
        return Err(Error::Numeric {
            block,
            detail: "non-finite gradient".into(),
        });
    }
    Ok((loss * scale, grad))
}

fn zeros_like(params: &ModelParams) -> ModelParams {
    let mut z = params.clone();
    for block in z.blocks_mut() {
        block.fill(0.0);
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_bags: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_bags: 8,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_bags == 0 {
            return Err(Error::Config("batch_bags must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("invalid moment decay rates or epsilon".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer with decoupled weight decay on weight blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
}

impl Adam {
    pub fn new(params: &ModelParams, config: &TrainConfig) -> Self {
        let n = params.n_params();
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            weight_decay: config.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let decay = 1.0 - self.lr * self.weight_decay;
        let is_weight: Vec<bool> = params.blocks().iter().map(|b| b.is_weight).collect();
        let grads = grad.blocks();
        let mut offset = 0;
        for ((block, g), weight) in params.blocks_mut().into_iter().zip(&grads).zip(is_weight) {
            for (k, (p, &gk)) in block.iter_mut().zip(g.values).enumerate() {
                let i = offset + k;
                self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * gk;
                self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * gk * gk;
                let m_hat = self.first[i] / c1;
                let v_hat = self.second[i] / c2;
                if weight {
                    *p *= decay;
                }
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            offset += block.len();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss of each epoch, measured before each batch update.
    pub history: Vec<f64>,
}

pub fn train(dataset: &Dataset, net: &NetworkConfig, opt: &TrainConfig) -> Result<TrainOutcome> {
    train_bags(&dataset.bags, net, opt)
}

/// Mini-batch training on labeled bags, reshuffled each epoch with `opt.seed`.
pub fn train_bags(bags: &[Bag], net: &NetworkConfig, opt: &TrainConfig) -> Result<TrainOutcome> {
    opt.validate()?;
    net.validate()?;
    if bags.is_empty() {
        return Err(Error::Training("no bags to train on".into()));
    }
    let prepared = bags
        .iter()
        .map(|b| {
            let m = b.feature_matrix()?;
            if m.cols() != net.input_dim {
                return Err(Error::Shape(format!(
                    "bag {} has {} features, network expects {}",
                    b.patient_id,
                    m.cols(),
                    net.input_dim
                )));
            }
            Ok((m, target_of(b)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut params = init_params(net)?;
    let mut adam = Adam::new(&params, opt);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(opt.epochs);
    for _ in 0..opt.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opt.batch_bags) {
            let batch: Vec<(&Matrix, f64)> = chunk.iter().map(|&i| (&prepared[i].0, prepared[i].1)).collect();
            let (loss, grad) = batch_gradient(&params, &batch, net.pooling)?;
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut params, &grad);
        }
        history.push(epoch_loss / prepared.len() as f64);
    }
    if let Some(block) = params.first_non_finite() {
        return Err(Error::Numeric {
            block,
            detail: "training diverged".into(),
        });
    }
    Ok(TrainOutcome { params, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub patient_id: String,
    pub probability: f64,
}

pub fn predict(params: &ModelParams, bags: &[Bag], config: &NetworkConfig) -> Result<Vec<Prediction>> {
    bags.iter()
        .map(|bag| {
            Ok(Prediction {
                patient_id: bag.patient_id.clone(),
                probability: forward(params, bag, config)?.probability,
            })
        })
        .collect()
}
