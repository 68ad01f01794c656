//! Supervised autoencoder producing the summary statistics that sites
//! compare against.
//!
//! The encoder `q_φ` maps a `D`-dimensional row to `d` dimensions. During
//! training the latent `z = q_φ(x) + ε`, `ε ~ N(0, ᾱ I)`, feeds both the
//! decoder `f_θ` and a single logistic unit `g_ψ`. The training objective is
//! the sum over rows of
//!
//! ```text
//! -½‖x − f_θ(z)‖² + y log g_ψ(z) + (1 − y) log(1 − g_ψ(z)) − ½(‖q_φ(x)‖² + d(ᾱ − 1 − log ᾱ))
//! ```
//!
//! which is maximized; [`loss`] returns its negation.

mod network;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::samplers::{Matrix, RngStream};

pub use network::Dense;

const PROB_CLAMP: f64 = 1e-12;

/// Encoder, decoder, logistic head and the latent noise variance `ᾱ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffiAEModel {
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    clf_weights: Vec<f64>,
    clf_bias: f64,
    noise_alpha: f64,
}

/// Partial derivatives of [`loss`] with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffiAEGrad {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    pub clf_weights: Vec<f64>,
    pub clf_bias: f64,
}

/// Feature rows with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    x: Matrix,
    y: Vec<u8>,
}

impl LabeledBatch {
    pub fn new(x: Matrix, y: Vec<u8>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(dim_err("labeled batch is empty"));
        }
        if x.rows() != y.len() {
            return Err(dim_err(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        if let Some((row, v)) = y.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::NonBinaryLabel {
                row,
                value: v.to_string(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledBatch {
        LabeledBatch {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Rows carrying `label`.
    pub fn rows_with_label(&self, label: u8) -> Matrix {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.y[i] == label).collect();
        self.x.select_rows(&idx)
    }

    pub fn count(&self, label: u8) -> usize {
        self.y.iter().filter(|&&v| v == label).count()
    }
}

/// The three objective terms, each summed over the batch and signed as
/// costs (so `total` is the quantity minimized).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub reconstruction: f64,
    pub classification: f64,
    pub regularization: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.classification + self.regularization
    }
}

/// Layer widths and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    /// Hidden widths of the encoder; the decoder mirrors them. Empty means
    /// one hidden layer of width `max(D, 8)`.
    pub hidden: Vec<usize>,
    pub d: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub noise_alpha: f64,
    /// Publish `encode_noisy` (rather than `encode`) outputs as the frozen
    /// summary statistics.
    pub publish_noisy: bool,
    /// Shared initialization seed agreed between sites, if any.
    pub init_seed: Option<u64>,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            d: 2,
            epochs: 50,
            learning_rate: 1e-2,
            batch_size: 32,
            noise_alpha: 0.1,
            publish_noisy: true,
            init_seed: None,
        }
    }
}

impl AeConfig {
    pub fn hidden_for(&self, input_dim: usize) -> Vec<usize> {
        if self.hidden.is_empty() {
            vec![input_dim.max(8)]
        } else {
            self.hidden.clone()
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `d(ᾱ − 1 − log ᾱ)`, the part of the KL term that does not depend on the
/// encoder output.
pub fn noise_kl_constant(d: usize, noise_alpha: f64) -> f64 {
    d as f64 * (noise_alpha - 1.0 - noise_alpha.ln())
}

impl SuffiAEModel {
    /// Randomly initialized model: encoder `D → hidden… → d`, decoder
    /// mirrored, weights uniform in `±1/√fan_in`, biases zero.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        d: usize,
        noise_alpha: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if input_dim == 0 || d == 0 || hidden.contains(&0) {
            return Err(dim_err("layer widths must be positive"));
        }
        let mut enc_dims = vec![input_dim];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(d);
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let encoder = enc_dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        let decoder = dec_dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        let bound = 1.0 / (d as f64).sqrt();
        let clf_weights = (0..d).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self::from_parts(encoder, decoder, clf_weights, 0.0, noise_alpha)
    }

    /// Initializes from `cfg`, drawing weights from `cfg.init_seed` when set
    /// and from `rng` otherwise.
    pub fn from_config(input_dim: usize, cfg: &AeConfig, rng: &mut RngStream) -> Result<Self> {
        let hidden = cfg.hidden_for(input_dim);
        match cfg.init_seed {
            Some(seed) => Self::new(input_dim, &hidden, cfg.d, cfg.noise_alpha, &mut RngStream::new(seed)),
            None => Self::new(input_dim, &hidden, cfg.d, cfg.noise_alpha, rng),
        }
    }

    /// Assembles a model from explicit layers, checking that widths chain.
    pub fn from_parts(
        encoder: Vec<Dense>,
        decoder: Vec<Dense>,
        clf_weights: Vec<f64>,
        clf_bias: f64,
        noise_alpha: f64,
    ) -> Result<Self> {
        if encoder.is_empty() || decoder.is_empty() {
            return Err(dim_err("encoder and decoder need at least one layer"));
        }
        network::check_chain(&encoder)?;
        network::check_chain(&decoder)?;
        let d = encoder.last().map(Dense::out_dim).unwrap_or(0);
        let input_dim = encoder[0].in_dim();
        if decoder[0].in_dim() != d || decoder.last().map(Dense::out_dim) != Some(input_dim) {
            return Err(dim_err("decoder must map d back to the input width"));
        }
        if clf_weights.len() != d {
            return Err(dim_err("classifier width must equal d"));
        }
        if !(noise_alpha > 0.0) || !noise_alpha.is_finite() {
            return Err(Error::InvalidHyperparameter(format!("noise_alpha = {noise_alpha}")));
        }
        let model = Self {
            encoder,
            decoder,
            clf_weights,
            clf_bias,
            noise_alpha,
        };
        model.check_finite()?;
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.clf_weights.len()
    }

    pub fn noise_alpha(&self) -> f64 {
        self.noise_alpha
    }

    pub fn encoder(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Dense] {
        &self.decoder
    }

    pub fn clf_weights(&self) -> &[f64] {
        &self.clf_weights
    }

    pub fn clf_bias(&self) -> f64 {
        self.clf_bias
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        network::dims(&self.encoder)
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        network::dims(&self.decoder)
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.parameters().iter().all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NumericalOverflow("non-finite model weights".into()))
        }
    }

    /// All trainable parameters flattened: encoder layers, decoder layers,
    /// classifier weights, classifier bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            l.flatten_into(&mut out);
        }
        out.extend_from_slice(&self.clf_weights);
        out.push(self.clf_bias);
        out
    }

    /// Copy of the model with parameters replaced from a flat vector laid
    /// out as in [`SuffiAEModel::parameters`].
    pub fn with_parameters(&self, flat: &[f64]) -> Result<SuffiAEModel> {
        let expected = self.parameters().len();
        if flat.len() != expected {
            return Err(dim_err(format!("expected {expected} parameters, got {}", flat.len())));
        }
        let mut m = self.clone();
        let mut rest = flat;
        for l in m.encoder.iter_mut().chain(m.decoder.iter_mut()) {
            rest = l.load_from(rest);
        }
        let d = m.clf_weights.len();
        m.clf_weights.copy_from_slice(&rest[..d]);
        m.clf_bias = rest[d];
        m.check_finite()?;
        Ok(m)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(dim_err(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.latent_dim() {
            return Err(dim_err(format!(
                "latent input has {} columns, model expects {}",
                z.cols(),
                self.latent_dim()
            )));
        }
        Ok(())
    }

    fn map_rows(layers: &[Dense], x: &Matrix, out_dim: usize) -> Matrix {
        let mut data = Vec::with_capacity(x.rows() * out_dim);
        for r in x.row_iter() {
            data.extend(network::forward(layers, r));
        }
        Matrix::new(x.rows(), out_dim, data).unwrap_or_else(|_| Matrix::zeros(x.rows(), out_dim))
    }
}

/// Deterministic encoding `q_φ(x)`.
pub fn encode(model: &SuffiAEModel, x: &Matrix) -> Result<Matrix> {
    model.check_input(x)?;
    Ok(SuffiAEModel::map_rows(&model.encoder, x, model.latent_dim()))
}

/// `q_φ(x) + ε` with `ε ~ N(0, ᾱ I)` per entry.
pub fn encode_noisy(model: &SuffiAEModel, x: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
    let enc = encode(model, x)?;
    let noise = draw_noise(model, x.rows(), rng);
    enc.add(&noise)
}

/// Decoder reconstruction `f_θ(z)`.
pub fn decode(model: &SuffiAEModel, z: &Matrix) -> Result<Matrix> {
    model.check_latent(z)?;
    Ok(SuffiAEModel::map_rows(&model.decoder, z, model.input_dim()))
}

/// `σ(z·w + b)` per row.
pub fn classify(model: &SuffiAEModel, z: &Matrix) -> Result<Vec<f64>> {
    model.check_latent(z)?;
    Ok(z.row_iter()
        .map(|r| sigmoid(dot(r, &model.clf_weights) + model.clf_bias))
        .collect())
}

/// An `n × d` matrix of `N(0, ᾱ)` entries: the noise shared by a paired
/// [`loss`] / [`grad`] evaluation.
pub fn draw_noise(model: &SuffiAEModel, n: usize, rng: &mut RngStream) -> Matrix {
    let sd = model.noise_alpha.sqrt();
    let d = model.latent_dim();
    let data = (0..n * d).map(|_| sd * rng.standard_normal()).collect();
    Matrix::new(n, d, data).unwrap_or_else(|_| Matrix::zeros(n, d))
}

/// Objective terms for a given noise matrix.
pub fn loss_terms_with_noise(
    model: &SuffiAEModel,
    batch: &LabeledBatch,
    noise: &Matrix,
) -> Result<LossTerms> {
    model.check_input(&batch.x)?;
    if noise.shape() != (batch.len(), model.latent_dim()) {
        return Err(dim_err("noise matrix shape does not match the batch"));
    }
    model.check_finite()?;
    let kl_const = noise_kl_constant(model.latent_dim(), model.noise_alpha);
    let mut terms = LossTerms {
        reconstruction: 0.0,
        classification: 0.0,
        regularization: 0.0,
    };
    for (i, x) in batch.x.row_iter().enumerate() {
        let enc = network::forward(&model.encoder, x);
        let z: Vec<f64> = enc.iter().zip(noise.row(i)).map(|(a, b)| a + b).collect();
        let recon = network::forward(&model.decoder, &z);
        terms.reconstruction +=
            0.5 * x.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let p = sigmoid(dot(&z, &model.clf_weights) + model.clf_bias).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        terms.classification -= if batch.y[i] == 1 { p.ln() } else { (1.0 - p).ln() };
        terms.regularization += 0.5 * (sq_norm(&enc) + kl_const);
    }
    if !terms.total().is_finite() {
        return Err(Error::NumericalOverflow("loss is not finite".into()));
    }
    Ok(terms)
}

pub fn loss_with_noise(model: &SuffiAEModel, batch: &LabeledBatch, noise: &Matrix) -> Result<f64> {
    loss_terms_with_noise(model, batch, noise).map(|t| t.total())
}

/// Negated objective summed over the batch, with one noise draw per row.
pub fn loss(model: &SuffiAEModel, batch: &LabeledBatch, rng: &mut RngStream) -> Result<f64> {
    let noise = draw_noise(model, batch.len(), rng);
    loss_with_noise(model, batch, &noise)
}

/// Objective with the noise draw zeroed; the `ᾱ` term stays analytic.
pub fn loss_noiseless(model: &SuffiAEModel, batch: &LabeledBatch) -> Result<f64> {
    loss_with_noise(model, batch, &Matrix::zeros(batch.len(), model.latent_dim()))
}

/// Exact gradient of [`loss_with_noise`].
pub fn grad_with_noise(
    model: &SuffiAEModel,
    batch: &LabeledBatch,
    noise: &Matrix,
) -> Result<SuffiAEGrad> {
    model.check_input(&batch.x)?;
    if noise.shape() != (batch.len(), model.latent_dim()) {
        return Err(dim_err("noise matrix shape does not match the batch"));
    }
    model.check_finite()?;
    let mut g = SuffiAEGrad {
        encoder: model.encoder.iter().map(Dense::zeros_like).collect(),
        decoder: model.decoder.iter().map(Dense::zeros_like).collect(),
        clf_weights: vec![0.0; model.latent_dim()],
        clf_bias: 0.0,
    };
    for (i, x) in batch.x.row_iter().enumerate() {
        let enc_trace = network::forward_trace(&model.encoder, x);
        let enc = enc_trace.output();
        let z: Vec<f64> = enc.iter().zip(noise.row(i)).map(|(a, b)| a + b).collect();
        let dec_trace = network::forward_trace(&model.decoder, &z);
        let recon = dec_trace.output();

        let d_recon: Vec<f64> = recon.iter().zip(x).map(|(r, t)| r - t).collect();
        let mut d_z = network::backward(&model.decoder, &dec_trace, &d_recon, &mut g.decoder);

        let p = sigmoid(dot(&z, &model.clf_weights) + model.clf_bias);
        let d_logit = p - f64::from(batch.y[i]);
        for ((gw, zj), (dz, w)) in g
            .clf_weights
            .iter_mut()
            .zip(&z)
            .zip(d_z.iter_mut().zip(&model.clf_weights))
        {
            *gw += d_logit * zj;
            *dz += d_logit * w;
        }
        g.clf_bias += d_logit;

        let d_enc: Vec<f64> = d_z.iter().zip(enc).map(|(a, e)| a + e).collect();
        network::backward(&model.encoder, &enc_trace, &d_enc, &mut g.encoder);
    }
    if !g.flatten().iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalOverflow("gradient is not finite".into()));
    }
    Ok(g)
}

/// Gradient of [`loss`]. Called with a clone of the stream handed to
/// [`loss`], it sees the same noise draw.
pub fn grad(model: &SuffiAEModel, batch: &LabeledBatch, rng: &mut RngStream) -> Result<SuffiAEGrad> {
    let noise = draw_noise(model, batch.len(), rng);
    grad_with_noise(model, batch, &noise)
}

impl SuffiAEGrad {
    /// Flattened in the layout of [`SuffiAEModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            l.flatten_into(&mut out);
        }
        out.extend_from_slice(&self.clf_weights);
        out.push(self.clf_bias);
        out
    }
}

/// Mini-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl From<&AeConfig> for TrainConfig {
    fn from(c: &AeConfig) -> Self {
        Self {
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
        }
    }
}

/// Plain mini-batch gradient descent on [`loss`]; each step moves along
/// the batch-mean gradient.
pub fn train(
    model: &SuffiAEModel,
    data: &LabeledBatch,
    cfg: TrainConfig,
    rng: &mut RngStream,
) -> Result<SuffiAEModel> {
    train_with_history(model, data, cfg, rng).map(|(m, _)| m)
}

/// Like [`train`], also returning the noiseless full-data loss before
/// training and after every epoch.
pub fn train_with_history(
    model: &SuffiAEModel,
    data: &LabeledBatch,
    cfg: TrainConfig,
    rng: &mut RngStream,
) -> Result<(SuffiAEModel, Vec<f64>)> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::Config("learning rate must be a non-negative number".into()));
    }
    let batch_size = cfg.batch_size.max(1);
    let mut model = model.clone();
    let mut params = model.parameters();
    let mut history = vec![loss_noiseless(&model, data)?];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size) {
            let batch = data.select(chunk);
            let g = grad(&model, &batch, rng)?.flatten();
            let step = cfg.learning_rate / chunk.len() as f64;
            for (p, gi) in params.iter_mut().zip(&g) {
                *p -= step * gi;
            }
            model = model.with_parameters(&params)?;
        }
        history.push(loss_noiseless(&model, data)?);
    }
    Ok((model, history))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    layer_dims_enc: Vec<usize>,
    layer_dims_dec: Vec<usize>,
    enc_weights: Vec<Vec<f64>>,
    enc_biases: Vec<Vec<f64>>,
    dec_weights: Vec<Vec<f64>>,
    dec_biases: Vec<Vec<f64>>,
    clf_weights: Vec<f64>,
    clf_bias: f64,
    noise_alpha: f64,
}

impl SuffiAEModel {
    /// JSON document with layer widths and flat row-major weight arrays.
    /// Stays on the site; never part of a federation message.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelJson {
            layer_dims_enc: self.encoder_dims(),
            layer_dims_dec: self.decoder_dims(),
            enc_weights: self.encoder.iter().map(|l| l.weights.as_slice().to_vec()).collect(),
            enc_biases: self.encoder.iter().map(|l| l.bias.clone()).collect(),
            dec_weights: self.decoder.iter().map(|l| l.weights.as_slice().to_vec()).collect(),
            dec_biases: self.decoder.iter().map(|l| l.bias.clone()).collect(),
            clf_weights: self.clf_weights.clone(),
            clf_bias: self.clf_bias,
            noise_alpha: self.noise_alpha,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelJson = serde_json::from_str(s)?;
        let build = |dims: &[usize], ws: Vec<Vec<f64>>, bs: Vec<Vec<f64>>| -> Result<Vec<Dense>> {
            if dims.len() != ws.len() + 1 || ws.len() != bs.len() {
                return Err(dim_err("layer arrays disagree with layer dims"));
            }
            dims.windows(2)
                .zip(ws.into_iter().zip(bs))
                .map(|(w, (weights, bias))| Dense::new(Matrix::new(w[1], w[0], weights)?, bias))
                .collect()
        };
        let encoder = build(&doc.layer_dims_enc, doc.enc_weights, doc.enc_biases)?;
        let decoder = build(&doc.layer_dims_dec, doc.dec_weights, doc.dec_biases)?;
        Self::from_parts(encoder, decoder, doc.clf_weights, doc.clf_bias, doc.noise_alpha)
    }
}
