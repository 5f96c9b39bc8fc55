//! Covariance filters and the multi-layer covariance neural network.
//!
//! A covariance filter is a polynomial in the (normalized) anatomical
//! covariance matrix, `H(C) = Σₖ hₖ Cᵏ`. A layer is a bank of `f_out × f_in`
//! such filters followed by a pointwise activation, and the model reads out
//! the unweighted mean of the final single-channel regional outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VnnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, VnnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `u`, given the activation output `y = σ(u)`.
    /// The relu subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, u: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Taps `(h₀, …, h_K)` of a single covariance filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTaps(pub Vec<f64>);

impl FilterTaps {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(VnnError::InvalidArchitecture("a filter needs at least one tap".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(VnnError::InvalidArchitecture("non-finite filter tap".into()));
        }
        Ok(FilterTaps(taps))
    }

    /// Filter order K.
    pub fn order(&self) -> usize {
        self.0.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub f_in: usize,
    pub f_out: usize,
    /// K + 1.
    pub num_taps: usize,
    pub activation: Activation,
}

impl LayerConfig {
    pub fn new(f_in: usize, f_out: usize, num_taps: usize, activation: Activation) -> Self {
        LayerConfig {
            f_in,
            f_out,
            num_taps,
            activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.f_in * self.f_out * self.num_taps
    }
}

/// Three filter banks totalling 22,570 taps: 1→61 (2 taps, relu),
/// 61→61 (6 taps, relu) and a 61→1 readout bank (2 taps, identity).
pub fn default_architecture() -> Vec<LayerConfig> {
    vec![
        LayerConfig::new(1, 61, 2, Activation::Relu),
        LayerConfig::new(61, 61, 6, Activation::Relu),
        LayerConfig::new(61, 1, 2, Activation::Identity),
    ]
}

pub fn parameter_count(configs: &[LayerConfig]) -> usize {
    configs.iter().map(LayerConfig::parameter_count).sum()
}

/// Checks that widths chain from a single input channel to a single output channel.
pub fn validate_architecture(configs: &[LayerConfig]) -> Result<()> {
    let first = configs
        .first()
        .ok_or_else(|| VnnError::InvalidArchitecture("no layers".into()))?;
    if first.f_in != 1 {
        return Err(VnnError::InvalidArchitecture(format!(
            "first layer must take 1 input channel, got {}",
            first.f_in
        )));
    }
    for (i, l) in configs.iter().enumerate() {
        if l.f_in == 0 || l.f_out == 0 || l.num_taps == 0 {
            return Err(VnnError::InvalidArchitecture(format!(
                "layer {i} has a zero width or tap count"
            )));
        }
        if i > 0 && configs[i - 1].f_out != l.f_in {
            return Err(VnnError::InvalidArchitecture(format!(
                "layer {i} expects {} inputs but layer {} produces {}",
                l.f_in,
                i - 1,
                configs[i - 1].f_out
            )));
        }
    }
    let last = configs.last().unwrap();
    if last.f_out != 1 {
        return Err(VnnError::InvalidArchitecture(format!(
            "last layer must produce 1 channel, got {}",
            last.f_out
        )));
    }
    Ok(())
}

/// Filter taps of one layer, indexed `[f_out][f_in][k]`, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTaps {
    f_out: usize,
    f_in: usize,
    num_taps: usize,
    data: Vec<f64>,
}

impl LayerTaps {
    pub fn zeros(config: &LayerConfig) -> Self {
        LayerTaps {
            f_out: config.f_out,
            f_in: config.f_in,
            num_taps: config.num_taps,
            data: vec![0.0; config.parameter_count()],
        }
    }

    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let f_out = nested.len();
        let f_in = nested.first().map_or(0, Vec::len);
        let num_taps = nested.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(f_out * f_in * num_taps);
        for row in nested {
            if row.len() != f_in {
                return Err(VnnError::DimensionMismatch("ragged tap tensor".into()));
            }
            for taps in row {
                if taps.len() != num_taps {
                    return Err(VnnError::DimensionMismatch("ragged tap tensor".into()));
                }
                data.extend_from_slice(taps);
            }
        }
        Ok(LayerTaps {
            f_out,
            f_in,
            num_taps,
            data,
        })
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.f_out)
            .map(|f| (0..self.f_in).map(|g| self.filter(f, g).to_vec()).collect())
            .collect()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.f_out, self.f_in, self.num_taps)
    }

    #[inline]
    fn offset(&self, f: usize, g: usize) -> usize {
        (f * self.f_in + g) * self.num_taps
    }

    /// Taps of the filter mapping input channel `g` to output channel `f`.
    pub fn filter(&self, f: usize, g: usize) -> &[f64] {
        let o = self.offset(f, g);
        &self.data[o..o + self.num_taps]
    }

    pub fn filter_mut(&mut self, f: usize, g: usize) -> &mut [f64] {
        let o = self.offset(f, g);
        &mut self.data[o..o + self.num_taps]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Per-power mixing matrices `W_k[g][f] = h_fg[k]`, each f_in × f_out.
    pub(crate) fn mixing_matrices(&self) -> Vec<Matrix> {
        (0..self.num_taps)
            .map(|k| {
                let mut w = Matrix::zeros(self.f_in, self.f_out);
                for f in 0..self.f_out {
                    for g in 0..self.f_in {
                        w[(g, f)] = self.data[self.offset(f, g) + k];
                    }
                }
                w
            })
            .collect()
    }
}

/// The full tap set across layers. Also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapTensor {
    pub layers: Vec<LayerTaps>,
}

impl TapTensor {
    pub fn zeros(configs: &[LayerConfig]) -> Self {
        TapTensor {
            layers: configs.iter().map(LayerTaps::zeros).collect(),
        }
    }

    pub fn zeros_like(other: &TapTensor) -> Self {
        TapTensor {
            layers: other
                .layers
                .iter()
                .map(|l| LayerTaps {
                    data: vec![0.0; l.data.len()],
                    ..l.clone()
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &TapTensor) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.data.iter_mut())
    }

    /// `self += scale * other`. Shapes must agree.
    pub fn add_scaled(&mut self, other: &TapTensor, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn matches(&self, configs: &[LayerConfig]) -> bool {
        self.layers.len() == configs.len()
            && self
                .layers
                .iter()
                .zip(configs)
                .all(|(t, c)| t.shape() == (c.f_out, c.f_in, c.num_taps))
    }
}

/// Seeded uniform initialization on (−a, a), a = 1/√(f_in·num_taps).
pub fn init_parameters(configs: &[LayerConfig], seed: u64) -> TapTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taps = TapTensor::zeros(configs);
    for (layer, cfg) in taps.layers.iter_mut().zip(configs) {
        let a = 1.0 / ((cfg.f_in * cfg.num_taps) as f64).sqrt();
        for v in layer.data.iter_mut() {
            *v = rng.random_range(-a..a);
        }
    }
    taps
}

/// `Σₖ hₖ Cᵏ x`, accumulated through repeated products with C.
pub fn covariance_filter_apply(c: &Matrix, taps: &FilterTaps, x: &[f64]) -> Result<Vec<f64>> {
    if !c.is_square() || c.rows() != x.len() {
        return Err(VnnError::DimensionMismatch(format!(
            "{}x{} covariance with signal of length {}",
            c.rows(),
            c.cols(),
            x.len()
        )));
    }
    let mut z = x.to_vec();
    let mut out: Vec<f64> = x.iter().map(|v| taps.0[0] * v).collect();
    for &h in &taps.0[1..] {
        z = c.matvec(&z)?;
        for (o, zi) in out.iter_mut().zip(&z) {
            *o += h * zi;
        }
    }
    Ok(out)
}

/// Scalar response `h(λ) = Σₖ hₖ λᵏ`, by Horner's rule.
pub fn frequency_response(taps: &FilterTaps, lambda: f64) -> f64 {
    taps.0.iter().rev().fold(0.0, |acc, &h| acc * lambda + h)
}

/// Intermediate values of one layer kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    /// `Cᵏ X_in` for k = 0..=K, each m × f_in.
    pub powers: Vec<Matrix>,
    /// Pre-activation, m × f_out.
    pub pre: Matrix,
    /// Post-activation, m × f_out.
    pub out: Matrix,
}

pub(crate) fn layer_forward_cached(
    layer: &LayerConfig,
    taps: &LayerTaps,
    c: &Matrix,
    x_in: Matrix,
) -> LayerCache {
    let m = x_in.rows();
    let mut powers = Vec::with_capacity(layer.num_taps);
    powers.push(x_in);
    for k in 1..layer.num_taps {
        let mut next = Matrix::zeros(m, layer.f_in);
        linalg::matmul_into(c, &powers[k - 1], &mut next);
        powers.push(next);
    }
    let mut pre = Matrix::zeros(m, layer.f_out);
    for (z, w) in powers.iter().zip(taps.mixing_matrices()) {
        linalg::matmul_acc(z, &w, &mut pre);
    }
    let mut out = pre.clone();
    out.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = layer.activation.apply(*v));
    LayerCache { powers, pre, out }
}

/// One filter-bank layer: `X_out[:, f] = σ(Σ_g H_fg(C) X_in[:, g])`.
pub fn layer_forward(
    layer: &LayerConfig,
    taps: &LayerTaps,
    c: &Matrix,
    x_in: &Matrix,
) -> Result<Matrix> {
    if !c.is_square() || c.rows() != x_in.rows() {
        return Err(VnnError::DimensionMismatch(format!(
            "{}x{} covariance with {} regions in the input",
            c.rows(),
            c.cols(),
            x_in.rows()
        )));
    }
    if x_in.cols() != layer.f_in {
        return Err(VnnError::DimensionMismatch(format!(
            "layer expects {} input channels, got {}",
            layer.f_in,
            x_in.cols()
        )));
    }
    if taps.shape() != (layer.f_out, layer.f_in, layer.num_taps) {
        return Err(VnnError::DimensionMismatch(format!(
            "tap shape {:?} does not match layer {layer:?}",
            taps.shape()
        )));
    }
    Ok(layer_forward_cached(layer, taps, c, x_in.clone()).out)
}

/// Metadata recorded when a model is trained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_val_mae: Option<f64>,
}

/// A covariance neural network with its attached (normalized) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct VnnModel {
    layers: Vec<LayerConfig>,
    taps: TapTensor,
    covariance: Matrix,
    lambda_max: f64,
    region_labels: Vec<String>,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Final-layer value per region.
    pub regional_outputs: Vec<f64>,
    /// Unweighted mean of `regional_outputs`.
    pub age_estimate: f64,
    /// Outputs of every layer (m × f_out), when requested.
    pub layer_outputs: Option<Vec<Matrix>>,
}

impl VnnModel {
    /// Builds a model from a raw covariance matrix, which is normalized by its
    /// largest eigenvalue.
    pub fn new(
        layers: Vec<LayerConfig>,
        taps: TapTensor,
        covariance: &Matrix,
        region_labels: Vec<String>,
    ) -> Result<Self> {
        let (normalized, lambda_max) = linalg::normalize_covariance(covariance)?;
        VnnModel::from_parts(layers, taps, normalized, lambda_max, region_labels)
    }

    /// Assembles a model whose covariance is already normalized.
    pub fn from_parts(
        layers: Vec<LayerConfig>,
        taps: TapTensor,
        covariance: Matrix,
        lambda_max: f64,
        region_labels: Vec<String>,
    ) -> Result<Self> {
        validate_architecture(&layers)?;
        if !taps.matches(&layers) {
            return Err(VnnError::DimensionMismatch(
                "tap tensor does not match the layer configuration".into(),
            ));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(VnnError::InvalidArchitecture("non-finite filter tap".into()));
        }
        covariance.check_symmetric()?;
        if covariance.rows() != region_labels.len() {
            return Err(VnnError::DimensionMismatch(format!(
                "{} region labels for a {}x{} covariance",
                region_labels.len(),
                covariance.rows(),
                covariance.cols()
            )));
        }
        if !(lambda_max.is_finite() && lambda_max >= 0.0) {
            return Err(VnnError::InvalidArchitecture(format!("lambda_max {lambda_max}")));
        }
        Ok(VnnModel {
            layers,
            taps,
            covariance,
            lambda_max,
            region_labels,
            metadata: TrainingMetadata::default(),
        })
    }

    pub fn layers(&self) -> &[LayerConfig] {
        &self.layers
    }

    pub fn taps(&self) -> &TapTensor {
        &self.taps
    }

    pub(crate) fn taps_mut(&mut self) -> &mut TapTensor {
        &mut self.taps
    }

    /// Normalized covariance used by the filters.
    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn region_labels(&self) -> &[String] {
        &self.region_labels
    }

    pub fn num_regions(&self) -> usize {
        self.region_labels.len()
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.layers)
    }

    /// Replaces the taps, keeping everything else.
    pub fn with_taps(&self, taps: TapTensor) -> Result<Self> {
        if !taps.matches(&self.layers) {
            return Err(VnnError::DimensionMismatch(
                "tap tensor does not match the layer configuration".into(),
            ));
        }
        Ok(VnnModel {
            taps,
            ..self.clone()
        })
    }

    /// Same taps, covariance replaced by `c_new / λ_max(c_new)`.
    pub fn with_covariance(&self, c_new: &Matrix) -> Result<Self> {
        if c_new.rows() != self.num_regions() || c_new.cols() != self.num_regions() {
            return Err(VnnError::DimensionMismatch(format!(
                "model has {} regions, covariance is {}x{}",
                self.num_regions(),
                c_new.rows(),
                c_new.cols()
            )));
        }
        let (normalized, lambda_max) = linalg::normalize_covariance(c_new)?;
        Ok(VnnModel {
            covariance: normalized,
            lambda_max,
            ..self.clone()
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_regions() {
            return Err(VnnError::DimensionMismatch(format!(
                "model has {} regions, input has {}",
                self.num_regions(),
                x.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> Vec<LayerCache> {
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        let mut input = Matrix::column_vector(x);
        for (cfg, taps) in self.layers.iter().zip(&self.taps.layers) {
            let cache = layer_forward_cached(cfg, taps, &self.covariance, input);
            input = cache.out.clone();
            caches.push(cache);
        }
        caches
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        self.forward_impl(x, false)
    }

    /// Like [`VnnModel::forward`], also returning every layer's output.
    pub fn forward_with_layers(&self, x: &[f64]) -> Result<ForwardOutput> {
        self.forward_impl(x, true)
    }

    fn forward_impl(&self, x: &[f64], keep_layers: bool) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut input = Matrix::column_vector(x);
        let mut kept = Vec::new();
        for (cfg, taps) in self.layers.iter().zip(&self.taps.layers) {
            input = layer_forward_cached(cfg, taps, &self.covariance, input).out;
            if keep_layers {
                kept.push(input.clone());
            }
        }
        let regional_outputs = input.column(0);
        let age_estimate = regional_outputs.iter().sum::<f64>() / regional_outputs.len() as f64;
        Ok(ForwardOutput {
            regional_outputs,
            age_estimate,
            layer_outputs: keep_layers.then_some(kept),
        })
    }

    /// Forward passes for many subjects, in input order.
    pub fn forward_many(&self, xs: &[Vec<f64>]) -> Result<Vec<ForwardOutput>> {
        xs.par_iter().map(|x| self.forward(x)).collect()
    }
}
