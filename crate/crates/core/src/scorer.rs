//! Feed-forward multi-task scoring networks.
//!
//! Five layouts share the same building blocks:
//!
//! * `baseline`: `top(embedding)`
//! * `cat`: `top(embedding ++ features)`
//! * `net`: `top(embedding ++ grammar(features))`
//! * `multi`: as `net`, with an auxiliary head on the top-tower output
//! * `dual`: as `net`, with an auxiliary head on the grammar-tower output
//!
//! Towers are stacks of relu layers with inverted dropout; both heads are
//! single linear units. Parameters are laid out (and serialized) in the
//! order grammar tower, top tower, main head, auxiliary head; each layer
//! stores its `out x in` weights row-major followed by its bias.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{denormalize_prediction, ScoreScale};
use crate::eval::qwk;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("{tower} input has length {got}, expected {expected}")]
    Shape {
        tower: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("parameter block has {got} values, model needs {expected}")]
    ParameterCount { expected: usize, got: usize },
}

fn config_err(msg: &str) -> ScorerError {
    ScorerError::Config(String::from(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Baseline,
    Cat,
    Net,
    Multi,
    Dual,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Self::Baseline,
        Self::Cat,
        Self::Net,
        Self::Multi,
        Self::Dual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Cat => "cat",
            Self::Net => "net",
            Self::Multi => "multi",
            Self::Dual => "dual",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn uses_features(self) -> bool {
        self != Self::Baseline
    }

    pub fn has_grammar_tower(self) -> bool {
        matches!(self, Self::Net | Self::Multi | Self::Dual)
    }

    pub fn has_aux_head(self) -> bool {
        matches!(self, Self::Multi | Self::Dual)
    }

    /// Top-tower depth selected on development data for each layout.
    pub fn default_top_depth(self) -> usize {
        match self {
            Self::Baseline => 1,
            Self::Cat | Self::Net => 2,
            Self::Multi | Self::Dual => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub grammar_width: usize,
    pub grammar_depth: usize,
    pub top_width: usize,
    pub top_depth: usize,
    pub dropout: f64,
}

impl ModelDims {
    /// Standard sizes: a 3-layer grammar tower of width `feature_dim / 2`
    /// and a 512-wide top tower of the layout's default depth.
    pub fn new(arch: Architecture, embed_dim: usize, feature_dim: usize) -> Self {
        Self {
            embed_dim,
            feature_dim,
            grammar_width: (feature_dim / 2).max(1),
            grammar_depth: 3,
            top_width: 512,
            top_depth: arch.default_top_depth(),
            dropout: 0.2,
        }
    }

    pub fn top_input(&self, arch: Architecture) -> usize {
        match arch {
            Architecture::Baseline => self.embed_dim,
            Architecture::Cat => self.embed_dim + self.feature_dim,
            _ => self.embed_dim + self.grammar_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    /// Per-unit dropout scale (0 or 1/(1-p)) when dropout was applied.
    mask: Option<Vec<f64>>,
    output: Vec<f64>,
}

impl DenseLayer {
    fn init(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // Fan-in uniform: variance 2/fan_in for relu, 1/fan_in for linear.
        let gain = if activation == Activation::Relu {
            6.0
        } else {
            3.0
        };
        let limit = libm::sqrt(gain / inputs as f64);
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
            dropout,
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward<'r>(&self, input: &[f64], rng: Option<&mut (dyn RngCore + 'r)>) -> LayerCache {
        let mut pre = self.bias.clone();
        for (o, p) in pre.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *p += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
        let mut output: Vec<f64> = match self.activation {
            Activation::Relu => pre.iter().map(|&z| z.max(0.0)).collect(),
            Activation::Linear => pre.clone(),
        };
        let mask = match rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 / (1.0 - self.dropout);
                let mask: Vec<f64> = (0..self.outputs)
                    .map(|_| {
                        if rng.random::<f64>() < self.dropout {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect();
                for (y, m) in output.iter_mut().zip(&mask) {
                    *y *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        LayerCache {
            input: input.to_vec(),
            pre,
            mask,
            output,
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, cache: &LayerCache, d_out: &[f64], grad: &mut LayerGrad) -> Vec<f64> {
        let mut d_pre = d_out.to_vec();
        if let Some(mask) = &cache.mask {
            for (d, m) in d_pre.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        if self.activation == Activation::Relu {
            for (d, &z) in d_pre.iter_mut().zip(&cache.pre) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let mut d_in = vec![0.0; self.inputs];
        for (o, &d) in d_pre.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += d * cache.input[i];
                d_in[i] += d * row[i];
            }
            grad.bias[o] += d;
        }
        d_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients in canonical layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros(model: &ScoringModel) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Per-sample activations needed for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    grammar: Vec<LayerCache>,
    top: Vec<LayerCache>,
    main: LayerCache,
    aux: Option<LayerCache>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub main: f64,
    pub aux: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub architecture: Architecture,
    pub dims: ModelDims,
    pub grammar_tower: Vec<DenseLayer>,
    pub top_tower: Vec<DenseLayer>,
    pub main_head: DenseLayer,
    pub aux_head: Option<DenseLayer>,
}

impl ScoringModel {
    pub fn new(
        architecture: Architecture,
        dims: ModelDims,
        seed: u64,
    ) -> Result<Self, ScorerError> {
        if dims.embed_dim == 0 {
            return Err(config_err("embedding dimension must be positive"));
        }
        if architecture.uses_features() && dims.feature_dim == 0 {
            return Err(config_err("feature dimension must be positive"));
        }
        if dims.top_width == 0 || dims.top_depth == 0 {
            return Err(config_err("top tower needs positive width and depth"));
        }
        if architecture.has_grammar_tower() && (dims.grammar_width == 0 || dims.grammar_depth == 0)
        {
            return Err(config_err("grammar tower needs positive width and depth"));
        }
        if !(0.0..1.0).contains(&dims.dropout) {
            return Err(config_err("dropout rate must lie in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = dims.dropout;
        let mut grammar_tower = Vec::new();
        if architecture.has_grammar_tower() {
            let mut width = dims.feature_dim;
            for _ in 0..dims.grammar_depth {
                grammar_tower.push(DenseLayer::init(
                    width,
                    dims.grammar_width,
                    Activation::Relu,
                    p,
                    &mut rng,
                ));
                width = dims.grammar_width;
            }
        }
        let mut top_tower = Vec::new();
        let mut width = dims.top_input(architecture);
        for _ in 0..dims.top_depth {
            top_tower.push(DenseLayer::init(
                width,
                dims.top_width,
                Activation::Relu,
                p,
                &mut rng,
            ));
            width = dims.top_width;
        }
        let main_head = DenseLayer::init(dims.top_width, 1, Activation::Linear, 0.0, &mut rng);
        let aux_head = match architecture {
            Architecture::Multi => Some(DenseLayer::init(
                dims.top_width,
                1,
                Activation::Linear,
                0.0,
                &mut rng,
            )),
            Architecture::Dual => Some(DenseLayer::init(
                dims.grammar_width,
                1,
                Activation::Linear,
                0.0,
                &mut rng,
            )),
            _ => None,
        };
        Ok(Self {
            architecture,
            dims,
            grammar_tower,
            top_tower,
            main_head,
            aux_head,
        })
    }

    pub fn layers(&self) -> Vec<&DenseLayer> {
        let mut v: Vec<&DenseLayer> = self.grammar_tower.iter().chain(&self.top_tower).collect();
        v.push(&self.main_head);
        v.extend(self.aux_head.as_ref());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v: Vec<&mut DenseLayer> = self
            .grammar_tower
            .iter_mut()
            .chain(self.top_tower.iter_mut())
            .collect();
        v.push(&mut self.main_head);
        v.extend(self.aux_head.as_mut());
        v
    }

    pub fn has_aux(&self) -> bool {
        self.aux_head.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers()
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), ScorerError> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(ScorerError::ParameterCount {
                expected,
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for layer in self.layers_mut() {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    fn check_inputs(&self, embedding: &[f64], features: &[f64]) -> Result<(), ScorerError> {
        if embedding.len() != self.dims.embed_dim {
            return Err(ScorerError::Shape {
                tower: "embedding",
                expected: self.dims.embed_dim,
                got: embedding.len(),
            });
        }
        if self.architecture.uses_features() && features.len() != self.dims.feature_dim {
            return Err(ScorerError::Shape {
                tower: "grammar features",
                expected: self.dims.feature_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    /// Runs the network. Passing an rng selects training mode (dropout on).
    pub fn forward<'r>(
        &self,
        embedding: &[f64],
        features: &[f64],
        mut rng: Option<&mut (dyn RngCore + 'r)>,
    ) -> Result<(Prediction, ForwardCache), ScorerError> {
        self.check_inputs(embedding, features)?;
        let mut grammar = Vec::with_capacity(self.grammar_tower.len());
        let mut x = features.to_vec();
        for layer in &self.grammar_tower {
            let c = layer.forward(&x, rng.as_deref_mut());
            x = c.output.clone();
            grammar.push(c);
        }
        let mut top_in = embedding.to_vec();
        match self.architecture {
            Architecture::Baseline => {}
            Architecture::Cat => top_in.extend_from_slice(features),
            _ => top_in.extend_from_slice(&x),
        }
        let mut top = Vec::with_capacity(self.top_tower.len());
        let mut h = top_in;
        for layer in &self.top_tower {
            let c = layer.forward(&h, rng.as_deref_mut());
            h = c.output.clone();
            top.push(c);
        }
        let main = self.main_head.forward(&h, None);
        let aux = match (&self.aux_head, self.architecture) {
            (Some(head), Architecture::Dual) => Some(head.forward(&x, None)),
            (Some(head), _) => Some(head.forward(&h, None)),
            (None, _) => None,
        };
        let pred = Prediction {
            main: main.output[0],
            aux: aux.as_ref().map(|c| c.output[0]),
        };
        Ok((
            pred,
            ForwardCache {
                grammar,
                top,
                main,
                aux,
            },
        ))
    }

    pub fn infer(&self, embedding: &[f64], features: &[f64]) -> Result<Prediction, ScorerError> {
        self.forward(embedding, features, None).map(|(p, _)| p)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivatives with
    /// respect to the main and auxiliary outputs are `d_main` and `d_aux`.
    pub fn backward(&self, cache: &ForwardCache, d_main: f64, d_aux: f64, grads: &mut Gradients) {
        let g_len = self.grammar_tower.len();
        let t_len = self.top_tower.len();
        let main_idx = g_len + t_len;
        let mut d_h = self
            .main_head
            .backward(&cache.main, &[d_main], &mut grads.layers[main_idx]);
        let mut d_g_extra = None;
        if let (Some(head), Some(c)) = (&self.aux_head, &cache.aux) {
            let d = head.backward(c, &[d_aux], &mut grads.layers[main_idx + 1]);
            if self.architecture == Architecture::Dual {
                d_g_extra = Some(d);
            } else {
                for (a, b) in d_h.iter_mut().zip(&d) {
                    *a += b;
                }
            }
        }
        for (i, layer) in self.top_tower.iter().enumerate().rev() {
            d_h = layer.backward(&cache.top[i], &d_h, &mut grads.layers[g_len + i]);
        }
        if !self.architecture.has_grammar_tower() {
            return;
        }
        let mut d_g = d_h[self.dims.embed_dim..].to_vec();
        if let Some(extra) = d_g_extra {
            for (a, b) in d_g.iter_mut().zip(&extra) {
                *a += b;
            }
        }
        for (i, layer) in self.grammar_tower.iter().enumerate().rev() {
            d_g = layer.backward(&cache.grammar[i], &d_g, &mut grads.layers[i]);
        }
    }

    /// Eval-mode main-head score mapped back onto `scale`.
    pub fn predict(
        &self,
        embedding: &[f64],
        features: &[f64],
        scale: &ScoreScale,
    ) -> Result<i64, ScorerError> {
        Ok(denormalize_prediction(
            self.infer(embedding, features)?.main,
            scale,
        ))
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64, ScorerError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(ScorerError::Shape {
            tower: "loss target",
            expected: pred.len(),
            got: target.len(),
        });
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `MSE(main)` for single-task models, otherwise
/// `lambda * MSE(main) + (1 - lambda) * MSE(aux)`.
pub fn loss(
    main_pred: &[f64],
    main_target: &[f64],
    aux_pred: Option<&[f64]>,
    aux_target: Option<&[f64]>,
    lambda: f64,
) -> Result<f64, ScorerError> {
    let main = mse(main_pred, main_target)?;
    let Some(aux_pred) = aux_pred else {
        return Ok(main);
    };
    let Some(aux_target) = aux_target else {
        return Err(config_err(
            "auxiliary loss requested without auxiliary labels",
        ));
    };
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(config_err("main loss weight must lie in (0, 1]"));
    }
    Ok(lambda * main + (1.0 - lambda) * mse(aux_pred, aux_target)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the main-task loss; ignored by single-task layouts.
    pub main_loss_weight: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 10,
            batch_size: 16,
            main_loss_weight: 0.8,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.batch_size == 0 {
            return Err(config_err("batch size must be positive"));
        }
        if !(self.main_loss_weight > 0.0 && self.main_loss_weight <= 1.0) {
            return Err(config_err("main loss weight must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(config_err("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(config_err("invalid Adam constants"));
        }
        Ok(())
    }
}

/// Adam with bias correction over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: &TrainConfig, params: usize) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    pub fn update(&mut self, model: &mut ScoringModel, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let mut k = 0;
        for (layer, g) in model.layers_mut().into_iter().zip(&grads.layers) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            for (p, &gi) in params.zip(gs) {
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gi;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gi * gi;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *p -= self.lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
                k += 1;
            }
        }
    }
}

/// Row-aligned training data. Targets are normalized to `[-1, 1]`;
/// `scores` are the integer scores used for QWK.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub embeddings: Vec<f64>,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub scores: Vec<i64>,
    pub aux_targets: Option<Vec<f64>>,
    pub aux_scores: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(
        embed_dim: usize,
        feature_dim: usize,
        embeddings: Vec<f64>,
        features: Vec<f64>,
        targets: Vec<f64>,
        scores: Vec<i64>,
    ) -> Result<Self, ScorerError> {
        let n = targets.len();
        let check = |tower, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(ScorerError::Shape {
                    tower,
                    expected,
                    got,
                })
            }
        };
        check("embedding table", n * embed_dim, embeddings.len())?;
        check("feature table", n * feature_dim, features.len())?;
        check("score list", n, scores.len())?;
        Ok(Self {
            embed_dim,
            feature_dim,
            embeddings,
            features,
            targets,
            scores,
            aux_targets: None,
            aux_scores: None,
        })
    }

    pub fn with_aux(
        mut self,
        targets: Vec<f64>,
        scores: Option<Vec<i64>>,
    ) -> Result<Self, ScorerError> {
        let n = self.len();
        if targets.len() != n || scores.as_ref().is_some_and(|s| s.len() != n) {
            return Err(ScorerError::Shape {
                tower: "auxiliary labels",
                expected: n,
                got: targets.len(),
            });
        }
        self.aux_targets = Some(targets);
        self.aux_scores = scores;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64], w: usize| {
            rows.iter()
                .flat_map(|&i| v[i * w..(i + 1) * w].iter().copied())
                .collect()
        };
        Self {
            embed_dim: self.embed_dim,
            feature_dim: self.feature_dim,
            embeddings: pick(&self.embeddings, self.embed_dim),
            features: pick(&self.features, self.feature_dim),
            targets: rows.iter().map(|&i| self.targets[i]).collect(),
            scores: rows.iter().map(|&i| self.scores[i]).collect(),
            aux_targets: self
                .aux_targets
                .as_ref()
                .map(|a| rows.iter().map(|&i| a[i]).collect()),
            aux_scores: self
                .aux_scores
                .as_ref()
                .map(|a| rows.iter().map(|&i| a[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_qwk: Option<f64>,
}

/// Eval-mode predictions for every row.
pub fn predict_all(model: &ScoringModel, data: &Dataset) -> Result<Vec<Prediction>, ScorerError> {
    (0..data.len())
        .map(|i| model.infer(data.embedding(i), data.features(i)))
        .collect()
}

/// Main-task QWK on `data`.
pub fn score_qwk(
    model: &ScoringModel,
    data: &Dataset,
    scale: &ScoreScale,
) -> Result<f64, ScorerError> {
    let preds = predict_all(model, data)?;
    let hyp: Vec<i64> = preds
        .iter()
        .map(|p| denormalize_prediction(p.main, scale))
        .collect();
    qwk(&data.scores, &hyp, scale.min_score, scale.max_score)
        .map_err(|e| ScorerError::Config(alloc::format!("{e}")))
}

/// Trains `model` in place with Adam on shuffled mini-batches and returns
/// per-epoch training loss and (when `dev` is given) development QWK.
pub fn train(
    model: &mut ScoringModel,
    data: &Dataset,
    dev: Option<&Dataset>,
    scale: &ScoreScale,
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>, ScorerError> {
    config.validate()?;
    if data.is_empty() {
        return Err(config_err("empty training set"));
    }
    if data.embed_dim != model.dims.embed_dim {
        return Err(ScorerError::Shape {
            tower: "embedding",
            expected: model.dims.embed_dim,
            got: data.embed_dim,
        });
    }
    let lambda = if model.has_aux() {
        config.main_loss_weight
    } else {
        1.0
    };
    let use_aux = model.has_aux() && lambda < 1.0;
    if use_aux && data.aux_targets.is_none() {
        return Err(config_err("auxiliary head needs auxiliary labels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(config, model.param_count());
    let mut grads = Gradients::zeros(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, rows) in order.chunks(config.batch_size).enumerate() {
            grads.clear();
            let scale_b = 1.0 / rows.len() as f64;
            let mut batch_loss = 0.0;
            for &i in rows {
                let (pred, cache) = model.forward(
                    data.embedding(i),
                    data.features(i),
                    Some(&mut rng as &mut dyn RngCore),
                )?;
                let e_main = pred.main - data.targets[i];
                let mut sample = lambda * e_main * e_main;
                let mut d_aux = 0.0;
                if use_aux {
                    if let (Some(aux), Some(t)) = (pred.aux, data.aux_targets.as_ref()) {
                        let e_aux = aux - t[i];
                        sample += (1.0 - lambda) * e_aux * e_aux;
                        d_aux = 2.0 * (1.0 - lambda) * e_aux * scale_b;
                    }
                }
                batch_loss += sample;
                model.backward(&cache, 2.0 * lambda * e_main * scale_b, d_aux, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(ScorerError::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += batch_loss;
            adam.update(model, &grads);
        }
        let dev_qwk = match dev {
            Some(d) if !d.is_empty() => Some(score_qwk(model, d, scale)?),
            _ => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / data.len() as f64,
            dev_qwk,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_dims(arch: Architecture) -> ModelDims {
        ModelDims {
            grammar_width: 8,
            top_width: 8,
            ..ModelDims::new(arch, 16, 12)
        }
    }

    fn random_input(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn tower_shapes_follow_architecture() {
        let cat = ScoringModel::new(
            Architecture::Cat,
            ModelDims::new(Architecture::Cat, 768, 256),
            0,
        )
        .unwrap();
        assert_eq!(cat.top_tower[0].inputs, 1024);
        assert_eq!(cat.top_tower.len(), 2);
        assert!(cat.grammar_tower.is_empty() && cat.aux_head.is_none());

        let dual = ScoringModel::new(
            Architecture::Dual,
            ModelDims::new(Architecture::Dual, 768, 256),
            0,
        )
        .unwrap();
        let widths: Vec<usize> = dual.grammar_tower.iter().map(|l| l.outputs).collect();
        assert_eq!(widths, [128, 128, 128]);
        assert_eq!(dual.top_tower[0].inputs, 768 + 128);
        assert_eq!(dual.top_tower.len(), 3);
        assert_eq!(dual.aux_head.as_ref().unwrap().inputs, 128);

        let multi = ScoringModel::new(
            Architecture::Multi,
            ModelDims::new(Architecture::Multi, 768, 256),
            0,
        )
        .unwrap();
        assert_eq!(multi.aux_head.as_ref().unwrap().inputs, 512);
        let base = ScoringModel::new(
            Architecture::Baseline,
            ModelDims::new(Architecture::Baseline, 768, 0),
            0,
        )
        .unwrap();
        assert_eq!(base.top_tower.len(), 1);
        assert_eq!(base.top_tower[0].inputs, 768);
    }

    #[test]
    fn shape_errors_name_the_tower() {
        let m = ScoringModel::new(Architecture::Net, toy_dims(Architecture::Net), 1).unwrap();
        let err = m.infer(&[0.0; 15], &[0.0; 12]).unwrap_err();
        assert_eq!(
            err,
            ScorerError::Shape {
                tower: "embedding",
                expected: 16,
                got: 15
            }
        );
        let err = m.infer(&[0.0; 16], &[0.0; 3]).unwrap_err();
        assert!(matches!(
            err,
            ScorerError::Shape {
                tower: "grammar features",
                ..
            }
        ));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        for arch in Architecture::ALL {
            let m = ScoringModel::new(arch, toy_dims(arch), 5).unwrap();
            let (e, f) = (random_input(1, 16), random_input(2, 12));
            assert_eq!(m.infer(&e, &f).unwrap(), m.infer(&e, &f).unwrap());
        }
    }

    #[test]
    fn loss_examples() {
        // main MSE 0.1, aux MSE 0.3
        let main_pred = [1.0, 0.0];
        let main_target = [1.0 - libm::sqrt(0.2), 0.0];
        let aux_pred = [0.0, libm::sqrt(0.6)];
        let aux_target = [0.0, 0.0];
        let l = loss(
            &main_pred,
            &main_target,
            Some(&aux_pred),
            Some(&aux_target),
            0.8,
        )
        .unwrap();
        assert!((l - 0.14).abs() < 1e-12);
        assert_eq!(
            loss(&[0.3], &[0.3], Some(&[0.1]), Some(&[0.1]), 0.8).unwrap(),
            0.0
        );
        assert!(matches!(
            loss(&[0.3], &[0.3], Some(&[0.1]), None, 0.8),
            Err(ScorerError::Config(_))
        ));
        assert_eq!(TrainConfig::default().main_loss_weight, 0.8);
        assert_eq!(TrainConfig::default().learning_rate, 1e-5);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        for arch in Architecture::ALL {
            let m = ScoringModel::new(arch, toy_dims(arch), 3).unwrap();
            let (_, cache) = m
                .forward(&random_input(1, 16), &random_input(2, 12), None)
                .unwrap();
            let mut g = Gradients::zeros(&m);
            m.backward(&cache, 0.0, 0.0, &mut g);
            assert!(g.flat().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn dual_aux_gradient_stays_out_of_top_tower() {
        let m = ScoringModel::new(Architecture::Dual, toy_dims(Architecture::Dual), 3).unwrap();
        let (_, cache) = m
            .forward(&random_input(1, 16), &random_input(2, 12), None)
            .unwrap();
        let mut g = Gradients::zeros(&m);
        m.backward(&cache, 0.0, 1.0, &mut g);
        let g_len = m.grammar_tower.len();
        for l in &g.layers[g_len..g_len + m.top_tower.len() + 1] {
            assert!(l.weights.iter().chain(&l.bias).all(|&x| x == 0.0));
        }
        assert!(g.layers[..g_len]
            .iter()
            .any(|l| l.weights.iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn multi_and_net_share_trunk_outputs() {
        let dims = ModelDims {
            top_depth: 2,
            ..toy_dims(Architecture::Net)
        };
        let net = ScoringModel::new(Architecture::Net, dims.clone(), 4).unwrap();
        let mut multi = ScoringModel::new(Architecture::Multi, dims, 99).unwrap();
        multi.grammar_tower = net.grammar_tower.clone();
        multi.top_tower = net.top_tower.clone();
        multi.main_head = net.main_head.clone();
        let (e, f) = (random_input(7, 16), random_input(8, 12));
        assert_eq!(
            net.infer(&e, &f).unwrap().main,
            multi.infer(&e, &f).unwrap().main
        );
        assert!(multi.infer(&e, &f).unwrap().aux.is_some());
    }

    #[test]
    fn dropout_expectation_matches_eval_output() {
        let dims = ModelDims {
            top_width: 6,
            top_depth: 1,
            dropout: 0.2,
            ..ModelDims::new(Architecture::Baseline, 4, 0)
        };
        let m = ScoringModel::new(Architecture::Baseline, dims, 2).unwrap();
        let e = [0.5, -0.3, 0.9, 0.1];
        let eval = m.infer(&e, &[]).unwrap().main;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let (p, _) = m
                .forward(&e, &[], Some(&mut rng as &mut dyn RngCore))
                .unwrap();
            sum += p.main;
            sq += p.main * p.main;
        }
        let mean = sum / n as f64;
        let sd = libm::sqrt((sq / n as f64 - mean * mean).max(0.0));
        assert!(
            (mean - eval).abs() < 4.0 * sd / libm::sqrt(n as f64) + 1e-12,
            "{mean} vs {eval}"
        );
    }

    #[test]
    fn zeroed_model_predicts_scale_centre() {
        let mut m = ScoringModel::new(Architecture::Dual, toy_dims(Architecture::Dual), 0).unwrap();
        let zeros = vec![0.0; m.param_count()];
        m.set_flat_params(&zeros).unwrap();
        let scale = ScoreScale::new(1, 2, 12).unwrap();
        assert_eq!(
            m.infer(&random_input(1, 16), &random_input(2, 12))
                .unwrap()
                .main,
            0.0
        );
        assert_eq!(
            m.predict(&random_input(1, 16), &random_input(2, 12), &scale)
                .unwrap(),
            7
        );
        m.main_head.bias[0] = 5.0;
        assert_eq!(
            m.predict(&random_input(1, 16), &random_input(2, 12), &scale)
                .unwrap(),
            12
        );
        assert!(m.set_flat_params(&[0.0]).is_err());
    }

    #[test]
    fn baseline_ignores_features() {
        let m =
            ScoringModel::new(Architecture::Baseline, toy_dims(Architecture::Baseline), 0).unwrap();
        let e = random_input(3, 16);
        let a = m.infer(&e, &random_input(4, 12)).unwrap();
        let b = m.infer(&e, &random_input(5, 30)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_requires_aux_labels_and_valid_config() {
        let mut m = ScoringModel::new(Architecture::Dual, toy_dims(Architecture::Dual), 0).unwrap();
        let data = Dataset::new(
            16,
            12,
            vec![0.1; 32],
            vec![1.0; 24],
            vec![0.0, 0.5],
            vec![7, 9],
        )
        .unwrap();
        let scale = ScoreScale::new(1, 2, 12).unwrap();
        let err = train(&mut m, &data, None, &scale, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, ScorerError::Config(_)));
        let single = TrainConfig {
            main_loss_weight: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(&mut m, &data, None, &scale, &single).is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut m, &data, None, &scale, &bad).is_err());
    }

    #[test]
    fn non_finite_loss_reports_coordinates() {
        let mut m = ScoringModel::new(Architecture::Cat, toy_dims(Architecture::Cat), 0).unwrap();
        let data = Dataset::new(
            16,
            12,
            vec![0.1; 32],
            vec![1.0; 24],
            vec![0.0, f64::NAN],
            vec![7, 9],
        )
        .unwrap();
        let scale = ScoreScale::new(1, 2, 12).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        let err = train(&mut m, &data, None, &scale, &cfg).unwrap_err();
        assert!(matches!(err, ScorerError::NonFiniteLoss { epoch: 0, .. }));
    }
}
