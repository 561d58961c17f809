use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::autodiff::{Gradients, NodeId, Tape};
use super::router::{pooled_noise, top_k_indices, RouterParams};
use super::{MoeError, Tensor};
use crate::seed::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingKind {
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub encoder_stages: usize,
    pub decoder_stages: usize,
    /// Hidden width of each expert; the length is the number of experts per stage.
    pub expert_widths: Vec<usize>,
    pub top_k: usize,
    pub noise_std: f64,
    /// Standard deviation of the router projection at initialization.
    pub router_init_std: f64,
    /// Multiplier on the output convolution's initial weights.
    pub output_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            encoder_stages: 2,
            decoder_stages: 2,
            expert_widths: vec![8, 16, 24, 32],
            top_k: 2,
            noise_std: 0.1,
            router_init_std: 1.0,
            output_init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn num_experts(&self) -> usize {
        self.expert_widths.len()
    }

    pub fn num_stages(&self) -> usize {
        self.encoder_stages + self.decoder_stages
    }

    pub fn routing(&self, stage: usize) -> RoutingKind {
        if stage < self.encoder_stages {
            RoutingKind::Soft
        } else {
            RoutingKind::Hard
        }
    }

    pub fn validate(&self) -> Result<(), MoeError> {
        let fail = |m: String| Err(MoeError::Config(m));
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.num_stages() == 0 {
            return fail("model needs at least one stage".into());
        }
        if self.expert_widths.is_empty() || self.expert_widths.contains(&0) {
            return fail(format!(
                "expert widths must be positive, got {:?}",
                self.expert_widths
            ));
        }
        if self.decoder_stages > 0 && (self.top_k == 0 || self.top_k > self.num_experts()) {
            return Err(MoeError::TopK {
                k: self.top_k,
                experts: self.num_experts(),
            });
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return fail(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        for (name, v) in [
            ("router_init_std", self.router_init_std),
            ("output_init_scale", self.output_init_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Named parameter tensors; a parameter's id is its position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn total_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Expert evaluation counts, indexed `[stage][expert]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ForwardStats {
    pub expert_calls: Vec<Vec<u64>>,
}

impl ForwardStats {
    pub fn new(stages: usize, experts: usize) -> Self {
        Self {
            expert_calls: vec![vec![0; experts]; stages],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ExpertIds {
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
}

#[derive(Debug, Clone)]
struct StageIds {
    router_w: usize,
    router_b: usize,
    experts: Vec<ExpertIds>,
}

/// Stacked MoE stages mapping a `C x H x W` image to a same-shaped restoration.
///
/// Each expert is a residual block `x + conv1x1(tanh(conv3x3(x)))` whose hidden
/// width is taken from [`ModelConfig::expert_widths`]. The first
/// `encoder_stages` stages mix all experts; the remaining stages keep the
/// `top_k` heaviest experts per sample.
#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ModelConfig,
    params: ParamStore,
    stages: Vec<StageIds>,
}

impl ToyModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, MoeError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |shape: &[usize], std: f64| -> Tensor {
            let mut t = Tensor::zeros(shape);
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("positive std");
                for v in t.data_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
            t
        };
        let c = config.channels;
        let n = config.num_experts();
        let mut params = ParamStore::new();
        let mut stages = Vec::with_capacity(config.num_stages());
        for s in 0..config.num_stages() {
            let prefix = match config.routing(s) {
                RoutingKind::Soft => format!("enc{s}"),
                RoutingKind::Hard => format!("dec{}", s - config.encoder_stages),
            };
            let router_w = params.push(
                format!("{prefix}.router.weight"),
                gauss(&[n, c], config.router_init_std),
            );
            let router_b = params.push(format!("{prefix}.router.bias"), Tensor::zeros(&[n]));
            let mut experts = Vec::with_capacity(n);
            for (e, &w) in config.expert_widths.iter().enumerate() {
                let std1 = (1.0 / (9 * c) as f64).sqrt();
                let std2 = config.output_init_scale * (1.0 / w as f64).sqrt();
                experts.push(ExpertIds {
                    conv1_w: params.push(
                        format!("{prefix}.expert{e}.conv1.weight"),
                        gauss(&[w, c, 3, 3], std1),
                    ),
                    conv1_b: params.push(
                        format!("{prefix}.expert{e}.conv1.bias"),
                        Tensor::zeros(&[w]),
                    ),
                    conv2_w: params.push(
                        format!("{prefix}.expert{e}.conv2.weight"),
                        gauss(&[c, w, 1, 1], std2),
                    ),
                    conv2_b: params.push(
                        format!("{prefix}.expert{e}.conv2.bias"),
                        Tensor::zeros(&[c]),
                    ),
                });
            }
            stages.push(StageIds {
                router_w,
                router_b,
                experts,
            });
        }
        Ok(Self {
            config,
            params,
            stages,
        })
    }

    /// Experts whose output convolution is zero, so each one is the identity map.
    pub fn identity(config: ModelConfig, seed: u64) -> Result<Self, MoeError> {
        let mut model = Self::new(config, seed)?;
        for stage in model.stages.clone() {
            for e in stage.experts {
                model.params.get_mut(e.conv2_w).data_mut().fill(0.0);
                model.params.get_mut(e.conv2_b).data_mut().fill(0.0);
            }
        }
        Ok(model)
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, MoeError> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(MoeError::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (id, (name, value)) in params.iter().enumerate() {
            let expected = model.params.get(id);
            if name != model.params.name(id) || value.shape() != expected.shape() {
                return Err(MoeError::Checkpoint(format!(
                    "parameter {id}: expected {} {:?}, found {name} {:?}",
                    model.params.name(id),
                    expected.shape(),
                    value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Router of stage `stage` as standalone parameters.
    pub fn router(&self, stage: usize) -> RouterParams {
        let ids = &self.stages[stage];
        RouterParams {
            projection_weights: self.params.get(ids.router_w).clone(),
            projection_bias: self.params.get(ids.router_b).clone(),
            noise_std: self.config.noise_std,
        }
    }

    /// Seed of the routing noise for one sample of a batch at one stage.
    pub fn stage_seed(rng_seed: u64, sample: usize, stage: usize) -> u64 {
        mix(mix(rng_seed, sample as u64), stage as u64)
    }

    /// Output of a single expert, outside of any tape.
    pub fn expert_forward(
        &self,
        stage: usize,
        expert: usize,
        x: &Tensor,
    ) -> Result<Tensor, MoeError> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let out = self.record_expert(&mut tape, stage, expert, input)?;
        Ok(tape.value(out)?.clone())
    }

    fn record_expert(
        &self,
        tape: &mut Tape,
        stage: usize,
        expert: usize,
        x: NodeId,
    ) -> Result<NodeId, MoeError> {
        let ids = self.stages[stage].experts[expert];
        let p = |tape: &mut Tape, id: usize| tape.param(id, self.params.get(id));
        let (w1, b1, w2, b2) = (
            p(tape, ids.conv1_w),
            p(tape, ids.conv1_b),
            p(tape, ids.conv2_w),
            p(tape, ids.conv2_b),
        );
        let h = tape.conv2d(x, w1, b1)?;
        let h = tape.tanh(h)?;
        let r = tape.conv2d(h, w2, b2)?;
        tape.add(x, r)
    }

    /// Records the forward pass of one `C x H x W` sample on `tape`.
    pub fn record(
        &self,
        tape: &mut Tape,
        input: NodeId,
        training: bool,
        sample_seed: (u64, usize),
        mut stats: Option<&mut ForwardStats>,
    ) -> Result<NodeId, MoeError> {
        let shape = tape.value(input)?.shape().to_vec();
        if shape.len() != 3 || shape[0] != self.config.channels {
            return Err(MoeError::Shape(format!(
                "expected {} x H x W input, got {shape:?}",
                self.config.channels
            )));
        }
        let (rng_seed, sample) = sample_seed;
        let mut h = input;
        for (s, ids) in self.stages.iter().enumerate() {
            let mut pooled = tape.global_avg_pool(h)?;
            if training {
                let mut rng = ChaCha8Rng::seed_from_u64(Self::stage_seed(rng_seed, sample, s));
                let noise = pooled_noise(self.config.channels, self.config.noise_std, &mut rng);
                pooled = tape.add_constant(pooled, &noise)?;
            }
            let rw = tape.param(ids.router_w, self.params.get(ids.router_w));
            let rb = tape.param(ids.router_b, self.params.get(ids.router_b));
            let logits = tape.linear(pooled, rw, rb)?;
            let probs = tape.softmax(logits)?;
            let (weights, active) = match self.config.routing(s) {
                RoutingKind::Soft => (probs, (0..self.config.num_experts()).collect::<Vec<_>>()),
                RoutingKind::Hard => {
                    let active = top_k_indices(tape.value(probs)?.data(), self.config.top_k);
                    (tape.top_k(probs, self.config.top_k)?, active)
                }
            };
            let mut outputs = Vec::with_capacity(active.len());
            for &e in &active {
                if let Some(st) = stats.as_deref_mut() {
                    st.expert_calls[s][e] += 1;
                }
                outputs.push((e, self.record_expert(tape, s, e, h)?));
            }
            h = tape.mix(weights, &outputs)?;
        }
        Ok(h)
    }

    /// Restores a `B x C x H x W` batch.
    pub fn forward(
        &self,
        batch: &Tensor,
        training: bool,
        rng_seed: u64,
    ) -> Result<Tensor, MoeError> {
        self.forward_inner(batch, training, rng_seed, None)
    }

    /// [`ToyModel::forward`] that also counts expert evaluations.
    pub fn forward_with_stats(
        &self,
        batch: &Tensor,
        training: bool,
        rng_seed: u64,
    ) -> Result<(Tensor, ForwardStats), MoeError> {
        let mut stats = ForwardStats::new(self.config.num_stages(), self.config.num_experts());
        let out = self.forward_inner(batch, training, rng_seed, Some(&mut stats))?;
        Ok((out, stats))
    }

    fn forward_inner(
        &self,
        batch: &Tensor,
        training: bool,
        rng_seed: u64,
        mut stats: Option<&mut ForwardStats>,
    ) -> Result<Tensor, MoeError> {
        if batch.shape().len() != 4 {
            return Err(MoeError::Shape(format!(
                "expected B x C x H x W batch, got {:?}",
                batch.shape()
            )));
        }
        let mut outputs = Vec::with_capacity(batch.shape()[0]);
        for b in 0..batch.shape()[0] {
            let mut tape = Tape::new();
            let x = tape.constant(batch.slice_outer(b));
            let y = self.record(&mut tape, x, training, (rng_seed, b), stats.as_deref_mut())?;
            outputs.push(tape.value(y)?.clone());
        }
        Tensor::stack(&outputs)
    }

    /// Mean L1 loss of one sample against `target` and its parameter gradients.
    pub fn loss_and_gradients(
        &self,
        input: &Tensor,
        target: &Tensor,
        training: bool,
        rng_seed: u64,
    ) -> Result<(f64, Gradients), MoeError> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.record(&mut tape, x, training, (rng_seed, 0), None)?;
        let loss = tape.l1_loss(y, target)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss)?.item(), grads))
    }

    /// Plain gradient descent: `p -= lr * g` for every parameter with a gradient.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (id, g) in grads.iter() {
            self.params.get_mut(id).axpy(-lr, g);
        }
    }
}
