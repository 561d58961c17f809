//! Soft (dense) and hard (top-k) expert routing.
//!
//! Both routers pool the input feature map to one value per channel, add
//! Gaussian noise while training, project to one logit per expert and take a
//! softmax. The hard router then keeps the `k` largest weights and rescales them
//! to sum to one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{MoeError, Tensor};
use crate::numeric::softmax;

/// Projection from pooled channels to expert logits.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    /// `num_experts x channels`, row-major.
    pub projection_weights: Tensor,
    pub projection_bias: Tensor,
    pub noise_std: f64,
}

impl RouterParams {
    pub fn new(
        projection_weights: Tensor,
        projection_bias: Tensor,
        noise_std: f64,
    ) -> Result<Self, MoeError> {
        let p = Self {
            projection_weights,
            projection_bias,
            noise_std,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(num_experts: usize, channels: usize) -> Self {
        Self {
            projection_weights: Tensor::zeros(&[num_experts, channels]),
            projection_bias: Tensor::zeros(&[num_experts]),
            noise_std: 0.0,
        }
    }

    pub fn num_experts(&self) -> usize {
        self.projection_weights.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.projection_weights.shape()[1]
    }

    fn validate(&self) -> Result<(), MoeError> {
        let w = self.projection_weights.shape();
        if w.len() != 2 || self.projection_bias.shape() != [w[0]] {
            return Err(MoeError::Shape(format!(
                "router weights {:?} and bias {:?} are inconsistent",
                w,
                self.projection_bias.shape()
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(MoeError::Config(format!(
                "noise_std {} must be >= 0",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Mixture weights for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterOutput {
    /// One weight per expert; inactive experts have weight 0.
    pub weights: Vec<f64>,
    /// Active experts in ascending index order.
    pub active: Vec<usize>,
}

impl RouterOutput {
    pub fn is_dense(&self) -> bool {
        self.active.len() == self.weights.len()
    }
}

/// Mean over the spatial dimensions of a `C x H x W` map.
pub fn global_average_pool(features: &Tensor) -> Result<Vec<f64>, MoeError> {
    let shape = features.shape();
    if shape.len() != 3 {
        return Err(MoeError::Shape(format!(
            "expected C x H x W features, got {shape:?}"
        )));
    }
    let plane = shape[1] * shape[2];
    Ok(features
        .data()
        .chunks(plane)
        .map(|c| c.iter().sum::<f64>() / plane as f64)
        .collect())
}

/// Gaussian perturbation of the pooled features, drawn only while training.
pub(crate) fn pooled_noise(channels: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; channels];
    }
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    (0..channels).map(|_| normal.sample(rng)).collect()
}

pub(crate) fn project(weights: &Tensor, bias: &Tensor, pooled: &[f64]) -> Vec<f64> {
    let c = pooled.len();
    weights
        .data()
        .chunks(c)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(pooled).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

/// Indices of the `k` largest weights; ties go to the lower index. Returned in
/// ascending index order.
pub fn top_k_indices(weights: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(k).collect();
    keep.sort_unstable();
    keep
}

/// Zeroes everything outside `keep` and rescales the survivors to sum to one.
pub fn renormalize(weights: &[f64], keep: &[usize]) -> Vec<f64> {
    let total: f64 = keep.iter().map(|&i| weights[i]).sum();
    let mut out = vec![0.0; weights.len()];
    for &i in keep {
        out[i] = weights[i] / total;
    }
    out
}

fn route_logits(
    features: &Tensor,
    params: &RouterParams,
    training: bool,
    rng_seed: u64,
) -> Result<Vec<f64>, MoeError> {
    params.validate()?;
    let mut pooled = global_average_pool(features)?;
    if pooled.len() != params.channels() {
        return Err(MoeError::Shape(format!(
            "features have {} channels, router expects {}",
            pooled.len(),
            params.channels()
        )));
    }
    if training {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for (p, n) in
            pooled
                .iter_mut()
                .zip(pooled_noise(params.channels(), params.noise_std, &mut rng))
        {
            *p += n;
        }
    }
    Ok(project(
        &params.projection_weights,
        &params.projection_bias,
        &pooled,
    ))
}

/// Dense routing over all experts.
pub fn soft_route(
    features: &Tensor,
    params: &RouterParams,
    training: bool,
    rng_seed: u64,
) -> Result<RouterOutput, MoeError> {
    let weights = softmax(&route_logits(features, params, training, rng_seed)?);
    Ok(RouterOutput {
        active: (0..weights.len()).collect(),
        weights,
    })
}

/// Top-`k` routing: soft weights restricted to the `k` largest, renormalized.
pub fn hard_route(
    features: &Tensor,
    params: &RouterParams,
    k: usize,
    training: bool,
    rng_seed: u64,
) -> Result<RouterOutput, MoeError> {
    let n = params.num_experts();
    if k == 0 || k > n {
        return Err(MoeError::TopK { k, experts: n });
    }
    let soft = soft_route(features, params, training, rng_seed)?;
    let active = top_k_indices(&soft.weights, k);
    Ok(RouterOutput {
        weights: renormalize(&soft.weights, &active),
        active,
    })
}

/// `sum_i w_i * y_i` over every expert output.
pub fn soft_combine(expert_outputs: &[Tensor], router: &RouterOutput) -> Result<Tensor, MoeError> {
    if expert_outputs.len() != router.weights.len() {
        return Err(MoeError::Shape(format!(
            "{} expert outputs for {} routing weights",
            expert_outputs.len(),
            router.weights.len()
        )));
    }
    combine(
        router,
        |i| Ok(expert_outputs[i].clone()),
        &(0..expert_outputs.len()).collect::<Vec<_>>(),
    )
}

/// Weighted sum over the active experts only; `eval` is called once per active
/// expert and never for the others.
pub fn hard_combine(
    router: &RouterOutput,
    eval: impl FnMut(usize) -> Result<Tensor, MoeError>,
) -> Result<Tensor, MoeError> {
    combine(router, eval, &router.active)
}

fn combine(
    router: &RouterOutput,
    mut eval: impl FnMut(usize) -> Result<Tensor, MoeError>,
    indices: &[usize],
) -> Result<Tensor, MoeError> {
    let mut out: Option<Tensor> = None;
    for &i in indices {
        let y = eval(i)?;
        match out.as_mut() {
            None => {
                let mut acc = Tensor::zeros(y.shape());
                acc.axpy(router.weights[i], &y);
                out = Some(acc);
            }
            Some(acc) => {
                if acc.shape() != y.shape() {
                    return Err(MoeError::Shape(format!(
                        "expert {i} produced {:?}, expected {:?}",
                        y.shape(),
                        acc.shape()
                    )));
                }
                acc.axpy(router.weights[i], &y);
            }
        }
    }
    out.ok_or_else(|| MoeError::Shape("no active experts".into()))
}
