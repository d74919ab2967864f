//! Small feed-forward networks with hand-derived gradients.
//!
//! Everything here is plain `f64` arithmetic over flat parameter vectors:
//! a tanh MLP, an adaptive-moment optimizer, a masked softmax classification
//! head, and a Gaussian-mixture density head. Keeping the parameters flat
//! makes optimizer state trivial and lets tests compare analytic gradients
//! against finite differences coordinate by coordinate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::logsumexp;
use crate::rng::{self, tags};
use rand_chacha::ChaCha8Rng;

/// Floor on mixture standard deviations.
pub const SIGMA_MIN: f64 = 1e-3;

const LN_2PI: f64 = 1.8378770664093453;

/// Fully connected network: tanh hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Reusable per-layer activation buffers for one forward/backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Uniform initialization scaled by fan-in/fan-out; biases start at zero.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut params = Vec::with_capacity(Mlp::param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng::uniform(rng, -limit, limit));
            }
            for _ in 0..fan_out {
                params.push(0.0);
            }
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Run the network, keeping post-activation values for `backward`.
    pub fn forward<'c>(&self, input: &[f64], cache: &'c mut ForwardCache) -> &'c [f64] {
        assert_eq!(input.len(), self.sizes[0], "input dimension mismatch");
        let layers = self.sizes.len() - 1;
        cache.acts.resize(layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_out * n_in];
            let b = &self.params[offset + n_out * n_in..offset + n_out * n_in + n_out];
            offset += n_out * n_in + n_out;
            let (lower, upper) = cache.acts.split_at_mut(l + 1);
            let a = &lower[l];
            let out = &mut upper[0];
            out.resize(n_out, 0.0);
            let last = l == layers - 1;
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut z = b[j];
                for (wi, ai) in row.iter().zip(a.iter()) {
                    z += wi * ai;
                }
                out[j] = if last { z } else { z.tanh() };
            }
        }
        cache.acts.last().unwrap()
    }

    /// Accumulate parameter gradients for one sample into `grad`, given the
    /// loss gradient with respect to the linear output.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(d_output.len(), self.output_dim());
        // Offsets of each layer's block in the flat vector.
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l + 1] * self.sizes[l] + self.sizes[l + 1];
        }
        let mut delta = d_output.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = offsets[l];
            let a = &cache.acts[l];
            for j in 0..n_out {
                let dj = delta[j];
                let row = &mut grad[base + j * n_in..base + (j + 1) * n_in];
                for (g, ai) in row.iter_mut().zip(a.iter()) {
                    *g += dj * ai;
                }
            }
            let b_base = base + n_out * n_in;
            for j in 0..n_out {
                grad[b_base + j] += delta[j];
            }
            if l > 0 {
                let w = &self.params[base..base + n_out * n_in];
                let mut d_prev = vec![0.0; n_in];
                for j in 0..n_out {
                    let dj = delta[j];
                    let row = &w[j * n_in..(j + 1) * n_in];
                    for (dp, wi) in d_prev.iter_mut().zip(row.iter()) {
                        *dp += dj * wi;
                    }
                }
                // Through the tanh of the previous layer.
                for (dp, ai) in d_prev.iter_mut().zip(a.iter()) {
                    *dp *= 1.0 - ai * ai;
                }
                delta = d_prev;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Classification head
// ---------------------------------------------------------------------------

/// Log-softmax over the unmasked entries; masked entries get -inf.
pub fn log_softmax_masked(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    assert_eq!(logits.len(), mask.len());
    let kept: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { z } else { f64::NEG_INFINITY })
        .collect();
    let lse = logsumexp(&kept);
    kept.iter().map(|z| z - lse).collect()
}

/// Weighted cross-entropy on masked logits. Returns the loss and writes the
/// gradient with respect to the logits (zero on masked entries).
pub fn cross_entropy_grad(
    logits: &[f64],
    mask: &[bool],
    label: usize,
    weight: f64,
    d_logits: &mut [f64],
) -> f64 {
    assert!(mask[label], "label class is masked");
    let logp = log_softmax_masked(logits, mask);
    for (j, d) in d_logits.iter_mut().enumerate() {
        *d = if mask[j] {
            let p = logp[j].exp();
            weight * (p - if j == label { 1.0 } else { 0.0 })
        } else {
            0.0
        };
    }
    -weight * logp[label]
}

// ---------------------------------------------------------------------------
// Gaussian mixture head
// ---------------------------------------------------------------------------

/// Shape of a mixture head over a `dim`-dimensional target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GmmShape {
    pub components: usize,
    pub dim: usize,
}

impl GmmShape {
    /// Network output width: component logits, means, raw deviations.
    pub fn out_dim(&self) -> usize {
        self.components * (1 + 2 * self.dim)
    }
}

fn gmm_slices(out: &[f64], shape: GmmShape) -> (&[f64], &[f64], &[f64]) {
    let k = shape.components;
    let kd = k * shape.dim;
    assert_eq!(out.len(), shape.out_dim());
    (&out[..k], &out[k..k + kd], &out[k + kd..])
}

/// Log-likelihood of `target` under the mixture encoded by `out`.
pub fn gmm_log_likelihood(out: &[f64], shape: GmmShape, target: &[f64]) -> f64 {
    assert_eq!(target.len(), shape.dim);
    let (logits, means, raws) = gmm_slices(out, shape);
    let log_w = log_softmax_masked(logits, &vec![true; shape.components]);
    let mut terms = Vec::with_capacity(shape.components);
    for k in 0..shape.components {
        let mut log_n = 0.0;
        for d in 0..shape.dim {
            let mu = means[k * shape.dim + d];
            let sigma = SIGMA_MIN + raws[k * shape.dim + d].exp();
            let z = (target[d] - mu) / sigma;
            log_n += -0.5 * z * z - sigma.ln() - 0.5 * LN_2PI;
        }
        terms.push(log_w[k] + log_n);
    }
    logsumexp(&terms)
}

/// Weighted negative log-likelihood and its gradient with respect to the
/// head's raw outputs.
pub fn gmm_nll_grad(
    out: &[f64],
    shape: GmmShape,
    target: &[f64],
    weight: f64,
    d_out: &mut [f64],
) -> f64 {
    assert_eq!(target.len(), shape.dim);
    assert_eq!(d_out.len(), shape.out_dim());
    let (logits, means, raws) = gmm_slices(out, shape);
    let k_n = shape.components;
    let log_w = log_softmax_masked(logits, &vec![true; k_n]);
    let mut log_joint = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let mut log_n = 0.0;
        for d in 0..shape.dim {
            let mu = means[k * shape.dim + d];
            let sigma = SIGMA_MIN + raws[k * shape.dim + d].exp();
            let z = (target[d] - mu) / sigma;
            log_n += -0.5 * z * z - sigma.ln() - 0.5 * LN_2PI;
        }
        log_joint.push(log_w[k] + log_n);
    }
    let ll = logsumexp(&log_joint);
    // Responsibilities and mixture weights.
    let kd = k_n * shape.dim;
    for k in 0..k_n {
        let r = (log_joint[k] - ll).exp();
        let w_k = log_w[k].exp();
        d_out[k] = weight * (w_k - r);
        for d in 0..shape.dim {
            let idx = k * shape.dim + d;
            let mu = means[idx];
            let raw = raws[idx];
            let sigma = SIGMA_MIN + raw.exp();
            let diff = target[d] - mu;
            d_out[k_n + idx] = -weight * r * diff / (sigma * sigma);
            let d_sigma = diff * diff / (sigma * sigma * sigma) - 1.0 / sigma;
            d_out[k_n + kd + idx] = -weight * r * d_sigma * raw.exp();
        }
    }
    -weight * ll
}

/// Deterministic point estimate: the mean of the component maximizing
/// weight times density at its own mean. Returns the point and its mixture
/// log-likelihood.
pub fn gmm_mode(out: &[f64], shape: GmmShape) -> (Vec<f64>, f64) {
    let (logits, means, raws) = gmm_slices(out, shape);
    let log_w = log_softmax_masked(logits, &vec![true; shape.components]);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..shape.components {
        let mut log_peak = log_w[k];
        for d in 0..shape.dim {
            let sigma = SIGMA_MIN + raws[k * shape.dim + d].exp();
            log_peak -= sigma.ln();
        }
        if log_peak > best_score {
            best_score = log_peak;
            best = k;
        }
    }
    let mode = means[best * shape.dim..(best + 1) * shape.dim].to_vec();
    let ll = gmm_log_likelihood(out, shape, &mode);
    (mode, ll)
}

/// Draw one sample from the mixture.
pub fn gmm_sample(out: &[f64], shape: GmmShape, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (logits, means, raws) = gmm_slices(out, shape);
    let log_w = log_softmax_masked(logits, &vec![true; shape.components]);
    let u = rng::unit_f64(rng);
    let mut acc = 0.0;
    let mut k = shape.components - 1;
    for (i, lw) in log_w.iter().enumerate() {
        acc += lw.exp();
        if u < acc {
            k = i;
            break;
        }
    }
    (0..shape.dim)
        .map(|d| {
            let mu = means[k * shape.dim + d];
            let sigma = SIGMA_MIN + raws[k * shape.dim + d].exp();
            mu + sigma * rng::standard_normal(rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

/// Adaptive-moment gradient descent state.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Mini-batch training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Epochs without improvement before stopping early.
    pub patience: usize,
}

impl Default for FitConfig {
    fn default() -> FitConfig {
        FitConfig {
            epochs: 60,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            patience: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.epochs >= 1
            && self.batch_size >= 1
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.patience >= 1;
        if ok {
            Ok(())
        } else {
            Err(TrainError::BadConfig)
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration has a nonpositive field")]
    BadConfig,
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
}

/// Mini-batch first-order training of one network.
///
/// `example` computes the loss of sample `idx` and accumulates the parameter
/// gradient; `fit` owns shuffling, batching, the optimizer, early stopping,
/// and divergence detection. Returns the mean loss per epoch. Deterministic
/// for a fixed config and sample set.
pub fn fit<E>(
    mlp: &mut Mlp,
    n_samples: usize,
    cfg: &FitConfig,
    mut example: E,
) -> Result<Vec<f64>, TrainError>
where
    E: FnMut(&Mlp, usize, &mut ForwardCache, &mut [f64]) -> f64,
{
    cfg.validate()?;
    assert!(n_samples > 0, "no training samples");
    let mut adam = Adam::new(
        mlp.params.len(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.adam_eps,
    );
    let mut cache = ForwardCache::default();
    let mut grad = vec![0.0; mlp.params.len()];
    let mut indices: Vec<usize> = (0..n_samples).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::derive_rng(cfg.seed, &[tags::TRAIN, epoch as u64]);
        rng::shuffle(&mut shuffle_rng, &mut indices);
        let mut epoch_loss = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &idx in batch {
                batch_loss += example(mlp, idx, &mut cache, &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut mlp.params, &grad);
            epoch_loss += batch_loss;
        }
        epoch_loss /= n_samples as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        curve.push(epoch_loss);
        if epoch_loss < best - 1e-12 {
            best = epoch_loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(curve)
}

/// Fit a classifier network with weighted masked cross-entropy.
pub fn fit_classifier(
    net: &mut Mlp,
    mask: &[bool],
    examples: &[(Vec<f64>, usize, f64)],
    cfg: &FitConfig,
) -> Result<Vec<f64>, TrainError> {
    fit(net, examples.len(), cfg, |m, idx, cache, grad| {
        let (input, label, weight) = &examples[idx];
        let out = m.forward(input, cache).to_vec();
        let mut d_out = vec![0.0; out.len()];
        let loss = cross_entropy_grad(&out, mask, *label, *weight, &mut d_out);
        m.backward(cache, &d_out, grad);
        loss
    })
}

/// Fit a mixture-density network with weighted negative log-likelihood.
pub fn fit_mixture<T: AsRef<[f64]>>(
    net: &mut Mlp,
    shape: GmmShape,
    examples: &[(Vec<f64>, T, f64)],
    cfg: &FitConfig,
) -> Result<Vec<f64>, TrainError> {
    fit(net, examples.len(), cfg, |m, idx, cache, grad| {
        let (input, target, weight) = &examples[idx];
        let out = m.forward(input, cache).to_vec();
        let mut d_out = vec![0.0; out.len()];
        let loss = gmm_nll_grad(&out, shape, target.as_ref(), *weight, &mut d_out);
        m.backward(cache, &d_out, grad);
        loss
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn fd_grad<F: FnMut(&[f64]) -> f64>(params: &[f64], mut f: F, h: f64) -> Vec<f64> {
        let mut p = params.to_vec();
        (0..p.len())
            .map(|i| {
                let orig = p[i];
                p[i] = orig + h;
                let hi = f(&p);
                p[i] = orig - h;
                let lo = f(&p);
                p[i] = orig;
                (hi - lo) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|x| x * x).sum::<f64>().sqrt())
            .max(1e-12);
        num / den
    }

    #[test]
    fn forward_matches_manual_single_layer() {
        // One 2->1 linear layer: y = w0 x0 + w1 x1 + b.
        let mlp = Mlp {
            sizes: vec![2, 1],
            params: vec![0.5, -1.5, 0.25],
        };
        let mut cache = ForwardCache::default();
        let out = mlp.forward(&[2.0, 1.0], &mut cache);
        assert!((out[0] - (0.5 * 2.0 - 1.5 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let mut rng = derive_rng(1, &[tags::NET_INIT, 0]);
        let mlp = Mlp::new(&[3, 6, 5, 4], &mut rng);
        let input = [0.3, -0.8, 1.2];
        let mask = [true, true, false, true];
        let label = 1;
        let mut cache = ForwardCache::default();
        let mut grad = vec![0.0; mlp.params.len()];
        let out = mlp.forward(&input, &mut cache).to_vec();
        let mut d_out = vec![0.0; out.len()];
        cross_entropy_grad(&out, &mask, label, 0.7, &mut d_out);
        mlp.backward(&cache, &d_out, &mut grad);
        let shadow = mlp.clone();
        let fd = fd_grad(
            &mlp.params,
            |p| {
                let probe = Mlp {
                    sizes: shadow.sizes.clone(),
                    params: p.to_vec(),
                };
                let mut c = ForwardCache::default();
                let o = probe.forward(&input, &mut c).to_vec();
                let mut scratch = vec![0.0; o.len()];
                cross_entropy_grad(&o, &mask, label, 0.7, &mut scratch)
            },
            1e-5,
        );
        assert!(rel_err(&grad, &fd) < 1e-6, "rel err {}", rel_err(&grad, &fd));
    }

    #[test]
    fn mixture_gradient_matches_finite_differences() {
        let shape = GmmShape {
            components: 3,
            dim: 2,
        };
        let mut rng = derive_rng(2, &[tags::NET_INIT, 1]);
        let mlp = Mlp::new(&[4, 5, shape.out_dim()], &mut rng);
        let input = [0.1, 0.2, -0.4, 0.9];
        let target = [0.3, -0.2];
        let mut cache = ForwardCache::default();
        let mut grad = vec![0.0; mlp.params.len()];
        let out = mlp.forward(&input, &mut cache).to_vec();
        let mut d_out = vec![0.0; out.len()];
        gmm_nll_grad(&out, shape, &target, 1.3, &mut d_out);
        mlp.backward(&cache, &d_out, &mut grad);
        let shadow = mlp.clone();
        let fd = fd_grad(
            &mlp.params,
            |p| {
                let probe = Mlp {
                    sizes: shadow.sizes.clone(),
                    params: p.to_vec(),
                };
                let mut c = ForwardCache::default();
                let o = probe.forward(&input, &mut c).to_vec();
                let mut scratch = vec![0.0; o.len()];
                gmm_nll_grad(&o, shape, &target, 1.3, &mut scratch)
            },
            1e-5,
        );
        assert!(rel_err(&grad, &fd) < 1e-6, "rel err {}", rel_err(&grad, &fd));
    }

    #[test]
    fn masked_classes_get_no_probability_and_no_gradient() {
        let logits = [2.0, 5.0, 1.0];
        let mask = [true, false, true];
        let logp = log_softmax_masked(&logits, &mask);
        assert_eq!(logp[1], f64::NEG_INFINITY);
        let total: f64 = logp.iter().filter(|v| v.is_finite()).map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut d = vec![9.0; 3];
        cross_entropy_grad(&logits, &mask, 0, 1.0, &mut d);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn mixture_weights_form_a_simplex() {
        let shape = GmmShape {
            components: 5,
            dim: 3,
        };
        let mut rng = derive_rng(3, &[tags::NET_INIT, 2]);
        let mlp = Mlp::new(&[6, 8, shape.out_dim()], &mut rng);
        let mut cache = ForwardCache::default();
        for trial in 0..20 {
            let input: Vec<f64> = (0..6)
                .map(|i| ((trial * 7 + i) as f64 * 0.13).sin())
                .collect();
            let out = mlp.forward(&input, &mut cache);
            let log_w = log_softmax_masked(&out[..5], &[true; 5]);
            let total: f64 = log_w.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_component_mode_is_its_mean() {
        let shape = GmmShape {
            components: 1,
            dim: 2,
        };
        // logit, means, raw sigmas.
        let out = vec![0.7, 0.25, -0.5, -2.0, -3.0];
        let (mode, ll) = gmm_mode(&out, shape);
        assert_eq!(mode, vec![0.25, -0.5]);
        assert!((ll - gmm_log_likelihood(&out, shape, &mode)).abs() < 1e-12);
    }

    #[test]
    fn mode_prefers_the_tighter_heavier_component() {
        let shape = GmmShape {
            components: 2,
            dim: 1,
        };
        // Equal weights; component 1 has a much smaller deviation.
        let out = vec![0.0, 0.0, -1.0, 1.0, 1.0, -4.0];
        let (mode, _) = gmm_mode(&out, shape);
        assert_eq!(mode, vec![1.0]);
    }

    #[test]
    fn sampling_is_deterministic_and_in_distribution() {
        let shape = GmmShape {
            components: 2,
            dim: 1,
        };
        // Two well-separated narrow components at -1 and 1.
        let out = vec![0.0, 0.0, -1.0, 1.0, -4.0, -4.0];
        let mut a = derive_rng(5, &[tags::SAMPLE, 3]);
        let mut b = derive_rng(5, &[tags::SAMPLE, 3]);
        let xa: Vec<Vec<f64>> = (0..100).map(|_| gmm_sample(&out, shape, &mut a)).collect();
        let xb: Vec<Vec<f64>> = (0..100).map(|_| gmm_sample(&out, shape, &mut b)).collect();
        assert_eq!(xa, xb);
        let near_either = xa
            .iter()
            .filter(|v| (v[0] + 1.0).abs() < 0.3 || (v[0] - 1.0).abs() < 0.3)
            .count();
        assert!(near_either >= 95, "{near_either}");
        let near_minus = xa.iter().filter(|v| (v[0] + 1.0).abs() < 0.3).count();
        assert!(near_minus > 20 && near_minus < 80, "{near_minus}");
    }

    #[test]
    fn fit_separates_a_simple_two_class_problem() {
        // Class = sign of the first input coordinate.
        let mut data_rng = derive_rng(8, &[tags::SAMPLE, 4]);
        let samples: Vec<(Vec<f64>, usize)> = (0..400)
            .map(|_| {
                let x = rng::uniform(&mut data_rng, -1.0, 1.0);
                let y = rng::uniform(&mut data_rng, -1.0, 1.0);
                (vec![x, y], if x > 0.0 { 1 } else { 0 })
            })
            .collect();
        let mut net_rng = derive_rng(8, &[tags::NET_INIT, 5]);
        let mut mlp = Mlp::new(&[2, 8, 2], &mut net_rng);
        let cfg = FitConfig {
            epochs: 80,
            batch_size: 32,
            seed: 8,
            ..FitConfig::default()
        };
        let mask = [true, true];
        let curve = fit(&mut mlp, samples.len(), &cfg, |m, idx, cache, grad| {
            let (x, label) = &samples[idx];
            let out = m.forward(x, cache).to_vec();
            let mut d_out = vec![0.0; out.len()];
            let loss = cross_entropy_grad(&out, &mask, *label, 1.0, &mut d_out);
            m.backward(cache, &d_out, grad);
            loss
        })
        .unwrap();
        assert!(curve.last().unwrap() < &0.2, "final loss {:?}", curve.last());
        let mut cache = ForwardCache::default();
        let correct = samples
            .iter()
            .filter(|(x, label)| {
                let out = mlp.forward(x, &mut cache);
                let pred = if out[1] > out[0] { 1 } else { 0 };
                pred == *label
            })
            .count();
        assert!(correct as f64 / samples.len() as f64 >= 0.99);
    }

    #[test]
    fn fit_is_deterministic_under_seed() {
        let samples: Vec<(Vec<f64>, usize)> = (0..64)
            .map(|i| (vec![(i as f64 * 0.37).sin()], i % 2))
            .collect();
        let run = || {
            let mut net_rng = derive_rng(4, &[tags::NET_INIT, 6]);
            let mut mlp = Mlp::new(&[1, 4, 2], &mut net_rng);
            let cfg = FitConfig {
                epochs: 10,
                batch_size: 16,
                seed: 4,
                ..FitConfig::default()
            };
            fit(&mut mlp, samples.len(), &cfg, |m, idx, cache, grad| {
                let (x, label) = &samples[idx];
                let out = m.forward(x, cache).to_vec();
                let mut d_out = vec![0.0; out.len()];
                let loss = cross_entropy_grad(&out, &[true, true], *label, 1.0, &mut d_out);
                m.backward(cache, &d_out, grad);
                loss
            })
            .map(|_| mlp.params)
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_is_reported() {
        let samples = [1.0f64];
        let mut net_rng = derive_rng(4, &[tags::NET_INIT, 7]);
        let mut mlp = Mlp::new(&[1, 2, 1], &mut net_rng);
        let cfg = FitConfig {
            epochs: 3,
            batch_size: 1,
            seed: 0,
            ..FitConfig::default()
        };
        let res = fit(&mut mlp, samples.len(), &cfg, |_, _, _, _| f64::NAN);
        assert!(matches!(res, Err(TrainError::Diverged { epoch: 0 })));
    }

    #[test]
    fn bad_fit_config_is_rejected() {
        let cfg = FitConfig {
            epochs: 0,
            ..FitConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
