//! Central-difference verification of the hand-written backward passes.
//!
//! Analytic gradients come from the `f32` model. Numerical gradients are
//! computed on an `f64` copy: a perturbed conv parameter only changes its own
//! layer's pre-activation by `±eps · patch` (or `±eps` for a bias), so the
//! pass restarts from that layer using cached activations.
//!
//! ReLU and max-pooling are piecewise linear. When a perturbation of `±eps`
//! flips an argmax or ReLU decision, the plain difference straddles a kink.
//! Such parameters are re-measured with the base point's pooling choices and
//! ReLU masks held fixed: that function agrees with the network on an open
//! neighbourhood of the base point, so its derivative is the true one.

use rand::seq::index;
use rand_distr::{Distribution, Uniform};

use super::extractor::{global_average, BlockCache, ExtractorCache};
use super::layers::relu_maxpool;
use super::{
    cross_entropy_loss, merge_features, Extractor, Gradients, Linear, Merge, Model, Result, Tensor, FEATURE_DIM,
};
use crate::rng::{rng_from_seed, Rng};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Parameters checked per tensor (all of them when the tensor is smaller).
    pub per_tensor: usize,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// Seed for choosing which parameters to check.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-3, per_tensor: 200, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Parameters measured with frozen activation patterns.
    pub frozen: usize,
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, floor)` over the checked entries.
    pub rel_error: f64,
    /// Largest entry-wise [`relative_error`]; informative only, since tiny
    /// entries carry single-precision rounding of much larger terms.
    pub max_elementwise: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    /// Largest per-tensor relative error.
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn max_elementwise(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_elementwise).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }

    pub fn frozen(&self) -> usize {
        self.tensors.iter().map(|t| t.frozen).sum()
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Analytic gradients of the mean cross-entropy for a batch.
pub fn analytic_gradients(
    model: &Model<f32>,
    x_orig: &Tensor<f32>,
    x_aug: Option<&Tensor<f32>>,
    labels: &[usize],
) -> Result<Gradients<f32>> {
    let (logits, cache) = model.forward(x_orig, x_aug)?;
    let (_, dlogits) = cross_entropy_loss(&logits, labels)?;
    Ok(model.backward(&cache, &dlogits))
}

pub fn grad_check(
    model: &Model<f32>,
    x_orig: &Tensor<f32>,
    x_aug: Option<&Tensor<f32>>,
    labels: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let grads = analytic_gradients(model, x_orig, x_aug, labels)?;
    grad_check_with(model, &grads, x_orig, x_aug, labels, cfg)
}

/// Compares the supplied gradients (normally [`analytic_gradients`]) with
/// central differences.
pub fn grad_check_with(
    model: &Model<f32>,
    grads: &Gradients<f32>,
    x_orig: &Tensor<f32>,
    x_aug: Option<&Tensor<f32>>,
    labels: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let probe = Probe::new(model, x_orig, x_aug, labels)?;
    let mut rng = rng_from_seed(cfg.seed);
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let mut tensors = Vec::with_capacity(names.len());
    for ((name, g), target) in grads.tensors().into_iter().zip(targets(model)) {
        debug_assert!(names.contains(&name));
        let len = g.len();
        let order = index::sample(&mut rng, len, cfg.per_tensor.min(len));
        let mut check =
            TensorCheck { name, checked: 0, frozen: 0, rel_error: 0.0, max_elementwise: 0.0, worst_index: 0 };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in order.iter() {
            let (mut lp, kp) = probe.loss(target, i, cfg.eps, false);
            let (mut lm, km) = probe.loss(target, i, -cfg.eps, false);
            if kp || km {
                check.frozen += 1;
                lp = probe.loss(target, i, cfg.eps, true).0;
                lm = probe.loss(target, i, -cfg.eps, true).0;
            }
            let numeric = (lp - lm) / (2.0 * cfg.eps);
            let analytic = f64::from(g.data()[i]);
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            let rel = relative_error(analytic, numeric, cfg.floor);
            if rel > check.max_elementwise {
                check.max_elementwise = rel;
                check.worst_index = i;
            }
            check.checked += 1;
        }
        if diff2 > 0.0 {
            check.rel_error = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(cfg.floor);
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors })
}

/// Which parameter tensor a perturbation hits.
#[derive(Clone, Copy, Debug)]
enum Target {
    Conv { augmented: bool, layer: usize, bias: bool },
    HeadWeight,
    HeadBias,
}

fn targets(model: &Model<f32>) -> Vec<Target> {
    let mut out = Vec::new();
    for augmented in [false, true] {
        if augmented && !model.is_dual() {
            continue;
        }
        for layer in 0..3 {
            out.push(Target::Conv { augmented, layer, bias: false });
            out.push(Target::Conv { augmented, layer, bias: true });
        }
    }
    out.push(Target::HeadWeight);
    out.push(Target::HeadBias);
    out
}

struct Probe {
    model: Model<f64>,
    labels: Vec<usize>,
    orig: Vec<ExtractorCache<f64>>,
    aug: Option<Vec<ExtractorCache<f64>>>,
    f_orig: Tensor<f64>,
    f_aug: Option<Tensor<f64>>,
}

impl Probe {
    fn new(model: &Model<f32>, x_orig: &Tensor<f32>, x_aug: Option<&Tensor<f32>>, labels: &[usize]) -> Result<Self> {
        let model = model.cast::<f64>();
        let (_, cache) = model.forward(&x_orig.cast(), x_aug.map(Tensor::cast).as_ref())?;
        Ok(Self {
            labels: labels.to_vec(),
            orig: cache.orig.expect("full forward keeps caches"),
            aug: cache.aug,
            f_orig: cache.f_orig,
            f_aug: cache.f_aug,
            model,
        })
    }

    fn loss_from(&self, f_orig: &Tensor<f64>, f_aug: Option<&Tensor<f64>>, head: &Linear<f64>) -> f64 {
        let merged = match f_aug {
            Some(a) => merge_features(f_orig, a, self.model.merge).expect("shapes checked"),
            None => f_orig.clone(),
        };
        let logits = head.forward(&merged).expect("shapes checked");
        cross_entropy_loss(&logits, &self.labels).expect("labels checked").0
    }

    /// Loss with parameter `i` of `target` shifted by `delta`, and whether
    /// the shift changed any ReLU or max-pool decision. With `freeze` the
    /// base decisions are reused instead.
    fn loss(&self, target: Target, i: usize, delta: f64, freeze: bool) -> (f64, bool) {
        match target {
            Target::HeadWeight | Target::HeadBias => {
                let mut head = self.model.head.clone();
                let t = if matches!(target, Target::HeadWeight) { &mut head.weight } else { &mut head.bias };
                t.data_mut()[i] += delta;
                (self.loss_from(&self.f_orig, self.f_aug.as_ref(), &head), false)
            }
            Target::Conv { augmented, layer, bias } => {
                let (ext, caches) = if augmented {
                    (
                        self.model.augmented.as_ref().expect("dual model"),
                        self.aug.as_ref().expect("dual caches"),
                    )
                } else {
                    (&self.model.original, &self.orig)
                };
                let mut kinked = false;
                let mut rows = Vec::with_capacity(caches.len());
                for cache in caches {
                    let (row, k) = perturbed_features(ext, cache, layer, bias, i, delta, freeze);
                    kinked |= k;
                    rows.push(row);
                }
                let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
                let feats = Tensor::stack(&refs, &[FEATURE_DIM]).expect("non-empty");
                let loss = if augmented {
                    self.loss_from(&self.f_orig, Some(&feats), &self.model.head)
                } else {
                    self.loss_from(&feats, self.f_aug.as_ref(), &self.model.head)
                };
                (loss, kinked)
            }
        }
    }
}

fn perturbed_features(
    ext: &Extractor<f64>,
    cache: &ExtractorCache<f64>,
    layer: usize,
    bias: bool,
    i: usize,
    delta: f64,
    freeze: bool,
) -> (Vec<f64>, bool) {
    let block = &cache.blocks[layer];
    let hw = block.h * block.w;
    let conv = &ext.convs[layer];
    let mut pre = block.pre.clone();
    if bias {
        pre[i * hw..(i + 1) * hw].iter_mut().for_each(|v| *v += delta);
    } else {
        let k = conv.in_channels() * 9;
        let (o, j) = (i / k, i % k);
        let patch = &block.cols[j * hw..(j + 1) * hw];
        for (v, &c) in pre[o * hw..(o + 1) * hw].iter_mut().zip(patch) {
            *v += delta * c;
        }
    }
    let (mut pooled, mut kinked) = pool_compare(&pre, conv.out_channels(), block, freeze);
    for l in layer + 1..3 {
        let next = &cache.blocks[l];
        let conv = &ext.convs[l];
        let (_, pre) = conv.forward(&pooled, next.h, next.w);
        let (p, k) = pool_compare(&pre, conv.out_channels(), next, freeze);
        pooled = p;
        kinked |= k;
    }
    (global_average(&pooled, FEATURE_DIM), kinked)
}

fn pool_compare(pre: &[f64], channels: usize, base: &BlockCache<f64>, freeze: bool) -> (Vec<f64>, bool) {
    if freeze {
        let pooled = base
            .argmax
            .iter()
            .zip(&base.pooled)
            .map(|(&i, &b)| if b > 0.0 { pre[i as usize] } else { 0.0 })
            .collect();
        return (pooled, false);
    }
    let (pooled, argmax) = relu_maxpool(pre, channels, base.h, base.w);
    let same = argmax == base.argmax && pooled.iter().zip(&base.pooled).all(|(a, b)| (*a > 0.0) == (*b > 0.0));
    (pooled, !same)
}

/// Uniform `[0, 1)` images, `[n, 3, size, size]`.
pub fn random_batch(n: usize, size: usize, rng: &mut Rng) -> Tensor<f32> {
    let u = Uniform::new(0.0f32, 1.0).expect("valid range");
    let data = (0..n * 3 * size * size).map(|_| u.sample(rng)).collect();
    Tensor::new(vec![n, 3, size, size], data).expect("shape matches")
}

/// Positive images increasing towards the lower right with unit steps much
/// larger than `eps`, so no pooling window ever ties.
pub fn ramp_batch(n: usize, size: usize, rng: &mut Rng) -> Tensor<f32> {
    let u = Uniform::new(0.5f32, 1.5).expect("valid range");
    let mut data = Vec::with_capacity(n * 3 * size * size);
    for _ in 0..n * 3 {
        let (a, b, c) = (u.sample(rng), u.sample(rng), u.sample(rng));
        for y in 0..size {
            for x in 0..size {
                data.push(0.1 * c + (a * y as f32 + b * x as f32) / size as f32);
            }
        }
    }
    Tensor::new(vec![n, 3, size, size], data).expect("shape matches")
}

/// Dual model with pass-through kernels and a random head: on positive
/// monotone inputs every ReLU is the identity and every pool picks the same
/// cell, so the network is linear in each parameter.
pub fn linear_only_model(classes: usize, merge: Merge, rng: &mut Rng) -> Result<Model<f32>> {
    let mut model = Model::dual(classes, merge, rng)?;
    model.original = Extractor::pass_through();
    model.augmented = Some(Extractor::pass_through());
    Ok(model)
}
