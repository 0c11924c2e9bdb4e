use rayon::prelude::*;

use super::layers::{relu_maxpool, relu_maxpool_backward};
use super::{Conv2d, NnError, Real, Result, Tensor};
use crate::rng::Rng;

/// Output channels of the three conv blocks.
pub const WIDTHS: [usize; 3] = [16, 32, 64];
/// Length of the pooled feature vector.
pub const FEATURE_DIM: usize = 64;
/// Input planes expected by the first convolution.
pub const INPUT_CHANNELS: usize = 3;

const LAYER_NAMES: [&str; 3] = ["conv1", "conv2", "conv3"];

/// Three `conv3x3 -> ReLU -> maxpool2x2` blocks and global average pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct Extractor<T = f32> {
    pub convs: [Conv2d<T>; 3],
}

/// Intermediates of one block for one sample.
#[derive(Clone, Debug)]
pub(crate) struct BlockCache<T> {
    pub h: usize,
    pub w: usize,
    pub cols: Vec<T>,
    pub pre: Vec<T>,
    pub pooled: Vec<T>,
    pub argmax: Vec<u32>,
}

/// Activation record of one sample's forward pass.
#[derive(Clone, Debug)]
pub struct ExtractorCache<T = f32> {
    pub(crate) blocks: Vec<BlockCache<T>>,
}

impl<T: Real> Extractor<T> {
    pub fn new(rng: &mut Rng) -> Self {
        Self {
            convs: [
                Conv2d::new(INPUT_CHANNELS, WIDTHS[0], rng),
                Conv2d::new(WIDTHS[0], WIDTHS[1], rng),
                Conv2d::new(WIDTHS[1], WIDTHS[2], rng),
            ],
        }
    }

    pub fn zeros() -> Self {
        Self {
            convs: [
                Conv2d::zeros(INPUT_CHANNELS, WIDTHS[0]),
                Conv2d::zeros(WIDTHS[0], WIDTHS[1]),
                Conv2d::zeros(WIDTHS[1], WIDTHS[2]),
            ],
        }
    }

    /// Kernels whose output channel `o` copies input channel `o mod cin`
    /// through the centre tap, with zero biases.
    pub fn pass_through() -> Self {
        let mut e = Self::zeros();
        for conv in &mut e.convs {
            let cin = conv.in_channels();
            for o in 0..conv.out_channels() {
                conv.weight.data_mut()[(o * cin + o % cin) * 9 + 4] = T::one();
            }
        }
        e
    }

    pub fn cast<U: Real>(&self) -> Extractor<U> {
        Extractor {
            convs: [self.convs[0].cast(), self.convs[1].cast(), self.convs[2].cast()],
        }
    }

    /// Parameter tensors with stable names (`conv1.weight`, `conv1.bias`, ...).
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(6);
        for (name, conv) in LAYER_NAMES.iter().zip(&self.convs) {
            out.push((format!("{name}.weight"), &conv.weight));
            out.push((format!("{name}.bias"), &conv.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::with_capacity(6);
        for (name, conv) in LAYER_NAMES.iter().zip(self.convs.iter_mut()) {
            out.push((format!("{name}.weight"), &mut conv.weight));
            out.push((format!("{name}.bias"), &mut conv.bias));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_batch(batch: &Tensor<T>) -> Result<(usize, usize)> {
        let s = batch.shape();
        if s.len() != 4 || s[1] != INPUT_CHANNELS || s[2] % 8 != 0 || s[3] % 8 != 0 {
            return Err(NnError::Shape(format!(
                "extractor expects [n, {INPUT_CHANNELS}, h, w] with h and w multiples of 8, got {s:?}"
            )));
        }
        Ok((s[2], s[3]))
    }

    /// Forward pass of one `[3, h, w]` sample.
    pub(crate) fn forward_one(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, ExtractorCache<T>) {
        let mut blocks = Vec::with_capacity(3);
        let mut input = x.to_vec();
        let (mut h, mut w) = (h, w);
        for conv in &self.convs {
            let (cols, pre) = conv.forward(&input, h, w);
            let (pooled, argmax) = relu_maxpool(&pre, conv.out_channels(), h, w);
            input = pooled.clone();
            blocks.push(BlockCache { h, w, cols, pre, pooled, argmax });
            h /= 2;
            w /= 2;
        }
        let feat = global_average(&input, FEATURE_DIM);
        (feat, ExtractorCache { blocks })
    }

    /// Backward pass of one sample, accumulating into `grad`.
    pub(crate) fn backward_one(&self, cache: &ExtractorCache<T>, dfeat: &[T], grad: &mut Extractor<T>) {
        let last = &cache.blocks[2];
        let cells = last.pooled.len() / FEATURE_DIM;
        let inv = T::one() / T::of(cells as f64);
        let mut dpooled: Vec<T> = dfeat
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, cells))
            .collect();
        for (i, (conv, block)) in self.convs.iter().zip(&cache.blocks).enumerate().rev() {
            let dpre = relu_maxpool_backward(&dpooled, &block.pooled, &block.argmax, block.pre.len());
            match conv.backward(&block.cols, &dpre, block.h, block.w, &mut grad.convs[i], i > 0) {
                Some(dx) => dpooled = dx,
                None => break,
            }
        }
    }

    /// Batched forward pass over `[n, 3, h, w]`; returns `[n, 64]` features
    /// and one cache per sample.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Vec<ExtractorCache<T>>)> {
        let (h, w) = Self::check_batch(batch)?;
        let results: Vec<(Vec<T>, ExtractorCache<T>)> = (0..batch.rows())
            .into_par_iter()
            .map(|i| self.forward_one(batch.row(i), h, w))
            .collect();
        let rows: Vec<&[T]> = results.iter().map(|(f, _)| f.as_slice()).collect();
        let feats = Tensor::stack(&rows, &[FEATURE_DIM])?;
        Ok((feats, results.into_iter().map(|(_, c)| c).collect()))
    }

    /// Features only; caches are dropped as soon as each sample finishes.
    pub fn features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = Self::check_batch(batch)?;
        let rows: Vec<Vec<T>> = (0..batch.rows())
            .into_par_iter()
            .map(|i| self.forward_one(batch.row(i), h, w).0)
            .collect();
        let refs: Vec<&[T]> = rows.iter().map(Vec::as_slice).collect();
        Tensor::stack(&refs, &[FEATURE_DIM])
    }

    /// Parameter gradients for `dfeat` (`[n, 64]`). Per-sample gradients are
    /// computed in parallel and summed in sample order.
    pub fn backward(&self, caches: &[ExtractorCache<T>], dfeat: &Tensor<T>) -> Extractor<T> {
        assert_eq!(caches.len(), dfeat.rows(), "one cache per feature row");
        let parts: Vec<Extractor<T>> = caches
            .par_iter()
            .enumerate()
            .map(|(i, cache)| {
                let mut g = Extractor::zeros();
                self.backward_one(cache, dfeat.row(i), &mut g);
                g
            })
            .collect();
        let mut total = Extractor::zeros();
        for part in &parts {
            total.add_assign(part);
        }
        total
    }

    pub fn add_assign(&mut self, other: &Extractor<T>) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.weight.add_assign(&b.weight);
            a.bias.add_assign(&b.bias);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Order-sensitive FNV-1a digest of the raw parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for (_, t) in self.tensors() {
            for v in t.data() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    hash = (hash ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        hash
    }
}

/// Mean over each of `channels` equally sized planes.
pub(crate) fn global_average<T: Real>(x: &[T], channels: usize) -> Vec<T> {
    let cells = x.len() / channels;
    let inv = T::one() / T::of(cells as f64);
    x.chunks_exact(cells).map(|p| p.iter().copied().sum::<T>() * inv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, Uniform};

    fn random_batch(n: usize, size: usize, seed: u64) -> Tensor<f32> {
        let mut rng = rng_from_seed(seed);
        let u = Uniform::new(0.0f32, 1.0).unwrap();
        let data = (0..n * 3 * size * size).map(|_| u.sample(&mut rng)).collect();
        Tensor::new(vec![n, 3, size, size], data).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let e = Extractor::<f32>::new(&mut rng_from_seed(1));
        let f = e.features(&Tensor::zeros(&[2, 3, 64, 64])).unwrap();
        assert_eq!(f.shape(), &[2, FEATURE_DIM]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_samples_give_identical_rows() {
        let e = Extractor::<f32>::new(&mut rng_from_seed(2));
        let one = random_batch(1, 64, 3);
        let two = Tensor::stack(&[one.row(0), one.row(0)], &[3, 64, 64]).unwrap();
        let f = e.features(&two).unwrap();
        assert_eq!(f.row(0), f.row(1));
        assert!(f.row(0).iter().any(|&v| v > 0.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        let e = Extractor::<f32>::zeros();
        assert!(e.features(&Tensor::zeros(&[1, 1, 64, 64])).is_err());
        assert!(e.features(&Tensor::zeros(&[1, 3, 60, 64])).is_err());
        assert!(e.features(&Tensor::zeros(&[3, 64, 64])).is_err());
    }

    #[test]
    fn pass_through_averages_the_pooled_input() {
        // Positive ramp increasing to the lower right: every pool picks its
        // bottom-right cell, so each feature is a mean over a strided grid.
        let size = 16;
        let data: Vec<f32> = (0..3 * size * size)
            .map(|i| {
                let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
                0.1 + c as f32 + (y * size + x) as f32 * 0.01
            })
            .collect();
        let batch = Tensor::new(vec![1, 3, size, size], data.clone()).unwrap();
        let f = Extractor::<f32>::pass_through().features(&batch).unwrap();
        for o in 0..FEATURE_DIM {
            let c = o % 16 % 3;
            let mut s = 0.0;
            for y in (7..size).step_by(8) {
                for x in (7..size).step_by(8) {
                    s += data[c * size * size + y * size + x];
                }
            }
            let expected = s / 4.0;
            assert!((f.row(0)[o] - expected).abs() < 1e-5, "{o}: {} vs {expected}", f.row(0)[o]);
        }
    }

    #[test]
    fn parallel_batch_matches_sequential() {
        let e = Extractor::<f32>::new(&mut rng_from_seed(5));
        let batch = random_batch(3, 16, 6);
        let (feats, caches) = e.forward(&batch).unwrap();
        let dfeat = Tensor::new(vec![3, FEATURE_DIM], (0..3 * FEATURE_DIM).map(|i| (i as f32 * 0.1).sin()).collect()).unwrap();
        let g = e.backward(&caches, &dfeat);
        let mut seq = Extractor::zeros();
        for i in 0..3 {
            let (f, cache) = e.forward_one(batch.row(i), 16, 16);
            assert_eq!(f.as_slice(), feats.row(i));
            let mut part = Extractor::zeros();
            e.backward_one(&cache, dfeat.row(i), &mut part);
            seq.add_assign(&part);
        }
        assert_eq!(g, seq);
    }
}
