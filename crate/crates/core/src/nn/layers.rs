use rand_distr::{Distribution, StandardNormal};

use super::{gemm, Mat, Real, Tensor};
use crate::rng::Rng;

/// He-style fan-in scaled normal initialization.
fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T = f32> {
    /// `[out, in, 3, 3]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        Self {
            weight: he_normal(&[cout, cin, 3, 3], cin * 9, rng),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[cout, cin, 3, 3]),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    /// `input` is `[cin, h, w]`; returns the `[cin*9, h*w]` patch matrix and
    /// the `[cout, h*w]` pre-activation.
    pub(crate) fn forward(&self, input: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let cols = im2col(input, cin, h, w);
        let hw = h * w;
        let mut out = vec![T::zero(); cout * hw];
        for (o, row) in out.chunks_exact_mut(hw).enumerate() {
            row.fill(self.bias.data()[o]);
        }
        gemm(Mat::new(self.weight.data(), cout, cin * 9), Mat::new(&cols, cin * 9, hw), T::one(), &mut out);
        (cols, out)
    }

    /// Accumulates weight/bias gradients from `dout` (`[cout, h*w]`) and
    /// returns the input gradient when `need_input` is set.
    pub(crate) fn backward(
        &self,
        cols: &[T],
        dout: &[T],
        h: usize,
        w: usize,
        grad: &mut Conv2d<T>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let hw = h * w;
        let k = cin * 9;
        gemm(Mat::new(dout, cout, hw), Mat::new(cols, k, hw).t(), T::one(), grad.weight.data_mut());
        for (o, row) in dout.chunks_exact(hw).enumerate() {
            let s: T = row.iter().copied().sum();
            grad.bias.data_mut()[o] = grad.bias.data()[o] + s;
        }
        if !need_input {
            return None;
        }
        let mut dcols = vec![T::zero(); k * hw];
        gemm(Mat::new(self.weight.data(), cout, k).t(), Mat::new(dout, cout, hw), T::zero(), &mut dcols);
        Some(col2im(&dcols, cin, h, w))
    }
}

/// Rows are `(c, ky, kx)`, columns are output positions `(y, x)`.
pub(crate) fn im2col<T: Real>(input: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * 9 * hw];
    for c in 0..cin {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); cin * hw];
    for c in 0..cin {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d = *d + s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d = *d + s),
                    }
                }
            }
        }
    }
    out
}

/// ReLU followed by 2x2 max pooling over `[c, h, w]`. Returns pooled values
/// and, per pooled cell, the flat index of the winning input.
pub(crate) fn relu_maxpool<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut idx = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        let base = ch * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let mut best = base + 2 * py * w + 2 * px;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * py + dy) * w + 2 * px + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best].max(T::zero()));
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

/// Routes pooled gradients back to their argmax inputs, masked by ReLU.
pub(crate) fn relu_maxpool_backward<T: Real>(dpooled: &[T], pooled: &[T], idx: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for ((&g, &v), &i) in dpooled.iter().zip(pooled).zip(idx) {
        if v > T::zero() {
            dx[i as usize] = dx[i as usize] + g;
        }
    }
    dx
}

/// Fully connected layer, `y = x · Wᵀ + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = f32> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: he_normal(&[output, input], input, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    /// `x` is `[n, in]`; returns `[n, out]`.
    pub fn forward(&self, x: &Tensor<T>) -> super::Result<Tensor<T>> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim() {
            return Err(super::NnError::Shape(format!(
                "head expects [n, {}], got {:?}",
                self.in_dim(),
                x.shape()
            )));
        }
        let n = x.rows();
        let (din, dout) = (self.in_dim(), self.out_dim());
        let mut y = Tensor::zeros(&[n, dout]);
        for i in 0..n {
            y.row_mut(i).copy_from_slice(self.bias.data());
        }
        gemm(Mat::new(x.data(), n, din), Mat::new(self.weight.data(), dout, din).t(), T::one(), y.data_mut());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dx` (`[n, in]`).
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Linear<T>) -> Tensor<T> {
        let n = x.rows();
        let (din, dout) = (self.in_dim(), self.out_dim());
        gemm(Mat::new(dy.data(), n, dout).t(), Mat::new(x.data(), n, din), T::one(), grad.weight.data_mut());
        for i in 0..n {
            for (b, &g) in grad.bias.data_mut().iter_mut().zip(dy.row(i)) {
                *b = *b + g;
            }
        }
        let mut dx = Tensor::zeros(&[n, din]);
        gemm(Mat::new(dy.data(), n, dout), Mat::new(self.weight.data(), dout, din), T::zero(), dx.data_mut());
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let mut rng = rng_from_seed(1);
        let (c, h, w) = (2, 4, 5);
        let x: Vec<f64> = (0..c * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..c * 9 * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lhs: f64 = im2col(&x, c, h, w).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = col2im(&y, c, h, w).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_matches_hand_computation() {
        // One channel, kernel with a 1 at the centre and 0.5 to the right.
        let mut conv = Conv2d::<f64>::zeros(1, 1);
        conv.weight.data_mut()[4] = 1.0;
        conv.weight.data_mut()[5] = 0.5;
        conv.bias.data_mut()[0] = 0.25;
        let input: Vec<f64> = (1..=16).map(|v| v as f64).collect();
        let (_, out) = conv.forward(&input, 4, 4);
        for y in 0..4 {
            for x in 0..4 {
                let right = if x < 3 { input[y * 4 + x + 1] } else { 0.0 };
                let expected = input[y * 4 + x] + 0.5 * right + 0.25;
                assert_eq!(out[y * 4 + x], expected);
            }
        }
    }

    #[test]
    fn conv_brute_force_multichannel() {
        let mut rng = rng_from_seed(4);
        let conv = Conv2d::<f64>::new(3, 2, &mut rng);
        let (h, w) = (5, 6);
        let input: Vec<f64> = (0..3 * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let (_, out) = conv.forward(&input, h, w);
        let wt = conv.weight.data();
        for o in 0..2 {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut s = 0.0;
                    for c in 0..3 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    s += wt[((o * 3 + c) * 3 + ky as usize) * 3 + kx as usize]
                                        * input[c * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    assert!((out[o * h * w + y as usize * w + x as usize] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_picks_maxima_and_masks_negatives() {
        let x = [1.0f32, 3.0, -1.0, -2.0, 2.0, 0.5, -4.0, -0.5];
        // 1 channel, 2x4 -> 1x2
        let (p, idx) = relu_maxpool(&x, 1, 2, 4);
        assert_eq!(p, vec![3.0, 0.0]);
        assert_eq!(idx, vec![1, 7]);
        let dx = relu_maxpool_backward(&[1.0, 1.0], &p, &idx, 8);
        assert_eq!(dx, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_head_examples() {
        let mut head = Linear::<f32>::zeros(2, 2);
        head.weight.data_mut().copy_from_slice(&[2.0, 3.0, 4.0, 5.0]);
        let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert_eq!(head.forward(&x).unwrap().data(), &[2.0, 4.0]);

        let mut biased = Linear::<f32>::zeros(3, 2);
        biased.bias.data_mut().copy_from_slice(&[0.5, -1.0]);
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let y = biased.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 0.5, -1.0]);
        assert!(biased.forward(&Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn linear_head_is_affine() {
        let mut rng = rng_from_seed(3);
        let mut head = Linear::<f64>::new(4, 3, &mut rng);
        head.bias.data_mut().copy_from_slice(&[0.1, 0.2, -0.3]);
        let x = Tensor::new(vec![2, 4], (0..8).map(|v| v as f64 * 0.1).collect()).unwrap();
        let y = Tensor::new(vec![2, 4], (0..8).map(|v| (v as f64).cos()).collect()).unwrap();
        let mut xy = x.clone();
        xy.add_assign(&y);
        let lhs = head.forward(&xy).unwrap();
        let (hx, hy) = (head.forward(&x).unwrap(), head.forward(&y).unwrap());
        for i in 0..2 {
            for j in 0..3 {
                let rhs = hx.row(i)[j] + hy.row(i)[j] - head.bias.data()[j];
                assert!((lhs.row(i)[j] - rhs).abs() < 1e-12);
            }
        }
    }
}
