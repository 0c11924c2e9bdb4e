//! Chambolle's dual projection algorithm for isotropic TV denoising,
//! `min_u TV(u) + ‖u − f‖² / (2λ)`.
//!
//! The gradient uses forward differences (zero across the last row/column)
//! and the divergence is its negative adjoint, so Neumann boundaries hold.

use crate::image::Image;

/// Iterative solver state for one channel plane.
#[derive(Clone, Debug)]
pub struct TvSolver {
    f: Vec<f64>,
    h: usize,
    w: usize,
    weight: f64,
    tau: f64,
    px: Vec<f64>,
    py: Vec<f64>,
    iterations: usize,
}

impl TvSolver {
    pub fn new(plane: &[f32], h: usize, w: usize, weight: f64, tau: f64) -> Self {
        assert_eq!(plane.len(), h * w);
        assert!(weight > 0.0, "TV weight must be positive to iterate");
        Self {
            f: plane.iter().map(|&v| f64::from(v)).collect(),
            h,
            w,
            weight,
            tau,
            px: vec![0.0; h * w],
            py: vec![0.0; h * w],
            iterations: 0,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn divergence(&self, px: &[f64], py: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut div = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let dx = if w == 1 {
                    0.0
                } else if x == 0 {
                    px[i]
                } else if x == w - 1 {
                    -px[i - 1]
                } else {
                    px[i] - px[i - 1]
                };
                let dy = if h == 1 {
                    0.0
                } else if y == 0 {
                    py[i]
                } else if y == h - 1 {
                    -py[i - w]
                } else {
                    py[i] - py[i - w]
                };
                div[i] = dx + dy;
            }
        }
        div
    }

    fn gradient(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (self.h, self.w);
        let mut gx = vec![0.0; h * w];
        let mut gy = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    gx[i] = u[i + 1] - u[i];
                }
                if y + 1 < h {
                    gy[i] = u[i + w] - u[i];
                }
            }
        }
        (gx, gy)
    }

    /// The image of the dual update applied to the current `p`.
    fn updated(&self) -> (Vec<f64>, Vec<f64>) {
        let div = self.divergence(&self.px, &self.py);
        let inner: Vec<f64> = div.iter().zip(&self.f).map(|(d, f)| d - f / self.weight).collect();
        let (gx, gy) = self.gradient(&inner);
        let mut nx = vec![0.0; gx.len()];
        let mut ny = vec![0.0; gy.len()];
        for i in 0..gx.len() {
            let norm = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            let denom = 1.0 + self.tau * norm;
            nx[i] = (self.px[i] + self.tau * gx[i]) / denom;
            ny[i] = (self.py[i] + self.tau * gy[i]) / denom;
        }
        (nx, ny)
    }

    fn max_change(&self, nx: &[f64], ny: &[f64]) -> f64 {
        nx.iter()
            .zip(&self.px)
            .chain(ny.iter().zip(&self.py))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// One dual update; returns the largest change of any dual component.
    pub fn step(&mut self) -> f64 {
        let (nx, ny) = self.updated();
        let change = self.max_change(&nx, &ny);
        self.px = nx;
        self.py = ny;
        self.iterations += 1;
        change
    }

    /// Fixed-point residual `max |p − T(p)|` without advancing the state.
    pub fn residual(&self) -> f64 {
        let (nx, ny) = self.updated();
        self.max_change(&nx, &ny)
    }

    /// Current primal estimate `u = f − λ div p` (unclamped).
    pub fn primal(&self) -> Vec<f64> {
        let div = self.divergence(&self.px, &self.py);
        self.f.iter().zip(&div).map(|(f, d)| f - self.weight * d).collect()
    }

    /// `TV(u) + ‖u − f‖² / (2λ)` at the current primal estimate.
    pub fn energy(&self) -> f64 {
        tv_energy(&self.primal(), &self.f, self.h, self.w, self.weight)
    }

    pub fn dual_is_zero(&self) -> bool {
        self.px.iter().chain(&self.py).all(|&v| v == 0.0)
    }

    /// Iterates until the update falls below `tol` or `max_iters` is reached.
    pub fn run(&mut self, max_iters: usize, tol: f64) {
        while self.iterations < max_iters {
            if self.step() < tol {
                break;
            }
        }
    }
}

/// Isotropic TV plus the scaled fidelity term.
pub fn tv_energy(u: &[f64], f: &[f64], h: usize, w: usize, weight: f64) -> f64 {
    let mut tv = 0.0;
    let mut fid = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gx = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            let gy = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
            tv += (gx * gx + gy * gy).sqrt();
            fid += (u[i] - f[i]).powi(2);
        }
    }
    tv + fid / (2.0 * weight)
}

/// Chambolle TV denoising per channel; the result is clamped to `[0, 1]`.
/// A zero weight returns the input unchanged.
pub fn tv_denoise(image: &Image, weight: f64, tau: f64, max_iters: usize, tol: f64) -> Image {
    if weight == 0.0 {
        return image.clone();
    }
    let (h, w, _) = image.shape();
    let planes: Vec<Vec<f32>> = image
        .planes()
        .iter()
        .map(|plane| {
            let mut solver = TvSolver::new(plane, h, w, weight, tau);
            solver.run(max_iters, tol);
            solver.primal().iter().map(|&v| v as f32).collect()
        })
        .collect();
    Image::from_planes(h, w, &planes).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    fn noisy_step(seed: u64) -> Vec<f32> {
        let mut rng = rng_from_seed(seed);
        let n = Normal::new(0.0f32, 0.1).unwrap();
        (0..256)
            .map(|i| {
                let base = if i % 16 < 8 { 0.25 } else { 0.75 };
                (base + n.sample(&mut rng)).clamp(0.0, 1.0)
            })
            .collect()
    }

    #[test]
    fn zero_weight_is_identity() {
        let img = crate::sample::natural_image(8, 8, 1);
        assert_eq!(tv_denoise(&img, 0.0, 0.125, 100, 1e-4), img);
    }

    #[test]
    fn constant_plane_keeps_zero_dual() {
        let mut s = TvSolver::new(&[0.3; 64], 8, 8, 0.1, 0.125);
        for _ in 0..10 {
            s.step();
        }
        assert!(s.dual_is_zero());
        assert!(s.primal().iter().all(|&v| v == f64::from(0.3f32)));
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let mut rng = rng_from_seed(2);
        let (h, w) = (5, 7);
        let s = TvSolver::new(&vec![0.0; h * w], h, w, 1.0, 0.125);
        let u: Vec<f64> = (0..h * w).map(|_| rng.random()).collect();
        let px: Vec<f64> = (0..h * w).map(|_| rng.random()).collect();
        let py: Vec<f64> = (0..h * w).map(|_| rng.random()).collect();
        let (gx, gy) = s.gradient(&u);
        let lhs: f64 = gx.iter().zip(&px).chain(gy.iter().zip(&py)).map(|(a, b)| a * b).sum();
        let div = s.divergence(&px, &py);
        let rhs: f64 = -u.iter().zip(&div).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn energy_decreases_and_converges_on_step_edge() {
        let plane = noisy_step(5);
        let mut s = TvSolver::new(&plane, 16, 16, 0.1, 0.125);
        let mut last = s.energy();
        while s.iterations() < 20_000 {
            let change = s.step();
            let e = s.energy();
            assert!(e <= last + 1e-12 * last.abs(), "iteration {}: {e} > {last}", s.iterations());
            last = e;
            if change < 1e-5 {
                break;
            }
        }
        assert!(s.residual() < 1e-4);
    }

    #[test]
    fn smooths_noise_but_keeps_the_edge() {
        let plane = noisy_step(8);
        let img = Image::new(16, 16, 1, plane).unwrap();
        let out = tv_denoise(&img, 0.1, 0.125, 500, 1e-5);
        let left: f32 = (0..16).map(|y| out.get(y, 3, 0)).sum::<f32>() / 16.0;
        let right: f32 = (0..16).map(|y| out.get(y, 12, 0)).sum::<f32>() / 16.0;
        assert!(right - left > 0.35);
    }
}
