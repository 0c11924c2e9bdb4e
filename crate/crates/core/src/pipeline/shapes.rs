//! Procedural motif images for the synthetic classification dataset.

use std::f64::consts::{PI, TAU};

use rand::Rng as _;

use crate::image::Image;
use crate::rng::{rng_from_seed, Rng};

/// Motif classes in generation order. The first eight are the default set.
pub const MOTIFS: [Motif; 16] = [
    Motif::Disc,
    Motif::Square,
    Motif::Triangle,
    Motif::Cross,
    Motif::Ring,
    Motif::HStripes,
    Motif::VStripes,
    Motif::Checkerboard,
    Motif::Ellipse,
    Motif::Star,
    Motif::Crescent,
    Motif::DiagonalStripes,
    Motif::Dots,
    Motif::Target,
    Motif::HalfDisc,
    Motif::Frame,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motif {
    Disc,
    Square,
    Triangle,
    Cross,
    Ring,
    HStripes,
    VStripes,
    Checkerboard,
    Ellipse,
    Star,
    Crescent,
    DiagonalStripes,
    Dots,
    Target,
    HalfDisc,
    Frame,
}

impl Motif {
    pub fn name(self) -> &'static str {
        match self {
            Motif::Disc => "disc",
            Motif::Square => "square",
            Motif::Triangle => "triangle",
            Motif::Cross => "cross",
            Motif::Ring => "ring",
            Motif::HStripes => "hstripes",
            Motif::VStripes => "vstripes",
            Motif::Checkerboard => "checkerboard",
            Motif::Ellipse => "ellipse",
            Motif::Star => "star",
            Motif::Crescent => "crescent",
            Motif::DiagonalStripes => "dstripes",
            Motif::Dots => "dots",
            Motif::Target => "target",
            Motif::HalfDisc => "halfdisc",
            Motif::Frame => "frame",
        }
    }

    /// Orientation range; patterns whose identity depends on direction get a
    /// narrow band, everything else any angle.
    fn angle(self, rng: &mut Rng) -> f64 {
        let jitter = |rng: &mut Rng, max_deg: f64| rng.random_range(-max_deg..=max_deg).to_radians();
        match self {
            Motif::HStripes | Motif::VStripes | Motif::Checkerboard => jitter(rng, 20.0),
            Motif::DiagonalStripes => PI / 4.0 + jitter(rng, 15.0),
            _ => rng.random_range(0.0..TAU),
        }
    }

    /// Membership of a point in motif-local coordinates (unit radius).
    fn contains(self, u: f64, v: f64, freq: f64) -> bool {
        let r = (u * u + v * v).sqrt();
        let parity = |t: f64| (t * freq).floor().rem_euclid(2.0) == 0.0;
        let in_patch = u.abs() <= 0.9 && v.abs() <= 0.9;
        match self {
            Motif::Disc => r <= 1.0,
            Motif::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Motif::Triangle => (0..3).all(|k| {
                let a = -PI / 2.0 + k as f64 * TAU / 3.0;
                u * a.cos() + v * a.sin() <= 0.5
            }),
            Motif::Cross => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
            Motif::Ring => (0.6..=1.0).contains(&r),
            Motif::HStripes | Motif::DiagonalStripes => in_patch && parity(v),
            Motif::VStripes => in_patch && parity(u),
            Motif::Checkerboard => in_patch && (parity(u) == parity(v)),
            Motif::Ellipse => u * u + v * v / 0.3 <= 1.0,
            Motif::Star => {
                let theta = v.atan2(u);
                let lobe = (2.5 * theta).cos().abs();
                r <= 0.45 + 0.55 * lobe.powi(3)
            }
            Motif::Crescent => r <= 1.0 && (u - 0.45).hypot(v) > 0.75,
            Motif::Dots => {
                let cell = |t: f64| (t * freq * 0.5).rem_euclid(1.0) - 0.5;
                in_patch && cell(u).hypot(cell(v)) <= 0.3
            }
            Motif::Target => r <= 0.25 || (0.5..=0.72).contains(&r) || (0.9..=1.0).contains(&r),
            Motif::HalfDisc => r <= 1.0 && v >= 0.0,
            Motif::Frame => {
                let m = u.abs().max(v.abs());
                (0.55..=0.85).contains(&m)
            }
        }
    }
}

/// Rendering knobs shared by every class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderParams {
    /// Motif radius range as a fraction of the image side.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Minimum amount by which the foreground outshines the background.
    pub min_contrast: f64,
    /// Amplitude of each smooth additive grating.
    pub texture_amplitude: f64,
    /// Half-width of the uniform per-pixel grain.
    pub grain: f64,
    /// Stripe and checker cycles per motif radius.
    pub min_frequency: f64,
    pub max_frequency: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            min_radius: 0.2,
            max_radius: 0.3,
            min_contrast: 0.5,
            texture_amplitude: 0.02,
            grain: 0.08,
            min_frequency: 2.0,
            max_frequency: 3.0,
        }
    }
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn color_pair(rng: &mut Rng, min_contrast: f64) -> ([f64; 3], [f64; 3]) {
    loop {
        let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        if luminance(fg) - luminance(bg) >= min_contrast {
            return (fg, bg);
        }
    }
}

/// Renders one `size × size` RGB image of `motif` from `seed`.
pub fn render(motif: Motif, size: usize, seed: u64, params: &RenderParams) -> Image {
    let mut rng = rng_from_seed(seed);
    let s = size as f64;
    let radius = rng.random_range(params.min_radius..=params.max_radius) * s;
    let margin = radius * 0.9;
    let cx = rng.random_range(margin..=(s - margin).max(margin));
    let cy = rng.random_range(margin..=(s - margin).max(margin));
    let angle = motif.angle(&mut rng);
    let freq = rng.random_range(params.min_frequency..=params.max_frequency);
    let (fg, bg) = color_pair(&mut rng, params.min_contrast);
    let gratings: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..TAU);
            let f = rng.random_range(0.03..0.25) * TAU;
            let phase = rng.random_range(0.0..TAU);
            let amp = rng.random_range(0.0..=params.texture_amplitude);
            (f * theta.cos(), f * theta.sin(), phase, amp)
        })
        .collect();
    let (sin_a, cos_a) = angle.sin_cos();

    const SUB: usize = 3;
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let px = x as f64 + (sx as f64 + 0.5) / SUB as f64 - cx;
                    let py = y as f64 + (sy as f64 + 0.5) / SUB as f64 - cy;
                    let u = (cos_a * px + sin_a * py) / radius;
                    let v = (-sin_a * px + cos_a * py) / radius;
                    hits += usize::from(motif.contains(u, v, freq));
                }
            }
            let m = hits as f64 / (SUB * SUB) as f64;
            let texture: f64 = gratings
                .iter()
                .map(|&(kx, ky, phase, amp)| amp * (kx * x as f64 + ky * y as f64 + phase).sin())
                .sum::<f64>()
                + rng.random_range(-params.grain..=params.grain);
            for c in 0..3 {
                data.push((bg[c] * (1.0 - m) + fg[c] * m + texture) as f32);
            }
        }
    }
    Image::new(size, size, 3, data).expect("valid shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = MOTIFS.iter().map(|m| m.name()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), MOTIFS.len());
    }

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let p = RenderParams::default();
        for (i, &m) in MOTIFS.iter().enumerate() {
            let a = render(m, 32, i as u64, &p);
            assert_eq!(a, render(m, 32, i as u64, &p));
            assert_eq!(a.shape(), (32, 32, 3));
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn motifs_cover_a_reasonable_area() {
        // Every motif must be visible: a noticeable share of the unit square
        // inside the unit disc region should belong to it.
        for &m in &MOTIFS {
            let n = 200;
            let mut inside = 0;
            for i in 0..n {
                for j in 0..n {
                    let u = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
                    let v = -1.0 + 2.0 * (j as f64 + 0.5) / n as f64;
                    inside += usize::from(m.contains(u, v, 2.5));
                }
            }
            let frac = inside as f64 / (n * n) as f64;
            assert!((0.1..0.9).contains(&frac), "{}: {frac}", m.name());
        }
    }

    #[test]
    fn stripe_orientation_differs() {
        let h: usize = (0..100).map(|i| usize::from(Motif::HStripes.contains(0.0, -0.9 + i as f64 * 0.018, 2.5))).sum();
        let along: usize = (0..100).map(|i| usize::from(Motif::HStripes.contains(-0.9 + i as f64 * 0.018, 0.1, 2.5))).sum();
        assert!(h > 20 && h < 80);
        assert!(along == 0 || along == 100);
    }
}
