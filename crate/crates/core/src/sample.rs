//! Procedural "natural" RGB test image: a smooth colour gradient overlaid
//! with soft-edged luminance blobs, a hard luminance edge and fine sinusoidal
//! texture. Used wherever a realistic image is needed without shipping
//! photographs.
//!
//! Every feature except the background shifts all three channels equally, so
//! chroma stays smooth and 4:2:0 subsampling is nearly lossless.

use crate::image::Image;
use crate::rng::{mix64, rng_from_seed};
use rand::Rng as _;

/// The image bundled with the repository (`assets/sample.ppm`) is
/// `natural_image(64, 64, BUNDLED_SEED)`.
pub const BUNDLED_SEED: u64 = 0;

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub fn natural_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = rng_from_seed(mix64(seed ^ 0x5A4D_504C_4531));
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.55));
    let grad: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
    let blobs: Vec<([f32; 2], f32, f32)> = (0..3)
        .map(|_| {
            (
                [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                rng.random_range(0.1..0.3),
                rng.random_range(-0.2..0.2),
            )
        })
        .collect();
    let edge_x = rng.random_range(0.3..0.7);
    let edge_gain: f32 = rng.random_range(0.1..0.15);
    let freq: f32 = rng.random_range(0.6..1.2);
    let (h, w) = (height as f32, width as f32);
    Image::from_fn(height, width, 3, |y, x, c| {
        let u = (x as f32 + 0.5) / w;
        let v = (y as f32 + 0.5) / h;
        let mut lum = 0.0;
        for (center, radius, gain) in &blobs {
            let d = ((u - center[0]).powi(2) + (v - center[1]).powi(2)).sqrt();
            lum += gain * (1.0 - smoothstep(radius * 0.85, *radius, d));
        }
        if u > edge_x {
            lum += edge_gain;
        }
        lum += 0.03 * (freq * x as f32).sin() * (freq * 1.3 * y as f32).cos();
        base[c] + grad[c] * (u + v - 1.0) + lum
    })
    .expect("valid dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_asset_matches_generator() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/sample.ppm");
        let bundled = Image::load_pnm(path).unwrap();
        let generated = natural_image(64, 64, BUNDLED_SEED);
        assert_eq!(bundled.to_pnm_bytes(), generated.to_pnm_bytes());
    }

    #[test]
    fn deterministic_and_varied() {
        assert_eq!(natural_image(16, 16, 3), natural_image(16, 16, 3));
        assert_ne!(natural_image(16, 16, 3), natural_image(16, 16, 4));
        let (lo, hi) = natural_image(64, 64, 0).min_max();
        assert!(hi - lo > 0.3);
    }

    #[test]
    #[ignore = "regenerates assets/sample.ppm"]
    fn regenerate_bundled_asset() {
        natural_image(64, 64, BUNDLED_SEED)
            .save_pnm(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/sample.ppm"))
            .unwrap();
    }
}
