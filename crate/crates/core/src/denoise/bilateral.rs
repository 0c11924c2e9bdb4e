use rayon::prelude::*;

use super::pad_plane;
use crate::image::Image;

/// Bilateral filter over a `(2r+1)²` window: spatial Gaussian on the offset
/// length times range Gaussian on the intensity difference, normalised.
pub fn bilateral_denoise(image: &Image, sigma_s: f64, sigma_r: f64, radius: usize) -> Image {
    let (height, width, _) = image.shape();
    let r = radius as isize;
    let side = 2 * radius + 1;
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .map(|(dy, dx)| (-((dy * dy + dx * dx) as f64) / (2.0 * sigma_s * sigma_s)).exp())
        .collect();
    let range_scale = -1.0 / (2.0 * sigma_r * sigma_r);

    let planes: Vec<Vec<f32>> = image
        .planes()
        .iter()
        .map(|plane| {
            let (padded, pw) = pad_plane(plane, height, width, radius);
            let mut out = vec![0.0f32; height * width];
            out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
                for (x, o) in row.iter_mut().enumerate() {
                    let center = padded[(y + radius) * pw + x + radius];
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for wy in 0..side {
                        let base = (y + wy) * pw + x;
                        for wx in 0..side {
                            let v = padded[base + wx];
                            let d = v - center;
                            let w = spatial[wy * side + wx] * (d * d * range_scale).exp();
                            num += w * v;
                            den += w;
                        }
                    }
                    *o = (num / den) as f32;
                }
            });
            out
        })
        .collect();
    Image::from_planes(height, width, &planes).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    pub(crate) fn bilateral_oracle(img: &Image, ss: f64, sr: f64, r: isize) -> Vec<f64> {
        let (h, w, cc) = img.shape();
        let mut out = Vec::with_capacity(h * w * cc);
        for y in 0..h as isize {
            for x in 0..w as isize {
                for c in 0..cc {
                    let p = img.get(y as usize, x as usize, c) as f64;
                    let (mut num, mut den) = (0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let q = img.get_clamped(y + dy, x + dx, c) as f64;
                            let gs = (-((dx * dx + dy * dy) as f64) / (2.0 * ss * ss)).exp();
                            let gr = (-(p - q).powi(2) / (2.0 * sr * sr)).exp();
                            num += gs * gr * q;
                            den += gs * gr;
                        }
                    }
                    out.push(num / den);
                }
            }
        }
        out
    }

    #[test]
    fn one_by_three_center_pixel() {
        let img = Image::new(1, 3, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let out = bilateral_denoise(&img, 1.0, 1e6, 1);
        // Rows clamp onto the single row: the centre column collects weights
        // for dy in {-1,0,1} at dx=0, the side columns at dx=±1.
        let e = |d2: f64| (-d2 / 2.0).exp();
        let center_w = e(0.0) + 2.0 * e(1.0);
        let side_w = e(1.0) + 2.0 * e(2.0);
        let expected = center_w / (center_w + 2.0 * side_w);
        assert!((out.get(0, 1, 0) as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn huge_range_sigma_is_gaussian_blur() {
        let mut rng = rng_from_seed(17);
        let img = Image::from_fn(9, 9, 1, |_, _, _| rng.random()).unwrap();
        let out = bilateral_denoise(&img, 1.3, 1e6, 3);
        for y in 0..9isize {
            for x in 0..9isize {
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -3..=3isize {
                    for dx in -3..=3isize {
                        let g = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.3 * 1.3)).exp();
                        num += g * img.get_clamped(y + dy, x + dx, 0) as f64;
                        den += g;
                    }
                }
                assert!((out.get(y as usize, x as usize, 0) as f64 - num / den).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn matches_brute_force_rgb() {
        let img = crate::sample::natural_image(7, 7, 3);
        let out = bilateral_denoise(&img, 2.0, 0.15, 2);
        let oracle = bilateral_oracle(&img, 2.0, 0.15, 2);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn preserves_a_strong_edge() {
        let img = Image::from_fn(16, 16, 1, |_, x, _| if x < 8 { 0.1 } else { 0.9 }).unwrap();
        let out = bilateral_denoise(&img, 3.0, 0.1, 5);
        assert!((out.get(8, 7, 0) - 0.1).abs() < 1e-3);
        assert!((out.get(8, 8, 0) - 0.9).abs() < 1e-3);
    }
}
