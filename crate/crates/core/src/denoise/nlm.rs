use rayon::prelude::*;

use super::pad_plane;
use crate::image::Image;

/// Non-local means with the default zero noise offset.
pub fn nlm_denoise(image: &Image, h: f64, patch_radius: usize, search_radius: usize) -> Image {
    nlm_denoise_with_noise(image, h, patch_radius, search_radius, 0.0)
}

/// Non-local means: each output sample is the weighted mean of the samples in
/// its `(2S+1)²` search window, weighted by
/// `exp(-max(d² - 2σ², 0) / h²)` where `d²` is the mean squared difference
/// of the `(2P+1)²` patches centred on the two pixels.
pub fn nlm_denoise_with_noise(
    image: &Image,
    h: f64,
    patch_radius: usize,
    search_radius: usize,
    noise_sigma: f64,
) -> Image {
    let (height, width, _) = image.shape();
    let pad = patch_radius + search_radius;
    let inv_h2 = 1.0 / (h * h);
    let offset = 2.0 * noise_sigma * noise_sigma;
    let p = patch_radius as isize;
    let s = search_radius as isize;
    let patch_len = ((2 * p + 1) * (2 * p + 1)) as f64;

    let planes: Vec<Vec<f32>> = image
        .planes()
        .iter()
        .map(|plane| {
            let (padded, pw) = pad_plane(plane, height, width, pad);
            let at = |y: isize, x: isize| padded[(y + pad as isize) as usize * pw + (x + pad as isize) as usize];
            let mut out = vec![0.0f32; height * width];
            out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
                let y = y as isize;
                for (x, o) in row.iter_mut().enumerate() {
                    let x = x as isize;
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for dy in -s..=s {
                        for dx in -s..=s {
                            // Search positions outside the image clamp to the edge.
                            let qy = (y + dy).clamp(0, height as isize - 1);
                            let qx = (x + dx).clamp(0, width as isize - 1);
                            let mut d2 = 0.0;
                            for py in -p..=p {
                                for px in -p..=p {
                                    let diff = at(y + py, x + px) - at(qy + py, qx + px);
                                    d2 += diff * diff;
                                }
                            }
                            let w = (-((d2 / patch_len - offset).max(0.0)) * inv_h2).exp();
                            num += w * at(qy, qx);
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
    use crate::sample::natural_image;

    /// Four-nested-loop evaluation straight from the definition.
    pub(crate) fn nlm_oracle(img: &Image, h: f64, pr: isize, sr: isize) -> Vec<f64> {
        let (hh, ww, cc) = img.shape();
        let g = |y: isize, x: isize, c: usize| img.get_clamped(y, x, c) as f64;
        let mut out = vec![0.0; hh * ww * cc];
        for y in 0..hh as isize {
            for x in 0..ww as isize {
                for c in 0..cc {
                    let (mut num, mut den) = (0.0, 0.0);
                    for qy0 in y - sr..=y + sr {
                        for qx0 in x - sr..=x + sr {
                            let qy = qy0.clamp(0, hh as isize - 1);
                            let qx = qx0.clamp(0, ww as isize - 1);
                            let mut d2 = 0.0;
                            let mut n = 0.0;
                            for oy in -pr..=pr {
                                for ox in -pr..=pr {
                                    d2 += (g(y + oy, x + ox, c) - g(qy + oy, qx + ox, c)).powi(2);
                                    n += 1.0;
                                }
                            }
                            let w = (-(d2 / n) / (h * h)).exp();
                            num += w * g(qy, qx, c);
                            den += w;
                        }
                    }
                    out[(y as usize * ww + x as usize) * cc + c] = num / den;
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_on_5x5() {
        let img = natural_image(5, 5, 9);
        let out = nlm_denoise(&img, 0.1, 1, 2);
        let oracle = nlm_oracle(&img, 0.1, 1, 2);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn vertical_stripes_keep_their_pattern() {
        // Columns with identical patch neighbourhoods get identical outputs.
        let img = Image::from_fn(12, 24, 1, |_, x, _| if (x / 2) % 2 == 0 { 0.2 } else { 0.8 }).unwrap();
        let out = nlm_denoise(&img, 0.3, 1, 3);
        for x in 0..24 {
            let col: Vec<f32> = (0..12).map(|y| out.get(y, x, 0)).collect();
            assert!(col.iter().all(|&v| v == col[0]), "column {x} not uniform");
        }
        // Interior columns with the same phase match each other.
        assert_eq!(out.get(5, 8, 0), out.get(5, 12, 0));
        assert_eq!(out.get(5, 9, 0), out.get(5, 13, 0));
        assert!(out.get(5, 4, 0) < 0.5 && out.get(5, 6, 0) > 0.5);
    }

    #[test]
    fn noise_offset_flattens_close_patches() {
        let img = natural_image(6, 6, 4);
        let plain = nlm_denoise(&img, 0.1, 1, 1);
        let offset = nlm_denoise_with_noise(&img, 0.1, 1, 1, 1.0);
        // With a large offset every weight is 1: a plain clamped box mean.
        let v = (0..9)
            .map(|i| img.get_clamped(2 + i / 3 - 1, 2 + i % 3 - 1, 0) as f64)
            .sum::<f64>()
            / 9.0;
        assert!((offset.get(2, 2, 0) as f64 - v).abs() < 1e-6);
        assert_ne!(plain, offset);
    }
}
