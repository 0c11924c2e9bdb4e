//! In-memory simulation of a baseline JPEG encode/decode.
//!
//! Only the lossy stages are modelled: 8-bit sampling, RGB -> YCbCr (JFIF),
//! 4:2:0 chroma averaging, 8x8 DCT, quantization with the Annex K tables,
//! dequantization, inverse DCT, integer sample reconstruction, chroma
//! replication and YCbCr -> RGB. Huffman coding is lossless and skipped.

use std::sync::OnceLock;

use crate::image::{quantize_u8, Image};

#[rustfmt::skip]
pub const LUMA_BASE_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
pub const CHROMA_BASE_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

fn scale_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = u32::from(quality.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    base.map(|b| ((u32::from(b) * scale + 50) / 100).max(1) as u16)
}

/// Luminance and chrominance quantization tables for `quality` (1..=100),
/// in row-major (natural) order.
pub fn quant_tables(quality: u8) -> ([u16; 64], [u16; 64]) {
    (
        scale_table(&LUMA_BASE_TABLE, quality),
        scale_table(&CHROMA_BASE_TABLE, quality),
    )
}

/// Orthonormal 8-point DCT-II basis, `basis[k][n]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (k, row) in m.iter_mut().enumerate() {
            let alpha = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = alpha * ((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for k in 0..8 {
            tmp[y * 8 + k] = (0..8).map(|n| b[k][n] * block[y * 8 + n]).sum();
        }
    }
    let mut out = [0.0; 64];
    for k in 0..8 {
        for x in 0..8 {
            out[k * 8 + x] = (0..8).map(|n| b[k][n] * tmp[n * 8 + x]).sum();
        }
    }
    out
}

fn idct(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            tmp[y * 8 + x] = (0..8).map(|k| b[k][y] * coef[k * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|k| b[k][x] * tmp[y * 8 + k]).sum();
        }
    }
    out
}

/// Runs one plane (8-bit sample scale) through DCT quantization, returning
/// reconstructed integer samples. Partial edge blocks are padded by
/// replicating the last row/column.
fn code_plane(plane: &[f64], h: usize, w: usize, table: &[u16; 64]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                let sy = (by + y).min(h - 1);
                for x in 0..8 {
                    let sx = (bx + x).min(w - 1);
                    block[y * 8 + x] = plane[sy * w + sx] - 128.0;
                }
            }
            let mut coef = fdct(&block);
            for (c, &q) in coef.iter_mut().zip(table) {
                let q = f64::from(q);
                *c = (*c / q).round() * q;
            }
            let rec = idct(&coef);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    out[(by + y) * w + bx + x] = (rec[y * 8 + x] + 128.0).round().clamp(0.0, 255.0);
                }
            }
        }
    }
    out
}

/// Simulated JPEG compression at `quality` (1..=100).
pub fn jpeg_roundtrip(image: &Image, quality: u8) -> Image {
    let (h, w, channels) = image.shape();
    let (luma_q, chroma_q) = quant_tables(quality);
    let bytes: Vec<f64> = image.data().iter().map(|&v| f64::from(quantize_u8(v))).collect();

    if channels == 1 {
        let y = code_plane(&bytes, h, w, &luma_q);
        let data = y.iter().map(|&v| (v / 255.0) as f32).collect();
        return Image::new(h, w, 1, data).expect("shape preserved");
    }

    let n = h * w;
    let mut lum = vec![0.0; n];
    let mut cb = vec![0.0; n];
    let mut cr = vec![0.0; n];
    for (i, px) in bytes.chunks_exact(3).enumerate() {
        let (r, g, b) = (px[0], px[1], px[2]);
        lum[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
        cr[i] = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    }

    // 4:2:0 subsampling by 2x2 averaging (edge-clamped).
    let (ch, cw) = (h.div_ceil(2), w.div_ceil(2));
    let subsample = |plane: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; ch * cw];
        for y in 0..ch {
            for x in 0..cw {
                let (y0, x0) = (2 * y, 2 * x);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                out[y * cw + x] = (plane[y0 * w + x0] + plane[y0 * w + x1] + plane[y1 * w + x0] + plane[y1 * w + x1]) / 4.0;
            }
        }
        out
    };
    let lum = code_plane(&lum, h, w, &luma_q);
    let cb = code_plane(&subsample(&cb), ch, cw, &chroma_q);
    let cr = code_plane(&subsample(&cr), ch, cw, &chroma_q);

    let mut data = Vec::with_capacity(n * 3);
    for y in 0..h {
        for x in 0..w {
            let l = lum[y * w + x];
            let b = cb[(y / 2) * cw + x / 2] - 128.0;
            let r = cr[(y / 2) * cw + x / 2] - 128.0;
            let rgb = [l + 1.402 * r, l - 0.344_136 * b - 0.714_136 * r, l + 1.772 * b];
            data.extend(rgb.map(|v| (v.round().clamp(0.0, 255.0) / 255.0) as f32));
        }
    }
    Image::new(h, w, 3, data).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::mse;
    use crate::sample::natural_image;

    #[test]
    fn dct_pair_is_inverse() {
        let block: [f64; 64] = std::array::from_fn(|i| ((i * 37) % 255) as f64 - 128.0);
        let back = idct(&fdct(&block));
        for (a, b) in block.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        // A constant block carries all of its energy in the DC term.
        let flat = fdct(&[10.0; 64]);
        assert!((flat[0] - 80.0).abs() < 1e-9);
        assert!(flat[1..].iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn quality_mapping() {
        let (l100, c100) = quant_tables(100);
        assert!(l100.iter().chain(c100.iter()).all(|&q| q == 1));
        let (l50, _) = quant_tables(50);
        assert_eq!(l50, LUMA_BASE_TABLE);
        let (l30, _) = quant_tables(30);
        // scale = 5000/30 = 166: (16*166 + 50)/100 = 27
        assert_eq!(l30[0], 27);
        let (l4, c4) = quant_tables(4);
        assert_eq!(l4[0], 200);
        assert_eq!(c4[63], 1238);
        let (l1, _) = quant_tables(1);
        assert_eq!(l1[0], 800);
    }

    #[test]
    fn quality_100_is_nearly_lossless() {
        let img = natural_image(64, 64, 0);
        let out = jpeg_roundtrip(&img, 100);
        let worst = img
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 0.02, "max error {worst}");
        let gray = img.to_grayscale();
        let worst_gray = gray
            .data()
            .iter()
            .zip(jpeg_roundtrip(&gray, 100).data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        // Input quantization (half a level) plus one level of DCT rounding.
        assert!(worst_gray <= 2.0 / 255.0, "gray max error {worst_gray}");
    }

    #[test]
    fn constant_images_stay_constant() {
        for q in [100u8, 50, 30, 15, 8, 4, 1] {
            for (c, v) in [(1usize, 0.37f32), (3, 0.81)] {
                let img = Image::filled(21, 30, c, v).unwrap();
                let out = jpeg_roundtrip(&img, q);
                let (lo, hi) = out.min_max();
                assert!(hi - lo <= 1.0 / 255.0 + 1e-6, "q={q} c={c}: spread {}", hi - lo);
                if q == 100 && c == 1 {
                    assert!((out.get(0, 0, 0) - v).abs() <= 1.0 / 255.0 + 1e-6);
                }
            }
        }
    }

    #[test]
    fn error_grows_along_quality_ladder() {
        let img = natural_image(64, 64, 0);
        let errs: Vec<f64> = [30u8, 15, 8, 4]
            .iter()
            .map(|&q| mse(&img, &jpeg_roundtrip(&img, q)).unwrap())
            .collect();
        assert!(errs.windows(2).all(|w| w[0] < w[1]), "{errs:?}");
    }

    #[test]
    fn odd_sizes_are_handled() {
        let img = natural_image(13, 9, 2);
        let out = jpeg_roundtrip(&img, 20);
        assert_eq!(out.shape(), (13, 9, 3));
    }
}
