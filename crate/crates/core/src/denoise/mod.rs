//! Edge-preserving denoisers used to produce the outline-enhanced input of the
//! augmented channel: non-local means (1), bilateral filtering (2) and
//! Chambolle total-variation denoising (3).
//!
//! Every method works on each channel plane independently and addresses
//! pixels outside the image by clamping to the nearest edge.

mod bilateral;
mod nlm;
mod tv;

use std::fmt;

use thiserror::Error;

use crate::image::Image;
use crate::kv::{self, KvError};

pub use bilateral::bilateral_denoise;
pub use nlm::{nlm_denoise, nlm_denoise_with_noise};
pub use tv::{tv_denoise, tv_energy, TvSolver};

#[derive(Debug, Error, PartialEq)]
pub enum DenoiseError {
    #[error("unknown denoising method {0:?}")]
    UnknownMethod(String),
    #[error("invalid denoiser parameter: {0}")]
    Parameter(&'static str),
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NlmParams {
    /// Filter strength; weights decay as `exp(-d² / h²)`.
    pub h: f64,
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Optional noise standard deviation subtracted from patch distances.
    pub noise_sigma: f64,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self {
            h: 0.1,
            patch_radius: 1,
            search_radius: 5,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilateralParams {
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub radius: usize,
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self {
            sigma_s: 3.0,
            sigma_r: 0.1,
            radius: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvParams {
    /// Regularization weight λ.
    pub weight: f64,
    /// Dual step; at most 1/8 for guaranteed convergence.
    pub tau: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for TvParams {
    fn default() -> Self {
        Self {
            weight: 0.1,
            tau: 0.125,
            max_iters: 200,
            tol: 1e-4,
        }
    }
}

/// Preprocessing method with its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DenoiserSpec {
    Nlm(NlmParams),
    Bilateral(BilateralParams),
    Tv(TvParams),
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec::Bilateral(BilateralParams::default())
    }
}

impl DenoiserSpec {
    pub fn method_name(&self) -> &'static str {
        match self {
            DenoiserSpec::Nlm(_) => "nlm",
            DenoiserSpec::Bilateral(_) => "bilateral",
            DenoiserSpec::Tv(_) => "tv",
        }
    }

    /// Default parameters for a method given by name or by its number 1/2/3.
    pub fn default_for(method: &str) -> Result<Self, DenoiseError> {
        Ok(match method {
            "nlm" | "1" => DenoiserSpec::Nlm(NlmParams::default()),
            "bilateral" | "2" => DenoiserSpec::Bilateral(BilateralParams::default()),
            "tv" | "3" => DenoiserSpec::Tv(TvParams::default()),
            other => return Err(DenoiseError::UnknownMethod(other.to_string())),
        })
    }

    pub fn validate(&self) -> Result<(), DenoiseError> {
        let check = |ok: bool, msg| if ok { Ok(()) } else { Err(DenoiseError::Parameter(msg)) };
        match self {
            DenoiserSpec::Nlm(p) => {
                check(p.h > 0.0, "nlm h must be positive")?;
                check(p.patch_radius >= 1 && p.search_radius >= 1, "nlm radii must be >= 1")?;
                check(p.noise_sigma >= 0.0, "nlm noise_sigma must be non-negative")
            }
            DenoiserSpec::Bilateral(p) => {
                check(p.sigma_s > 0.0 && p.sigma_r > 0.0, "bilateral sigmas must be positive")?;
                check(p.radius >= 1, "bilateral radius must be >= 1")
            }
            DenoiserSpec::Tv(p) => {
                check(p.weight >= 0.0, "tv weight must be non-negative")?;
                check(p.tau > 0.0 && p.tau <= 0.125, "tv tau must lie in (0, 0.125]")?;
                check(p.tol >= 0.0, "tv tol must be non-negative")
            }
        }
    }

    /// Parses `method=<nlm|bilateral|tv>` followed by optional parameter
    /// overrides; unspecified parameters keep their defaults.
    pub fn parse(text: &str) -> Result<Self, DenoiseError> {
        let pairs = kv::parse_pairs(text)?;
        let method = pairs
            .iter()
            .find(|(k, _)| k == "method")
            .map(|(_, v)| v.as_str())
            .ok_or(KvError::MissingKey("method"))?;
        let mut spec = Self::default_for(method)?;
        for (k, v) in pairs.iter().filter(|(k, _)| k != "method") {
            spec.set(k, v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Overrides one parameter of the active method by key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), DenoiseError> {
        match (self, key) {
            (DenoiserSpec::Nlm(p), "h") => p.h = kv::parse_value(key, value)?,
            (DenoiserSpec::Nlm(p), "patch_radius") => p.patch_radius = kv::parse_value(key, value)?,
            (DenoiserSpec::Nlm(p), "search_radius") => p.search_radius = kv::parse_value(key, value)?,
            (DenoiserSpec::Nlm(p), "noise_sigma") => p.noise_sigma = kv::parse_value(key, value)?,
            (DenoiserSpec::Bilateral(p), "sigma_s") => p.sigma_s = kv::parse_value(key, value)?,
            (DenoiserSpec::Bilateral(p), "sigma_r") => p.sigma_r = kv::parse_value(key, value)?,
            (DenoiserSpec::Bilateral(p), "radius") => p.radius = kv::parse_value(key, value)?,
            (DenoiserSpec::Tv(p), "weight") => p.weight = kv::parse_value(key, value)?,
            (DenoiserSpec::Tv(p), "tau") => p.tau = kv::parse_value(key, value)?,
            (DenoiserSpec::Tv(p), "max_iters") => p.max_iters = kv::parse_value(key, value)?,
            (DenoiserSpec::Tv(p), "tol") => p.tol = kv::parse_value(key, value)?,
            _ => return Err(KvError::UnknownKey(key.to_string()).into()),
        }
        Ok(())
    }
}

impl fmt::Display for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserSpec::Nlm(p) => write!(
                f,
                "method=nlm h={} patch_radius={} search_radius={} noise_sigma={}",
                p.h, p.patch_radius, p.search_radius, p.noise_sigma
            ),
            DenoiserSpec::Bilateral(p) => write!(
                f,
                "method=bilateral sigma_s={} sigma_r={} radius={}",
                p.sigma_s, p.sigma_r, p.radius
            ),
            DenoiserSpec::Tv(p) => write!(
                f,
                "method=tv weight={} tau={} max_iters={} tol={}",
                p.weight, p.tau, p.max_iters, p.tol
            ),
        }
    }
}

/// Runs the denoiser described by `spec`.
pub fn preprocess(image: &Image, spec: &DenoiserSpec) -> Result<Image, DenoiseError> {
    spec.validate()?;
    Ok(match spec {
        DenoiserSpec::Nlm(p) => nlm_denoise_with_noise(image, p.h, p.patch_radius, p.search_radius, p.noise_sigma),
        DenoiserSpec::Bilateral(p) => bilateral_denoise(image, p.sigma_s, p.sigma_r, p.radius),
        DenoiserSpec::Tv(p) => tv_denoise(image, p.weight, p.tau, p.max_iters, p.tol),
    })
}

/// Edge-clamped copy of a plane with `pad` extra pixels on every side.
pub(crate) fn pad_plane(plane: &[f32], h: usize, w: usize, pad: usize) -> (Vec<f64>, usize) {
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let mut out = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        let sy = (y as isize - pad as isize).clamp(0, h as isize - 1) as usize;
        for x in 0..pw {
            let sx = (x as isize - pad as isize).clamp(0, w as isize - 1) as usize;
            out.push(f64::from(plane[sy * w + sx]));
        }
    }
    (out, pw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::add_gaussian;
    use crate::image::psnr;
    use crate::rng::rng_from_seed;
    use crate::sample::natural_image;

    fn all_defaults() -> [DenoiserSpec; 3] {
        ["nlm", "bilateral", "tv"].map(|m| DenoiserSpec::default_for(m).unwrap())
    }

    #[test]
    fn constant_images_are_fixed_points() {
        let img = Image::filled(9, 11, 3, 0.42).unwrap();
        for spec in all_defaults() {
            let out = preprocess(&img, &spec).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-6, "{spec}");
            }
        }
    }

    #[test]
    fn dispatch_is_transparent() {
        let img = natural_image(5, 5, 1);
        let spec = DenoiserSpec::Nlm(NlmParams { h: 0.2, patch_radius: 1, search_radius: 2, noise_sigma: 0.0 });
        assert_eq!(preprocess(&img, &spec).unwrap(), nlm_denoise(&img, 0.2, 1, 2));
        let spec = DenoiserSpec::default();
        assert_eq!(preprocess(&img, &spec).unwrap(), bilateral_denoise(&img, 3.0, 0.1, 5));
    }

    #[test]
    fn denoising_improves_psnr() {
        // Statistical check: mean PSNR gain over 20 noisy images for every method.
        for spec in all_defaults() {
            let mut wins = 0;
            for i in 0..20u64 {
                let clean = natural_image(48, 48, i);
                let noisy = add_gaussian(&clean, 0.1, &mut rng_from_seed(i));
                let out = preprocess(&noisy, &spec).unwrap();
                if psnr(&out, &clean).unwrap() > psnr(&noisy, &clean).unwrap() {
                    wins += 1;
                }
            }
            assert_eq!(wins, 20, "{spec}");
        }
    }

    #[test]
    fn spec_parsing() {
        let spec = DenoiserSpec::parse("method=tv weight=0.2").unwrap();
        assert_eq!(spec, DenoiserSpec::Tv(TvParams { weight: 0.2, ..TvParams::default() }));
        assert_eq!(DenoiserSpec::parse(&spec.to_string()).unwrap(), spec);
        for s in all_defaults() {
            assert_eq!(DenoiserSpec::parse(&s.to_string()).unwrap(), s);
        }
        assert!(matches!(DenoiserSpec::parse("method=wavelet"), Err(DenoiseError::UnknownMethod(_))));
        assert!(matches!(DenoiserSpec::parse("method=tv tau=0.2"), Err(DenoiseError::Parameter(_))));
        assert!(matches!(DenoiserSpec::parse("method=tv h=0.2"), Err(DenoiseError::Kv(_))));
        assert!(DenoiserSpec::parse("method=bilateral sigma_r=0").is_err());
        assert!(DenoiserSpec::parse("h=0.1").is_err());
    }

    proptest::proptest! {
        #[test]
        fn convex_combinations_stay_within_input_range(seed in 0u64..500) {
            let img = natural_image(7, 6, seed);
            let (lo, hi) = img.min_max();
            for out in [nlm_denoise(&img, 0.15, 1, 2), bilateral_denoise(&img, 1.5, 0.2, 2)] {
                let (olo, ohi) = out.min_max();
                proptest::prop_assert!(olo >= lo - 1e-6 && ohi <= hi + 1e-6);
            }
            let tv = tv_denoise(&img, 0.1, 0.125, 50, 1e-4);
            proptest::prop_assert!(tv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
