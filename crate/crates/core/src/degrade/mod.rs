//! Quality degradation models: additive Gaussian noise, multiplicative speckle,
//! salt-and-pepper impulses and a simulated baseline JPEG round trip, each
//! with a four-step severity ladder.

mod jpeg;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::image::Image;
use crate::kv::{self, KvError};
use crate::rng::{rng_from_seed, Rng};

pub use jpeg::{jpeg_roundtrip, quant_tables, LUMA_BASE_TABLE, CHROMA_BASE_TABLE};

#[derive(Debug, Error, PartialEq)]
pub enum DegradeError {
    #[error("unknown distortion kind {0:?}")]
    UnknownKind(String),
    #[error("intensity must be in 1..=4, got {0}")]
    Intensity(u8),
    #[error("invalid parameter {value} for {kind}")]
    Parameter { kind: DistortionKind, value: f64 },
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistortionKind {
    None,
    Gaussian,
    Speckle,
    SaltPepper,
    Jpeg,
}

impl DistortionKind {
    /// The four distortions evaluated in the experiment grid, in report order.
    pub const NOISY: [DistortionKind; 4] = [
        DistortionKind::Gaussian,
        DistortionKind::Speckle,
        DistortionKind::SaltPepper,
        DistortionKind::Jpeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::None => "none",
            DistortionKind::Gaussian => "gaussian",
            DistortionKind::Speckle => "speckle",
            DistortionKind::SaltPepper => "salt_pepper",
            DistortionKind::Jpeg => "jpeg",
        }
    }

    /// Key under which an explicit parameter override is written.
    pub fn param_key(self) -> Option<&'static str> {
        match self {
            DistortionKind::None => None,
            DistortionKind::Gaussian | DistortionKind::Speckle => Some("sigma"),
            DistortionKind::SaltPepper => Some("p"),
            DistortionKind::Jpeg => Some("quality"),
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = DegradeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" | "clean" => DistortionKind::None,
            "gaussian" => DistortionKind::Gaussian,
            "speckle" => DistortionKind::Speckle,
            "salt_pepper" | "salt-pepper" | "impulse" => DistortionKind::SaltPepper,
            "jpeg" => DistortionKind::Jpeg,
            other => return Err(DegradeError::UnknownKind(other.to_string())),
        })
    }
}

/// Severity presets for intensities 1..=4. Recalibrate here and nowhere else.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Presets {
    pub gaussian_sigma: [f64; 4],
    pub speckle_sigma: [f64; 4],
    pub salt_pepper_p: [f64; 4],
    pub jpeg_quality: [u8; 4],
}

pub const PRESETS: Presets = Presets {
    gaussian_sigma: [0.05, 0.10, 0.20, 0.30],
    speckle_sigma: [0.10, 0.20, 0.40, 0.60],
    salt_pepper_p: [0.02, 0.05, 0.10, 0.20],
    jpeg_quality: [30, 15, 8, 4],
};

impl Presets {
    /// Preset parameter for `kind` at `intensity` (1..=4).
    pub fn parameter(&self, kind: DistortionKind, intensity: u8) -> Option<f64> {
        let i = usize::from(intensity.checked_sub(1)?);
        if i >= 4 {
            return None;
        }
        match kind {
            DistortionKind::None => None,
            DistortionKind::Gaussian => Some(self.gaussian_sigma[i]),
            DistortionKind::Speckle => Some(self.speckle_sigma[i]),
            DistortionKind::SaltPepper => Some(self.salt_pepper_p[i]),
            DistortionKind::Jpeg => Some(f64::from(self.jpeg_quality[i])),
        }
    }

    /// Human-readable table for `--help` output.
    pub fn describe(&self) -> String {
        let row = |name: &str, v: [String; 4]| format!("  {name:<12} {}\n", v.join("  "));
        let f = |a: [f64; 4]| a.map(|x| format!("{x:<5}"));
        let mut s = String::from("  kind         int.1  int.2  int.3  int.4\n");
        s += &row("gaussian σ", f(self.gaussian_sigma));
        s += &row("speckle σ", f(self.speckle_sigma));
        s += &row("salt_pepper p", f(self.salt_pepper_p));
        s += &row("jpeg quality", self.jpeg_quality.map(|q| format!("{q:<5}")));
        s
    }
}

/// A distortion kind with its severity and the seed of its noise stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// Preset index 1..=4; ignored for `None` or when `param` is set.
    pub intensity: u8,
    /// Explicit sigma / p / quality, overriding the preset.
    pub param: Option<f64>,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn none() -> Self {
        Self {
            kind: DistortionKind::None,
            intensity: 0,
            param: None,
            seed: 0,
        }
    }

    pub fn preset(kind: DistortionKind, intensity: u8, seed: u64) -> Self {
        Self {
            kind,
            intensity,
            param: None,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Resolved parameter value, validated for the kind.
    pub fn resolve(&self) -> Result<Option<f64>, DegradeError> {
        if self.kind == DistortionKind::None {
            return Ok(None);
        }
        let value = match self.param {
            Some(v) => v,
            None => PRESETS
                .parameter(self.kind, self.intensity)
                .ok_or(DegradeError::Intensity(self.intensity))?,
        };
        let ok = match self.kind {
            DistortionKind::Gaussian | DistortionKind::Speckle => value >= 0.0 && value.is_finite(),
            DistortionKind::SaltPepper => (0.0..=1.0).contains(&value),
            DistortionKind::Jpeg => (1.0..=100.0).contains(&value) && value.fract() == 0.0,
            DistortionKind::None => true,
        };
        if !ok {
            return Err(DegradeError::Parameter {
                kind: self.kind,
                value,
            });
        }
        Ok(Some(value))
    }

    /// Parses `kind=... intensity=... seed=... [sigma|p|quality=...]`.
    pub fn parse(text: &str) -> Result<Self, DegradeError> {
        let mut spec = DistortionSpec::none();
        let mut kind_seen = false;
        let mut param: Option<(String, f64)> = None;
        for (k, v) in kv::parse_pairs(text)? {
            match k.as_str() {
                "kind" => {
                    spec.kind = v.parse()?;
                    kind_seen = true;
                }
                "intensity" => spec.intensity = kv::parse_value(&k, &v)?,
                "seed" => spec.seed = kv::parse_value(&k, &v)?,
                "sigma" | "p" | "quality" => param = Some((k.clone(), kv::parse_value(&k, &v)?)),
                _ => return Err(KvError::UnknownKey(k).into()),
            }
        }
        if !kind_seen {
            return Err(KvError::MissingKey("kind").into());
        }
        if let Some((key, value)) = param {
            if spec.kind.param_key() != Some(key.as_str()) {
                return Err(KvError::UnknownKey(key).into());
            }
            spec.param = Some(value);
        }
        spec.resolve()?;
        Ok(spec)
    }
}

impl fmt::Display for DistortionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={} intensity={} seed={}", self.kind, self.intensity, self.seed)?;
        if let (Some(v), Some(key)) = (self.param, self.kind.param_key()) {
            write!(f, " {key}={v}")?;
        }
        Ok(())
    }
}

/// `clamp01(in + n)`, `n ~ N(0, sigma²)` drawn per sample.
pub fn add_gaussian(image: &Image, sigma: f64, rng: &mut Rng) -> Image {
    let sigma = sigma as f32;
    let mut data = image.data().to_vec();
    for v in &mut data {
        let n: f32 = StandardNormal.sample(rng);
        *v += sigma * n;
    }
    rebuild(image, data)
}

/// `clamp01(in * (1 + n))`, `n ~ N(0, sigma²)` drawn per sample.
pub fn add_speckle(image: &Image, sigma: f64, rng: &mut Rng) -> Image {
    let sigma = sigma as f32;
    let mut data = image.data().to_vec();
    for v in &mut data {
        let n: f32 = StandardNormal.sample(rng);
        *v *= 1.0 + sigma * n;
    }
    rebuild(image, data)
}

/// Each pixel is struck with probability `p`; a struck pixel has all of its
/// channels set to 0 or 1 with equal probability.
pub fn add_salt_pepper(image: &Image, p: f64, rng: &mut Rng) -> Image {
    let channels = image.channels();
    let mut data = image.data().to_vec();
    for px in data.chunks_exact_mut(channels) {
        // Both draws happen for every pixel, so one seed gives nested hit
        // sets across probabilities.
        let hit = rng.random::<f64>() < p;
        let salt = rng.random::<bool>();
        if hit {
            px.fill(if salt { 1.0 } else { 0.0 });
        }
    }
    rebuild(image, data)
}

fn rebuild(image: &Image, data: Vec<f32>) -> Image {
    let (h, w, c) = image.shape();
    Image::new(h, w, c, data).expect("shape preserved")
}

/// Applies `spec` with a generator seeded from `spec.seed`.
pub fn apply_distortion(image: &Image, spec: &DistortionSpec) -> Result<Image, DegradeError> {
    let Some(param) = spec.resolve()? else {
        return Ok(image.clone());
    };
    let mut rng = rng_from_seed(spec.seed);
    Ok(match spec.kind {
        DistortionKind::None => unreachable!("resolved to no parameter"),
        DistortionKind::Gaussian => add_gaussian(image, param, &mut rng),
        DistortionKind::Speckle => add_speckle(image, param, &mut rng),
        DistortionKind::SaltPepper => add_salt_pepper(image, param, &mut rng),
        DistortionKind::Jpeg => jpeg_roundtrip(image, param as u8),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::mse;
    use crate::rng::rng_from_seed;

    fn const_image(v: f32) -> Image {
        Image::filled(256, 256, 1, v).unwrap()
    }

    fn moments(a: &Image, b: &Image) -> (f64, f64) {
        let d: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x as f64 - y as f64)
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn zero_noise_is_identity() {
        let img = crate::sample::natural_image(32, 32, 0);
        assert_eq!(add_gaussian(&img, 0.0, &mut rng_from_seed(1)), img);
        assert_eq!(add_speckle(&img, 0.0, &mut rng_from_seed(1)), img);
        assert_eq!(add_salt_pepper(&img, 0.0, &mut rng_from_seed(1)), img);
    }

    #[test]
    fn gaussian_sample_moments() {
        let clean = const_image(0.5);
        let noisy = add_gaussian(&clean, 0.1, &mut rng_from_seed(3));
        let (mean, std) = moments(&noisy, &clean);
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((std - 0.1).abs() < 0.005, "std {std}");
    }

    #[test]
    fn speckle_scales_with_intensity() {
        let zero = const_image(0.0);
        assert_eq!(add_speckle(&zero, 0.6, &mut rng_from_seed(5)), zero);
        let clean = const_image(0.5);
        let noisy = add_speckle(&clean, 0.2, &mut rng_from_seed(5));
        let (_, std) = moments(&noisy, &clean);
        assert!((std - 0.1).abs() < 0.01, "std {std}");
    }

    #[test]
    fn salt_pepper_fraction_and_full_corruption() {
        let clean = const_image(0.5);
        let noisy = add_salt_pepper(&clean, 0.05, &mut rng_from_seed(9));
        let hits = noisy.data().iter().filter(|&&v| v != 0.5).count() as f64;
        let frac = hits / noisy.data().len() as f64;
        assert!((0.04..=0.06).contains(&frac), "{frac}");
        let all = add_salt_pepper(&clean, 1.0, &mut rng_from_seed(9));
        assert!(all.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn salt_pepper_strikes_whole_pixels() {
        let clean = Image::filled(64, 64, 3, 0.5).unwrap();
        let noisy = add_salt_pepper(&clean, 0.3, &mut rng_from_seed(2));
        for px in noisy.data().chunks_exact(3) {
            assert!(px[0] == px[1] && px[1] == px[2]);
        }
    }

    #[test]
    fn one_seed_nests_impulse_hits() {
        let clean = Image::filled(32, 32, 1, 0.5).unwrap();
        let mild = add_salt_pepper(&clean, 0.05, &mut rng_from_seed(4));
        let heavy = add_salt_pepper(&clean, 0.2, &mut rng_from_seed(4));
        for (m, h) in mild.data().iter().zip(heavy.data()) {
            if *m != 0.5 {
                assert_eq!(m, h);
            }
        }
    }

    #[test]
    fn apply_dispatches_presets() {
        let clean = const_image(0.5);
        assert_eq!(apply_distortion(&clean, &DistortionSpec::none()).unwrap(), clean);
        let spec = DistortionSpec::preset(DistortionKind::SaltPepper, 2, 11);
        let a = apply_distortion(&clean, &spec).unwrap();
        let b = add_salt_pepper(&clean, 0.05, &mut rng_from_seed(11));
        assert_eq!(a, b);
        assert_eq!(a, apply_distortion(&clean, &spec).unwrap());
        let bad = DistortionSpec::preset(DistortionKind::Gaussian, 5, 0);
        assert_eq!(apply_distortion(&clean, &bad), Err(DegradeError::Intensity(5)));
    }

    #[test]
    fn explicit_parameter_overrides_preset() {
        let clean = const_image(0.5);
        let spec = DistortionSpec {
            param: Some(0.0),
            ..DistortionSpec::preset(DistortionKind::Gaussian, 4, 1)
        };
        assert_eq!(apply_distortion(&clean, &spec).unwrap(), clean);
    }

    #[test]
    fn spec_text_roundtrip() {
        let spec = DistortionSpec::parse("kind=speckle intensity=3 seed=42").unwrap();
        assert_eq!(spec, DistortionSpec::preset(DistortionKind::Speckle, 3, 42));
        assert_eq!(DistortionSpec::parse(&spec.to_string()).unwrap(), spec);
        let q = DistortionSpec::parse("kind=jpeg quality=50").unwrap();
        assert_eq!(q.param, Some(50.0));
        assert_eq!(DistortionSpec::parse(&q.to_string()).unwrap(), q);
        assert!(matches!(
            DistortionSpec::parse("kind=blur"),
            Err(DegradeError::UnknownKind(_))
        ));
        assert!(DistortionSpec::parse("kind=jpeg sigma=0.1").is_err());
        assert!(DistortionSpec::parse("intensity=2").is_err());
        assert!(DistortionSpec::parse("kind=salt_pepper p=1.5").is_err());
    }

    #[test]
    fn severity_is_monotone_on_sample_images() {
        // Mean MSE against the clean image over 50 images, strictly increasing 1 -> 4.
        let images: Vec<Image> = (0..50)
            .map(|i| crate::sample::natural_image(32, 32, i))
            .collect();
        for kind in DistortionKind::NOISY {
            let means: Vec<f64> = (1..=4)
                .map(|level| {
                    images
                        .iter()
                        .enumerate()
                        .map(|(i, img)| {
                            let spec = DistortionSpec::preset(kind, level, i as u64);
                            mse(img, &apply_distortion(img, &spec).unwrap()).unwrap()
                        })
                        .sum::<f64>()
                        / images.len() as f64
                })
                .collect();
            assert!(means.windows(2).all(|w| w[0] < w[1]), "{kind}: {means:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn outputs_stay_in_unit_range(seed in 0u64..1000, level in 1u8..=4, k in 0usize..4) {
            let img = crate::sample::natural_image(16, 16, seed);
            let spec = DistortionSpec::preset(DistortionKind::NOISY[k], level, seed);
            let out = apply_distortion(&img, &spec).unwrap();
            proptest::prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            proptest::prop_assert_eq!(out, apply_distortion(&img, &spec).unwrap());
        }
    }
}
