//! Experiment and training configuration with flat `key=value` I/O.
//!
//! List values (`kinds`, `intensities`, `seeds`) are joined with `+`, since
//! commas and whitespace already separate pairs.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::PipelineError;
use crate::degrade::{DistortionKind, DistortionSpec};
use crate::denoise::DenoiserSpec;
use crate::kv::{self, KvError};
use crate::nn::Merge;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One extractor trained on clean images; the reference model.
    SingleBaseline,
    /// One extractor fine-tuned on preprocessed images and fed preprocessed
    /// inputs at test time.
    SinglePreprocessed,
    #[default]
    Dual,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SingleBaseline, Variant::SinglePreprocessed, Variant::Dual];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SingleBaseline => "single_baseline",
            Variant::SinglePreprocessed => "single_preprocessed",
            Variant::Dual => "dual",
        }
    }

    /// Stable numeric code stored in checkpoints.
    pub fn code(self) -> f32 {
        match self {
            Variant::SingleBaseline => 0.0,
            Variant::SinglePreprocessed => 1.0,
            Variant::Dual => 2.0,
        }
    }

    pub fn from_code(code: f32) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.code() == code)
    }

    pub fn uses_denoiser(self) -> bool {
        self != Variant::SingleBaseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_baseline" | "baseline" => Ok(Variant::SingleBaseline),
            "single_preprocessed" | "preprocessed" => Ok(Variant::SinglePreprocessed),
            "dual" => Ok(Variant::Dual),
            _ => Err(PipelineError::Config(format!(
                "unknown variant '{s}' (single_baseline, single_preprocessed, dual)"
            ))),
        }
    }
}

/// Order in which the dual model's components are trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Every component from the start.
    Joint,
    /// Augmented channel first, then the head.
    AugmentedFirst,
    /// Head first, then the augmented channel.
    #[default]
    HeadFirst,
}

impl Strategy {
    pub fn number(self) -> u8 {
        match self {
            Strategy::Joint => 1,
            Strategy::AugmentedFirst => 2,
            Strategy::HeadFirst => 3,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Strategy {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Strategy::Joint),
            "2" => Ok(Strategy::AugmentedFirst),
            "3" => Ok(Strategy::HeadFirst),
            _ => Err(PipelineError::Config(format!("strategy must be 1, 2 or 3, got '{s}'"))),
        }
    }
}

/// How the dual model's head starts out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum HeadInit {
    /// Fresh He-normal weights.
    Random,
    /// Half the pretrained single-channel head on each channel.
    #[default]
    Pretrained,
}

impl fmt::Display for HeadInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadInit::Random => "random",
            HeadInit::Pretrained => "pretrained",
        })
    }
}

impl FromStr for HeadInit {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(HeadInit::Random),
            "pretrained" => Ok(HeadInit::Pretrained),
            _ => Err(PipelineError::Config(format!("head_init must be random or pretrained, got '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Epochs of the head-only phase (strategies 2 and 3).
    pub head_epochs: usize,
    /// Hard cap on fine-tuning epochs.
    pub finetune_epochs: usize,
    pub lr0: f64,
    pub lr_decay_divisor: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fine-tuning stops after this many epochs without a validation gain of
    /// at least `min_delta` (accuracy fraction).
    pub patience: usize,
    pub min_delta: f64,
    /// Whether strategy 1 also updates the original channel.
    pub joint_trains_original: bool,
    pub head_init: HeadInit,
    /// Schedule of the clean single-channel run that provides the baseline
    /// and the pretrained body.
    pub pretrain_epochs: usize,
    pub pretrain_lr0: f64,
    pub pretrain_decay_divisor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::HeadFirst,
            head_epochs: 2,
            finetune_epochs: 20,
            lr0: 0.009,
            lr_decay_divisor: 9.0,
            batch_size: 32,
            seed: 0,
            patience: 3,
            min_delta: 0.005,
            joint_trains_original: true,
            head_init: HeadInit::Pretrained,
            pretrain_epochs: 14,
            pretrain_lr0: 0.2,
            pretrain_decay_divisor: 1.4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: &str| Err(PipelineError::Config(msg.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || !(self.pretrain_lr0 > 0.0 && self.pretrain_lr0.is_finite()) {
            return bad("learning rates must be positive");
        }
        if !(self.lr_decay_divisor > 0.0) || !(self.pretrain_decay_divisor > 0.0) {
            return bad("decay divisors must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub variant: Variant,
    pub merge: Merge,
    pub denoiser: DenoiserSpec,
    pub train: TrainConfig,
    /// Distorted cells; the clean cell is always evaluated as well.
    pub kinds: Vec<DistortionKind>,
    pub intensities: Vec<u8>,
    /// Root of the per-image distortion seeds.
    pub grid_seed: u64,
    /// Repetitions; each overrides `train.seed`.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            variant: Variant::Dual,
            merge: Merge::Concat,
            denoiser: DenoiserSpec::default(),
            train: TrainConfig::default(),
            kinds: DistortionKind::NOISY.to_vec(),
            intensities: vec![1, 2, 3, 4],
            grid_seed: 1234,
            seeds: vec![0, 1, 2],
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join("+")
}

fn split_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, KvError> {
    value.split('+').filter(|s| !s.is_empty()).map(|s| kv::parse_value(key, s)).collect()
}

impl ExperimentConfig {
    /// Every recognized key with its default, one per line.
    pub fn keys_help() -> String {
        Self::default().to_kv_text()
    }

    /// The distorted grid cells in report order, seeded with `grid_seed`.
    pub fn grid(&self) -> Vec<DistortionSpec> {
        let mut out = Vec::new();
        for &kind in &self.kinds {
            for &intensity in &self.intensities {
                out.push(DistortionSpec::preset(kind, intensity, self.grid_seed));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.train.validate()?;
        self.denoiser.validate()?;
        let mut seen = HashSet::new();
        for &kind in &self.kinds {
            if kind == DistortionKind::None {
                return Err(PipelineError::Config("'none' is always evaluated; leave it out of kinds".into()));
            }
            for &i in &self.intensities {
                if !(1..=4).contains(&i) {
                    return Err(PipelineError::Config(format!("intensity {i} outside 1..=4")));
                }
                if !seen.insert((kind, i)) {
                    return Err(PipelineError::Config(format!("duplicate grid cell {kind} intensity {i}")));
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(PipelineError::Config("seeds must not be empty".into()));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(PipelineError::Config("seeds must be distinct".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "variant" => self.variant = value.parse()?,
            "merge" => {
                self.merge = value
                    .parse()
                    .map_err(|_| PipelineError::Config(format!("merge must be concat or sum, got '{value}'")))?
            }
            "denoiser" => self.denoiser = DenoiserSpec::default_for(value)?,
            "strategy" => t.strategy = value.parse()?,
            "head_epochs" => t.head_epochs = kv::parse_value(key, value)?,
            "finetune_epochs" => t.finetune_epochs = kv::parse_value(key, value)?,
            "lr0" => t.lr0 = kv::parse_value(key, value)?,
            "lr_decay_divisor" => t.lr_decay_divisor = kv::parse_value(key, value)?,
            "batch_size" => t.batch_size = kv::parse_value(key, value)?,
            "seed" => t.seed = kv::parse_value(key, value)?,
            "patience" => t.patience = kv::parse_value(key, value)?,
            "min_delta" => t.min_delta = kv::parse_value(key, value)?,
            "joint_trains_original" => t.joint_trains_original = kv::parse_value(key, value)?,
            "head_init" => t.head_init = value.parse()?,
            "pretrain_epochs" => t.pretrain_epochs = kv::parse_value(key, value)?,
            "pretrain_lr0" => t.pretrain_lr0 = kv::parse_value(key, value)?,
            "pretrain_decay_divisor" => t.pretrain_decay_divisor = kv::parse_value(key, value)?,
            "kinds" => {
                self.kinds = value
                    .split('+')
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_, _>>()?
            }
            "intensities" => self.intensities = split_list(key, value)?,
            "grid_seed" => self.grid_seed = kv::parse_value(key, value)?,
            "seeds" => self.seeds = split_list(key, value)?,
            _ => match key.strip_prefix("denoiser.") {
                Some(param) => self.denoiser.set(param, value)?,
                None => return Err(KvError::UnknownKey(key.to_string()).into()),
            },
        }
        Ok(())
    }

    /// Applies a config file's pairs on top of `self`. `denoiser` is applied
    /// before its `denoiser.*` parameters regardless of line order.
    pub fn apply_text(&mut self, text: &str) -> Result<(), PipelineError> {
        let pairs = kv::parse_pairs(text)?;
        let (method, rest): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(k, _)| k == "denoiser");
        for (k, v) in method.iter().chain(&rest) {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration, one `key=value` per line; parses back to an
    /// equal config.
    pub fn to_kv_text(&self) -> String {
        let t = &self.train;
        let mut lines = vec![
            format!("dataset={}", self.dataset.display()),
            format!("variant={}", self.variant),
            format!("merge={}", self.merge),
            format!("denoiser={}", self.denoiser.method_name()),
        ];
        // Display gives `method=... k=v ...`; re-key the parameters.
        for pair in self.denoiser.to_string().split_whitespace().skip(1) {
            lines.push(format!("denoiser.{pair}"));
        }
        lines.extend([
            format!("strategy={}", t.strategy),
            format!("head_epochs={}", t.head_epochs),
            format!("finetune_epochs={}", t.finetune_epochs),
            format!("lr0={}", t.lr0),
            format!("lr_decay_divisor={}", t.lr_decay_divisor),
            format!("batch_size={}", t.batch_size),
            format!("seed={}", t.seed),
            format!("patience={}", t.patience),
            format!("min_delta={}", t.min_delta),
            format!("joint_trains_original={}", t.joint_trains_original),
            format!("head_init={}", t.head_init),
            format!("pretrain_epochs={}", t.pretrain_epochs),
            format!("pretrain_lr0={}", t.pretrain_lr0),
            format!("pretrain_decay_divisor={}", t.pretrain_decay_divisor),
            format!("kinds={}", join(&self.kinds)),
            format!("intensities={}", join(&self.intensities)),
            format!("grid_seed={}", self.grid_seed),
            format!("seeds={}", join(&self.seeds)),
        ]);
        lines.join("\n") + "\n"
    }

    /// Short model label used in reports, e.g. `dual_concat_bilateral`.
    pub fn model_label(&self) -> String {
        match self.variant {
            Variant::SingleBaseline => "baseline".into(),
            Variant::SinglePreprocessed => format!("preprocessed_{}", self.denoiser.method_name()),
            Variant::Dual => format!("dual_{}_{}", self.merge, self.denoiser.method_name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::BilateralParams;

    #[test]
    fn defaults_match_documented_values() {
        let t = TrainConfig::default();
        assert_eq!((t.head_epochs, t.finetune_epochs, t.batch_size, t.patience), (2, 20, 32, 3));
        assert_eq!((t.lr0, t.lr_decay_divisor), (0.009, 9.0));
        assert_eq!(t.strategy, Strategy::HeadFirst);
        let e = ExperimentConfig::default();
        assert_eq!(e.grid().len(), 16);
        assert_eq!(e.denoiser, DenoiserSpec::Bilateral(BilateralParams::default()));
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("variant=single_preprocessed\ndenoiser.h=0.2 # overrides\ndenoiser=nlm\nseeds=4+5\nkinds=jpeg")
            .unwrap();
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.kinds, vec![DistortionKind::Jpeg]);
        match cfg.denoiser {
            DenoiserSpec::Nlm(p) => assert_eq!(p.h, 0.2),
            other => panic!("{other:?}"),
        }
        let back = ExperimentConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("unknown", "1").is_err());
        assert!(cfg.set("strategy", "4").is_err());
        assert!(cfg.set("denoiser.h", "0.1").is_err(), "bilateral has no h");
        assert!(ExperimentConfig::from_kv_text("intensities=1+1").is_err());
        assert!(ExperimentConfig::from_kv_text("intensities=5").is_err());
        assert!(ExperimentConfig::from_kv_text("lr0=0").is_err());
        assert!(ExperimentConfig::from_kv_text("kinds=none").is_err());
    }

    #[test]
    fn variant_codes_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::from_code(v.code()), Some(v));
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }
}
