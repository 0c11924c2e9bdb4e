//! Training runs for the three model variants and the dual-model strategies.
//!
//! Every run starts from a clean single-channel model (the baseline), whose
//! extractor is then cloned into the channels of the other variants. Frozen
//! channels have their features computed once per phase.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::{ExperimentConfig, HeadInit, Strategy, TrainConfig, Variant};
use super::dataset::{images_to_tensor, Dataset, Split, DEFAULT_SPLIT_SEED};
use super::PipelineError;
use crate::denoise::{preprocess, DenoiserSpec};
use crate::image::Image;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    cross_entropy_loss, lr_schedule, sgd_step, top_k_hits, Extractor, Merge, Model, Tensor, Trainable, FEATURE_DIM,
};
use crate::rng::{derive_seed, rng_from_seed};

/// Rows per extractor call when computing features without gradients.
const FEATURE_CHUNK: usize = 64;

/// Where a set of training images came from. Training refuses anything
/// but the clean train and validation splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub split: Split,
    pub distorted: bool,
}

/// One clean split as network inputs, plus its preprocessed twin when a
/// denoiser is in play.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub provenance: Provenance,
    pub original: Tensor<f32>,
    pub preprocessed: Option<Tensor<f32>>,
    pub labels: Vec<usize>,
}

/// Clean train and validation inputs for one experiment.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub classes: usize,
    pub train: SplitData,
    pub val: SplitData,
    pub denoiser: Option<DenoiserSpec>,
}

impl TrainData {
    /// Loads the clean train/val splits, preprocessing them with `denoiser`
    /// if given.
    pub fn load(ds: &Dataset, denoiser: Option<&DenoiserSpec>) -> Result<Self, PipelineError> {
        let split = |split: Split| -> Result<SplitData, PipelineError> {
            let images = ds.load_images(split)?;
            Self::split_from_images(split, &images, ds.labels(split), denoiser)
        };
        Ok(Self {
            classes: ds.num_classes(),
            train: split(Split::Train)?,
            val: split(Split::Val)?,
            denoiser: denoiser.copied(),
        })
    }

    pub fn split_from_images(
        split: Split,
        images: &[Image],
        labels: Vec<usize>,
        denoiser: Option<&DenoiserSpec>,
    ) -> Result<SplitData, PipelineError> {
        let refs: Vec<&Image> = images.iter().collect();
        let preprocessed = match denoiser {
            Some(spec) => {
                let pre: Vec<Image> = images.par_iter().map(|img| preprocess(img, spec)).collect::<Result<_, _>>()?;
                Some(images_to_tensor(&pre.iter().collect::<Vec<_>>()))
            }
            None => None,
        };
        Ok(SplitData {
            provenance: Provenance { split, distorted: false },
            original: images_to_tensor(&refs),
            preprocessed,
            labels,
        })
    }

    /// Guard against evaluation data leaking into training.
    fn check_provenance(&self) -> Result<(), PipelineError> {
        let ok = |d: &SplitData, want: Split| d.provenance == Provenance { split: want, distorted: false };
        if !ok(&self.train, Split::Train) || !ok(&self.val, Split::Val) {
            return Err(PipelineError::Config(format!(
                "training must use the clean train/val splits, got {:?} and {:?}",
                self.train.provenance, self.val.provenance
            )));
        }
        Ok(())
    }

    fn preprocessed(&self, d: &SplitData) -> Result<Tensor<f32>, PipelineError> {
        d.preprocessed
            .clone()
            .ok_or_else(|| PipelineError::Config("this variant needs preprocessed training images".into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub phase: &'static str,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Why each phase ended, in order.
    pub stops: Vec<String>,
}

impl TrainLog {
    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_accuracy)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{} epoch {} lr={:.3e} loss={:.4} train_acc={:.4} val_acc={:.4}",
                e.phase, e.epoch, e.lr, e.loss, e.train_accuracy, e.val_accuracy
            );
        }
        for stop in &self.stops {
            let _ = writeln!(s, "stop: {stop}");
        }
        s
    }

    /// Inverse of [`TrainLog::summary`], up to its printed precision.
    /// Unrecognised lines are ignored.
    pub fn parse(text: &str) -> Self {
        let mut log = Self::default();
        for line in text.lines() {
            if let Some(stop) = line.strip_prefix("stop: ") {
                log.stops.push(stop.to_owned());
            } else if let Some(e) = parse_epoch(line) {
                log.epochs.push(e);
            }
        }
        log
    }
}

fn parse_epoch(line: &str) -> Option<EpochLog> {
    let mut it = line.split(' ');
    let first = it.next()?;
    let phase = ["pretrain", "head", "finetune"].into_iter().find(|&p| p == first)?;
    if it.next()? != "epoch" {
        return None;
    }
    let epoch = it.next()?.parse().ok()?;
    let mut field = |key: &str| it.next()?.strip_prefix(key)?.parse::<f64>().ok();
    Some(EpochLog {
        phase,
        epoch,
        lr: field("lr=")?,
        loss: field("loss=")?,
        train_accuracy: field("train_acc=")?,
        val_accuracy: field("val_acc=")?,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub variant: Variant,
    pub model: Model<f32>,
    pub denoiser: Option<DenoiserSpec>,
    pub log: TrainLog,
}

impl TrainOutcome {
    /// Model parameters plus `meta.variant`, `meta.denoiser` and the
    /// training log.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.put("meta.variant", Tensor::new(vec![1], vec![self.variant.code()]).expect("shape"));
        ck.put_text("meta.denoiser", &self.denoiser.map(|d| d.to_string()).unwrap_or_default());
        ck.put_text("meta.train_log", &self.log.summary());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, PipelineError> {
        let model = ck.to_model()?;
        let code = ck.require("meta.variant")?.data();
        let variant = code
            .first()
            .and_then(|&c| Variant::from_code(c))
            .ok_or_else(|| PipelineError::Config("checkpoint has an unknown variant code".into()))?;
        let text = ck.text("meta.denoiser")?;
        let denoiser = if text.is_empty() { None } else { Some(DenoiserSpec::parse(&text)?) };
        if variant.uses_denoiser() != denoiser.is_some() || (variant == Variant::Dual) != model.is_dual() {
            return Err(PipelineError::Config(format!("checkpoint metadata is inconsistent with variant {variant}")));
        }
        let log = TrainLog::parse(&ck.text("meta.train_log").unwrap_or_default());
        Ok(Self { variant, model, denoiser, log })
    }
}

/// Learning-rate schedule of one phase; epochs count from zero per phase.
#[derive(Clone, Copy, Debug)]
struct Schedule {
    lr0: f64,
    divisor: f64,
}

/// One training phase: which components move, for how long, and whether
/// the validation plateau rule may end it early.
#[derive(Clone, Copy, Debug)]
struct Phase {
    name: &'static str,
    trainable: Trainable,
    epochs: usize,
    schedule: Schedule,
    early_stop: bool,
}

/// Features of `x` in fixed-size chunks; results do not depend on the
/// worker count.
fn features(e: &Extractor<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>, PipelineError> {
    let n = x.rows();
    let inner = &x.shape()[1..];
    let mut out = Vec::with_capacity(n * FEATURE_DIM);
    for start in (0..n).step_by(FEATURE_CHUNK) {
        let end = (start + FEATURE_CHUNK).min(n);
        let rows: Vec<&[f32]> = (start..end).map(|i| x.row(i)).collect();
        out.extend_from_slice(e.features(&Tensor::stack(&rows, inner)?)?.data());
    }
    Ok(Tensor::new(vec![n, FEATURE_DIM], out)?)
}

fn gather(t: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>, PipelineError> {
    let rows: Vec<&[f32]> = idx.iter().map(|&i| t.row(i)).collect();
    Ok(Tensor::stack(&rows, &t.shape()[1..])?)
}

/// Inputs routed to the model's channels for one split.
struct Routed<'a> {
    orig: &'a Tensor<f32>,
    aug: Option<&'a Tensor<f32>>,
    labels: &'a [usize],
}

fn accuracy(model: &Model<f32>, r: &Routed<'_>) -> Result<f64, PipelineError> {
    let f_orig = features(&model.original, r.orig)?;
    let f_aug = match (&model.augmented, r.aug) {
        (Some(e), Some(x)) => Some(features(e, x)?),
        _ => None,
    };
    let logits = model.logits_from_features(&f_orig, f_aug.as_ref())?;
    Ok(top_k_hits(&logits, r.labels, 1)? as f64 / r.labels.len() as f64)
}

/// Runs `phase` on `model`, appending to `log`.
fn run_phase(
    model: &mut Model<f32>,
    phase: Phase,
    train: &Routed<'_>,
    val: &Routed<'_>,
    cfg: &TrainConfig,
    phase_index: u64,
    log: &mut TrainLog,
) -> Result<(), PipelineError> {
    if phase.epochs == 0 {
        log.stops.push(format!("{}: no epochs requested", phase.name));
        return Ok(());
    }
    let t = phase.trainable;
    let dual = model.is_dual();
    // Frozen channels cannot change during the phase.
    let frozen_orig = if t.original { None } else { Some(features(&model.original, train.orig)?) };
    let frozen_aug = match (&model.augmented, train.aug) {
        (Some(e), Some(x)) if !t.augmented => Some(features(e, x)?),
        _ => None,
    };
    let n = train.labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut stop = format!("{}: reached the {}-epoch cap", phase.name, phase.epochs);
    for epoch in 0..phase.epochs {
        let lr = lr_schedule(epoch, phase.schedule.lr0, phase.schedule.divisor);
        let mut rng = rng_from_seed(derive_seed(cfg.seed, (phase_index << 32) | epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut hits = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (f_orig, c_orig) = match &frozen_orig {
                Some(f) => (gather(f, batch)?, None),
                None => {
                    let (f, c) = model.original.forward(&gather(train.orig, batch)?)?;
                    (f, Some(c))
                }
            };
            let (f_aug, c_aug) = match (&model.augmented, &frozen_aug, train.aug) {
                (None, _, _) => (None, None),
                (Some(_), Some(f), _) => (Some(gather(f, batch)?), None),
                (Some(e), None, Some(x)) => {
                    let (f, c) = e.forward(&gather(x, batch)?)?;
                    (Some(f), Some(c))
                }
                (Some(_), None, None) => {
                    return Err(PipelineError::Config("dual training needs preprocessed images".into()))
                }
            };
            let (logits, mut cache) = model.forward_features(f_orig, f_aug)?;
            cache.orig = c_orig;
            cache.aug = c_aug;
            let (loss, dlogits) = cross_entropy_loss(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(PipelineError::Divergence { phase: phase.name, epoch, loss });
            }
            loss_sum += f64::from(loss) * batch.len() as f64;
            hits += top_k_hits(&logits, &labels, 1)?;
            let mut grads = model.backward(&cache, &dlogits);
            grads.trainable = Trainable { augmented: t.augmented && dual, ..t };
            sgd_step(model, &grads, lr as f32);
        }
        if !model.all_finite() {
            return Err(PipelineError::Divergence { phase: phase.name, epoch, loss: f32::NAN });
        }
        let val_accuracy = accuracy(model, val)?;
        log.epochs.push(EpochLog {
            phase: phase.name,
            epoch,
            lr,
            loss: loss_sum / n as f64,
            train_accuracy: hits as f64 / n as f64,
            val_accuracy,
        });
        if phase.early_stop {
            if val_accuracy >= best + cfg.min_delta {
                best = val_accuracy;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stop = format!(
                        "{}: validation plateau after {} epochs (no gain >= {} for {} epochs)",
                        phase.name,
                        epoch + 1,
                        cfg.min_delta,
                        cfg.patience
                    );
                    break;
                }
            }
        }
    }
    log.stops.push(stop);
    Ok(())
}

fn routed<'a>(d: &'a SplitData, orig: &'a Tensor<f32>, aug: Option<&'a Tensor<f32>>) -> Routed<'a> {
    Routed { orig, aug, labels: &d.labels }
}

/// Clean single-channel training from scratch.
pub fn train_baseline(cfg: &TrainConfig, data: &TrainData) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    data.check_provenance()?;
    let mut model = Model::single(data.classes, &mut rng_from_seed(derive_seed(cfg.seed, 0)))?;
    let phase = Phase {
        name: "pretrain",
        trainable: Trainable::ALL,
        epochs: cfg.pretrain_epochs,
        schedule: Schedule { lr0: cfg.pretrain_lr0, divisor: cfg.pretrain_decay_divisor },
        early_stop: false,
    };
    let mut log = TrainLog::default();
    let train = routed(&data.train, &data.train.original, None);
    let val = routed(&data.val, &data.val.original, None);
    run_phase(&mut model, phase, &train, &val, cfg, 0, &mut log)?;
    model.trainable = Trainable::ALL;
    Ok(TrainOutcome { variant: Variant::SingleBaseline, model, denoiser: None, log })
}

/// Dual head that weighs both channels equally and whose output on
/// `(f, f)` equals the baseline head's on `f`. Both merge modes start out
/// computing the same function.
fn pretrained_head(base: &Model<f32>, merge: Merge) -> crate::nn::Linear<f32> {
    let classes = base.classes();
    let mut head = crate::nn::Linear::zeros(merge.head_inputs(), classes);
    let bw = base.head.weight.data();
    let w = head.weight.data_mut();
    for o in 0..classes {
        for i in 0..FEATURE_DIM {
            let v = bw[o * FEATURE_DIM + i];
            match merge {
                Merge::Concat => {
                    w[o * 2 * FEATURE_DIM + i] = v * 0.5;
                    w[o * 2 * FEATURE_DIM + FEATURE_DIM + i] = v * 0.5;
                }
                Merge::Sum => w[o * FEATURE_DIM + i] = v * 0.5,
            }
        }
    }
    head.bias = base.head.bias.clone();
    head
}

/// Builds and trains `cfg.variant` on top of a trained baseline.
pub fn train_from_body(
    baseline: &TrainOutcome,
    cfg: &ExperimentConfig,
    data: &TrainData,
) -> Result<TrainOutcome, PipelineError> {
    let tc = &cfg.train;
    tc.validate()?;
    data.check_provenance()?;
    if baseline.variant != Variant::SingleBaseline {
        return Err(PipelineError::Config("the pretrained body must come from a baseline run".into()));
    }
    let schedule = Schedule { lr0: tc.lr0, divisor: tc.lr_decay_divisor };
    let mut log = baseline.log.clone();
    match cfg.variant {
        Variant::SingleBaseline => Ok(baseline.clone()),
        Variant::SinglePreprocessed => {
            let mut model = baseline.model.clone();
            let (tr, va) = (data.preprocessed(&data.train)?, data.preprocessed(&data.val)?);
            let phase = Phase {
                name: "finetune",
                trainable: Trainable::ALL,
                epochs: tc.finetune_epochs,
                schedule,
                early_stop: true,
            };
            run_phase(&mut model, phase, &routed(&data.train, &tr, None), &routed(&data.val, &va, None), tc, 1, &mut log)?;
            Ok(TrainOutcome { variant: cfg.variant, model, denoiser: Some(cfg.denoiser), log })
        }
        Variant::Dual => {
            let mut rng = rng_from_seed(derive_seed(tc.seed, 1));
            let mut model = Model::dual_from_body(&baseline.model.original, data.classes, cfg.merge, &mut rng)?;
            if tc.head_init == HeadInit::Pretrained {
                model.head = pretrained_head(&baseline.model, cfg.merge);
            }
            let (tr, va) = (data.preprocessed(&data.train)?, data.preprocessed(&data.val)?);
            let train = routed(&data.train, &data.train.original, Some(&tr));
            let val = routed(&data.val, &data.val.original, Some(&va));
            let head = Phase {
                name: "head",
                trainable: Trainable::HEAD,
                epochs: tc.head_epochs,
                schedule,
                early_stop: false,
            };
            let finetune = |trainable| Phase {
                name: "finetune",
                trainable,
                epochs: tc.finetune_epochs,
                schedule,
                early_stop: true,
            };
            let phases = match tc.strategy {
                Strategy::Joint => vec![finetune(Trainable { original: tc.joint_trains_original, ..Trainable::ALL })],
                Strategy::AugmentedFirst => vec![finetune(Trainable::AUGMENTED), head],
                Strategy::HeadFirst => {
                    vec![head, finetune(Trainable { augmented: true, head: true, original: false })]
                }
            };
            for (i, phase) in phases.into_iter().enumerate() {
                run_phase(&mut model, phase, &train, &val, tc, 1 + i as u64, &mut log)?;
            }
            model.trainable = match tc.strategy {
                Strategy::Joint => Trainable { original: tc.joint_trains_original, ..Trainable::ALL },
                _ => Trainable { original: false, augmented: true, head: true },
            };
            Ok(TrainOutcome { variant: cfg.variant, model, denoiser: Some(cfg.denoiser), log })
        }
    }
}

/// Full run for one seed: loads the dataset, trains the baseline and then
/// the configured variant.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let ds = Dataset::load(&cfg.dataset, DEFAULT_SPLIT_SEED)?;
    let data = TrainData::load(&ds, cfg.variant.uses_denoiser().then_some(&cfg.denoiser))?;
    let baseline = train_baseline(&cfg.train, &data)?;
    train_from_body(&baseline, cfg, &data)
}
