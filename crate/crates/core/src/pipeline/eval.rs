//! Top-1 accuracy over the clean cell and a distortion grid.

use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::Variant;
use super::dataset::images_to_tensor;
use super::train::TrainOutcome;
use super::PipelineError;
use crate::degrade::{apply_distortion, DistortionKind, DistortionSpec};
use crate::denoise::{preprocess, DenoiserSpec};
use crate::image::Image;
use crate::nn::{top_k_hits, Model, Tensor};
use crate::rng::derive_seed;

/// Images per forward call; fixed so batching never depends on threads.
const EVAL_CHUNK: usize = 32;

/// One grid cell; intensity 0 is the clean cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub kind: DistortionKind,
    pub intensity: u8,
}

impl Cell {
    pub const CLEAN: Cell = Cell { kind: DistortionKind::None, intensity: 0 };

    pub fn is_clean(self) -> bool {
        self.kind == DistortionKind::None
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.intensity)
    }
}

/// Accuracies of one trained model; the clean cell comes first.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub variant: Variant,
    pub seed: u64,
    pub test_images: usize,
    pub cells: Vec<(Cell, f64)>,
}

pub const EVAL_CSV_HEADER: &str = "model,variant,seed,kind,intensity,accuracy,test_images";

impl EvalReport {
    pub fn accuracy(&self, cell: Cell) -> Option<f64> {
        self.cells.iter().find(|(c, _)| *c == cell).map(|&(_, a)| a)
    }

    pub fn clean_accuracy(&self) -> f64 {
        self.accuracy(Cell::CLEAN).expect("clean cell is always evaluated")
    }

    /// Distorted cells only.
    pub fn distorted(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.cells.iter().copied().filter(|(c, _)| !c.is_clean())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{EVAL_CSV_HEADER}\n");
        for (cell, acc) in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{}",
                self.model, self.variant, self.seed, cell.kind, cell.intensity, acc, self.test_images
            );
        }
        s
    }

    /// Parses one or more reports written by [`EvalReport::to_csv`]; rows
    /// are grouped by `(model, seed)` in order of first appearance.
    pub fn from_csv(text: &str) -> Result<Vec<EvalReport>, PipelineError> {
        let mut out: Vec<EvalReport> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line == EVAL_CSV_HEADER {
                continue;
            }
            let bad = |msg: &str| PipelineError::Config(format!("evaluation CSV line {}: {msg}", n + 1));
            let cols: Vec<&str> = line.split(',').collect();
            let [model, variant, seed, kind, intensity, acc, count] = cols[..] else {
                return Err(bad("expected 7 columns"));
            };
            let variant: Variant = variant.parse()?;
            let seed: u64 = seed.parse().map_err(|_| bad("bad seed"))?;
            let cell = Cell {
                kind: kind.parse()?,
                intensity: intensity.parse().map_err(|_| bad("bad intensity"))?,
            };
            let acc: f64 = acc.parse().map_err(|_| bad("bad accuracy"))?;
            let count: usize = count.parse().map_err(|_| bad("bad image count"))?;
            match out.iter_mut().find(|r| r.model == model && r.seed == seed) {
                Some(r) => {
                    if r.variant != variant || r.test_images != count {
                        return Err(bad("inconsistent rows for one model"));
                    }
                    r.cells.push((cell, acc));
                }
                None => out.push(EvalReport {
                    model: model.to_string(),
                    variant,
                    seed,
                    test_images: count,
                    cells: vec![(cell, acc)],
                }),
            }
        }
        if out.iter().any(|r| r.accuracy(Cell::CLEAN).is_none()) {
            return Err(PipelineError::Config("evaluation CSV lacks a clean cell".into()));
        }
        Ok(out)
    }
}

/// Distorts every test image for one cell.
fn distort_all(images: &[Image], spec: &DistortionSpec) -> Result<Vec<Image>, PipelineError> {
    Ok(images
        .par_iter()
        .enumerate()
        .map(|(i, img)| apply_distortion(img, &spec.with_seed(derive_seed(spec.seed, i as u64))))
        .collect::<Result<_, _>>()?)
}

fn top1(model: &Model<f32>, orig: &[Image], aug: Option<&[Image]>, labels: &[usize]) -> Result<usize, PipelineError> {
    let mut hits = 0;
    for start in (0..orig.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(orig.len());
        let stack = |imgs: &[Image]| -> Tensor<f32> { images_to_tensor(&imgs[start..end].iter().collect::<Vec<_>>()) };
        let x_aug = aug.map(stack);
        let (logits, _) = model.forward(&stack(orig), x_aug.as_ref())?;
        hits += top_k_hits(&logits, &labels[start..end], 1)?;
    }
    Ok(hits)
}

/// Accuracy of `outcome` on the clean test images and every grid cell.
/// Each image's noise seed is derived from the cell's seed and the image
/// index only.
pub fn evaluate(
    outcome: &TrainOutcome,
    label: &str,
    seed: u64,
    images: &[Image],
    labels: &[usize],
    grid: &[DistortionSpec],
) -> Result<EvalReport, PipelineError> {
    let mut reports = evaluate_many(&[(outcome, label)], seed, images, labels, grid)?;
    Ok(reports.pop().expect("one report per model"))
}

/// [`evaluate`] for several models at once. Each cell is distorted once and
/// preprocessed once per distinct denoiser; results equal separate calls.
pub fn evaluate_many(
    models: &[(&TrainOutcome, &str)],
    seed: u64,
    images: &[Image],
    labels: &[usize],
    grid: &[DistortionSpec],
) -> Result<Vec<EvalReport>, PipelineError> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(PipelineError::Dataset("test set is empty or labels do not match images".into()));
    }
    for (outcome, _) in models {
        if outcome.variant.uses_denoiser() && outcome.denoiser.is_none() {
            return Err(PipelineError::Config(format!("{} model has no denoiser recorded", outcome.variant)));
        }
    }
    let mut specs = vec![DistortionSpec::none()];
    specs.extend(grid.iter().copied().filter(|s| s.kind != DistortionKind::None));
    let mut reports: Vec<EvalReport> = models
        .iter()
        .map(|(outcome, label)| EvalReport {
            model: label.to_string(),
            variant: outcome.variant,
            seed,
            test_images: images.len(),
            cells: Vec::with_capacity(specs.len()),
        })
        .collect();
    for spec in &specs {
        let distorted = distort_all(images, spec)?;
        let mut preprocessed: Vec<(DenoiserSpec, Vec<Image>)> = Vec::new();
        for (outcome, _) in models {
            if let Some(d) = outcome.denoiser.filter(|_| outcome.variant.uses_denoiser()) {
                if !preprocessed.iter().any(|(p, _)| *p == d) {
                    let pre = distorted.par_iter().map(|img| preprocess(img, &d)).collect::<Result<Vec<_>, _>>()?;
                    preprocessed.push((d, pre));
                }
            }
        }
        let pre_for = |outcome: &TrainOutcome| -> &[Image] {
            let d = outcome.denoiser.expect("checked above");
            &preprocessed.iter().find(|(p, _)| *p == d).expect("computed above").1
        };
        let cell = Cell { kind: spec.kind, intensity: if spec.kind == DistortionKind::None { 0 } else { spec.intensity } };
        for ((outcome, _), report) in models.iter().zip(&mut reports) {
            let (orig, aug) = match outcome.variant {
                Variant::SingleBaseline => (&distorted[..], None),
                Variant::SinglePreprocessed => (pre_for(outcome), None),
                Variant::Dual => (&distorted[..], Some(pre_for(outcome))),
            };
            let hits = top1(&outcome.model, orig, aug, labels)?;
            report.cells.push((cell, hits as f64 / images.len() as f64));
        }
    }
    Ok(reports)
}
