use std::fmt;
use std::str::FromStr;

use super::{Extractor, ExtractorCache, Linear, NnError, Real, Result, Tensor, FEATURE_DIM};
use crate::rng::Rng;

/// How the two channel features are fused before the head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Merge {
    /// `[f_orig, f_aug]`, 128 wide.
    #[default]
    Concat,
    /// `f_orig + f_aug`, 64 wide.
    Sum,
}

impl Merge {
    pub fn name(self) -> &'static str {
        match self {
            Merge::Concat => "concat",
            Merge::Sum => "sum",
        }
    }

    pub fn head_inputs(self) -> usize {
        match self {
            Merge::Concat => 2 * FEATURE_DIM,
            Merge::Sum => FEATURE_DIM,
        }
    }
}

impl fmt::Display for Merge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Merge {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" | "concatenate" | "concatenation" => Ok(Merge::Concat),
            "sum" | "summation" | "add" => Ok(Merge::Sum),
            _ => Err(NnError::Config(format!("unknown merge mode '{s}' (expected concat or sum)"))),
        }
    }
}

/// Which components the optimizer may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trainable {
    pub original: bool,
    pub augmented: bool,
    pub head: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable { original: true, augmented: true, head: true };
    pub const NONE: Trainable = Trainable { original: false, augmented: false, head: false };
    pub const HEAD: Trainable = Trainable { original: false, augmented: false, head: true };
    pub const AUGMENTED: Trainable = Trainable { original: false, augmented: true, head: false };
}

impl Default for Trainable {
    fn default() -> Self {
        Self::ALL
    }
}

/// Concatenates (original first) or sums two `[n, d]` feature blocks.
pub fn merge_features<T: Real>(f_orig: &Tensor<T>, f_aug: &Tensor<T>, mode: Merge) -> Result<Tensor<T>> {
    if f_orig.rows() != f_aug.rows() || f_orig.shape().len() != 2 || f_aug.shape().len() != 2 {
        return Err(NnError::Shape(format!("cannot merge {:?} with {:?}", f_orig.shape(), f_aug.shape())));
    }
    match mode {
        Merge::Concat => {
            let n = f_orig.rows();
            let width = f_orig.row_len() + f_aug.row_len();
            let mut data = Vec::with_capacity(n * width);
            for i in 0..n {
                data.extend_from_slice(f_orig.row(i));
                data.extend_from_slice(f_aug.row(i));
            }
            Tensor::new(vec![n, width], data)
        }
        Merge::Sum => {
            if f_orig.shape() != f_aug.shape() {
                return Err(NnError::Shape(format!(
                    "sum merge needs equal widths, got {:?} and {:?}",
                    f_orig.shape(),
                    f_aug.shape()
                )));
            }
            let mut out = f_orig.clone();
            out.add_assign(f_aug);
            Ok(out)
        }
    }
}

/// Splits the gradient of merged features back into the two channels.
pub fn split_merged_grad<T: Real>(dmerged: &Tensor<T>, mode: Merge, width: usize) -> (Tensor<T>, Tensor<T>) {
    match mode {
        Merge::Concat => {
            let n = dmerged.rows();
            let left: Vec<&[T]> = (0..n).map(|i| &dmerged.row(i)[..width]).collect();
            let right: Vec<&[T]> = (0..n).map(|i| &dmerged.row(i)[width..]).collect();
            (
                Tensor::stack(&left, &[width]).expect("non-empty"),
                Tensor::stack(&right, &[dmerged.row_len() - width]).expect("non-empty"),
            )
        }
        Merge::Sum => (dmerged.clone(), dmerged.clone()),
    }
}

/// Single-channel (`augmented == None`) or dual-channel classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub original: Extractor<T>,
    pub augmented: Option<Extractor<T>>,
    pub merge: Merge,
    pub head: Linear<T>,
    pub trainable: Trainable,
}

/// Activation record of [`Model::forward`].
#[derive(Clone, Debug)]
pub struct ModelCache<T = f32> {
    pub f_orig: Tensor<T>,
    pub f_aug: Option<Tensor<T>>,
    pub merged: Tensor<T>,
    pub(crate) orig: Option<Vec<ExtractorCache<T>>>,
    pub(crate) aug: Option<Vec<ExtractorCache<T>>>,
}

/// Parameter gradients mirroring [`Model`]. Frozen components are still
/// filled in; `trainable` records which ones the optimizer applies.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    pub original: Extractor<T>,
    pub augmented: Option<Extractor<T>>,
    pub head: Linear<T>,
    pub trainable: Trainable,
}

impl<T: Real> Model<T> {
    pub fn single(classes: usize, rng: &mut Rng) -> Result<Self> {
        check_classes(classes)?;
        let original = Extractor::new(rng);
        let head = Linear::new(FEATURE_DIM, classes, rng);
        Ok(Self { original, augmented: None, merge: Merge::Concat, head, trainable: Trainable::ALL })
    }

    pub fn dual(classes: usize, merge: Merge, rng: &mut Rng) -> Result<Self> {
        check_classes(classes)?;
        let original = Extractor::new(rng);
        let augmented = Extractor::new(rng);
        let head = Linear::new(merge.head_inputs(), classes, rng);
        Ok(Self { original, augmented: Some(augmented), merge, head, trainable: Trainable::ALL })
    }

    /// Dual model whose both channels start from a copy of `body`, with a
    /// fresh head.
    pub fn dual_from_body(body: &Extractor<T>, classes: usize, merge: Merge, rng: &mut Rng) -> Result<Self> {
        check_classes(classes)?;
        let head = Linear::new(merge.head_inputs(), classes, rng);
        Ok(Self {
            original: body.clone(),
            augmented: Some(body.clone()),
            merge,
            head,
            trainable: Trainable::ALL,
        })
    }

    pub fn is_dual(&self) -> bool {
        self.augmented.is_some()
    }

    pub fn classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            original: self.original.cast(),
            augmented: self.augmented.as_ref().map(Extractor::cast),
            merge: self.merge,
            head: self.head.cast(),
            trainable: self.trainable,
        }
    }

    /// Checks internal shape consistency.
    pub fn validate(&self) -> Result<()> {
        check_classes(self.classes())?;
        let expected = if self.is_dual() { self.merge.head_inputs() } else { FEATURE_DIM };
        if self.head.in_dim() != expected {
            return Err(NnError::Shape(format!(
                "head takes {} inputs but the {} model produces {expected}",
                self.head.in_dim(),
                if self.is_dual() { "dual" } else { "single" }
            )));
        }
        Ok(())
    }

    /// Parameter tensors with stable names, e.g. `original.conv1.weight`.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        named(&self.original, self.augmented.as_ref(), &self.head)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = self
            .original
            .tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("original.{n}"), t))
            .collect();
        if let Some(aug) = self.augmented.as_mut() {
            out.extend(aug.tensors_mut().into_iter().map(|(n, t)| (format!("augmented.{n}"), t)));
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Head logits from precomputed channel features.
    pub fn logits_from_features(&self, f_orig: &Tensor<T>, f_aug: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let merged = self.merged(f_orig, f_aug)?;
        self.head.forward(&merged)
    }

    fn merged(&self, f_orig: &Tensor<T>, f_aug: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        match (self.is_dual(), f_aug) {
            (true, Some(f_aug)) => merge_features(f_orig, f_aug, self.merge),
            (false, None) => Ok(f_orig.clone()),
            (true, None) => Err(NnError::Shape("dual model needs augmented input".into())),
            (false, Some(_)) => Err(NnError::Shape("single-channel model takes one input".into())),
        }
    }

    /// Full forward pass. `x_aug` must be given exactly for dual models.
    pub fn forward(&self, x_orig: &Tensor<T>, x_aug: Option<&Tensor<T>>) -> Result<(Tensor<T>, ModelCache<T>)> {
        if self.is_dual() != x_aug.is_some() {
            return Err(NnError::Shape(if self.is_dual() {
                "dual model needs augmented input".into()
            } else {
                "single-channel model takes one input".into()
            }));
        }
        if let Some(x_aug) = x_aug {
            if x_aug.shape() != x_orig.shape() {
                return Err(NnError::Shape(format!(
                    "channel inputs differ: {:?} vs {:?}",
                    x_orig.shape(),
                    x_aug.shape()
                )));
            }
        }
        let (f_orig, orig) = self.original.forward(x_orig)?;
        let (f_aug, aug) = match (&self.augmented, x_aug) {
            (Some(e), Some(x)) => {
                let (f, c) = e.forward(x)?;
                (Some(f), Some(c))
            }
            _ => (None, None),
        };
        let merged = self.merged(&f_orig, f_aug.as_ref())?;
        let logits = self.head.forward(&merged)?;
        Ok((logits, ModelCache { f_orig, f_aug, merged, orig: Some(orig), aug }))
    }

    /// Forward pass through the head only, for features computed elsewhere.
    pub fn forward_features(&self, f_orig: Tensor<T>, f_aug: Option<Tensor<T>>) -> Result<(Tensor<T>, ModelCache<T>)> {
        let merged = self.merged(&f_orig, f_aug.as_ref())?;
        let logits = self.head.forward(&merged)?;
        Ok((logits, ModelCache { f_orig, f_aug, merged, orig: None, aug: None }))
    }

    /// Gradients of every parameter. Extractor gradients stay zero when the
    /// cache came from [`Model::forward_features`].
    pub fn backward(&self, cache: &ModelCache<T>, dlogits: &Tensor<T>) -> Gradients<T> {
        let mut grads = Gradients::zeros_like(self);
        let dmerged = self.head.backward(&cache.merged, dlogits, &mut grads.head);
        let (d_orig, d_aug) = if self.is_dual() {
            let (a, b) = split_merged_grad(&dmerged, self.merge, FEATURE_DIM);
            (a, Some(b))
        } else {
            (dmerged, None)
        };
        if let Some(caches) = &cache.orig {
            grads.original = self.original.backward(caches, &d_orig);
        }
        if let (Some(e), Some(caches), Some(d)) = (&self.augmented, &cache.aug, &d_aug) {
            grads.augmented = Some(e.backward(caches, d));
        }
        grads
    }
}

fn check_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(NnError::Config(format!("need at least 2 classes, got {classes}")));
    }
    Ok(())
}

fn named<'a, T: Real>(
    original: &'a Extractor<T>,
    augmented: Option<&'a Extractor<T>>,
    head: &'a Linear<T>,
) -> Vec<(String, &'a Tensor<T>)> {
    let mut out: Vec<(String, &Tensor<T>)> =
        original.tensors().into_iter().map(|(n, t)| (format!("original.{n}"), t)).collect();
    if let Some(aug) = augmented {
        out.extend(aug.tensors().into_iter().map(|(n, t)| (format!("augmented.{n}"), t)));
    }
    out.push(("head.weight".into(), &head.weight));
    out.push(("head.bias".into(), &head.bias));
    out
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Self {
            original: Extractor::zeros(),
            augmented: model.augmented.as_ref().map(|_| Extractor::zeros()),
            head: Linear::zeros(model.head.in_dim(), model.head.out_dim()),
            trainable: model.trainable,
        }
    }

    /// Same names and order as [`Model::tensors`].
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        named(&self.original, self.augmented.as_ref(), &self.head)
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        self.original.add_assign(&other.original);
        if let (Some(a), Some(b)) = (self.augmented.as_mut(), other.augmented.as_ref()) {
            a.add_assign(b);
        }
        self.head.weight.add_assign(&other.head.weight);
        self.head.bias.add_assign(&other.head.bias);
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.data().iter().all(|v| v.is_zero()))
    }
}
