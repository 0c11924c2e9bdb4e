//! Synthetic dataset generation and on-disk dataset loading.
//!
//! Layout: `root/<class>/NNNN.ppm` plus `root/splits.txt` with lines
//! `split<TAB>relative-path<TAB>class`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::shapes::{render, RenderParams, MOTIFS};
use super::PipelineError;
use crate::image::Image;
use crate::nn::Tensor;
use crate::rng::{derive_seed, rng_from_seed};

pub const MANIFEST: &str = "splits.txt";
/// Split seed used when a dataset has no manifest.
pub const DEFAULT_SPLIT_SEED: u64 = 0;
/// Side length fed to the network.
pub const INPUT_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(PipelineError::Dataset(format!("unknown split '{s}'"))),
        }
    }
}

/// One labelled image, `path` relative to the dataset root with `/`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    pub path: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Generator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
    pub render: RenderParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            per_class: 500,
            size: INPUT_SIZE,
            seed: 0,
            render: RenderParams::default(),
        }
    }
}

/// Per-class split sizes: 80% train, 10% val, the rest test.
pub fn split_counts(per_class: usize) -> (usize, usize, usize) {
    let train = per_class * 8 / 10;
    let val = per_class / 10;
    (train, val, per_class - train - val)
}

/// Seeded per-class 80/10/10 assignment of `0..n` item indices.
fn assign_splits(n: usize, seed: u64, class: usize) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(derive_seed(seed ^ 0x5917_7e55, class as u64)));
    let (tr, va, _) = split_counts(n);
    let mut parts = [idx[..tr].to_vec(), idx[tr..tr + va].to_vec(), idx[tr + va..].to_vec()];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    parts
}

/// Renders the dataset into `out_root` and writes the split manifest.
pub fn gen_synthetic_dataset(out_root: &Path, cfg: &GenConfig) -> Result<Dataset, PipelineError> {
    if !(2..=MOTIFS.len()).contains(&cfg.num_classes) {
        return Err(PipelineError::Config(format!(
            "num_classes must be in [2, {}], got {}",
            MOTIFS.len(),
            cfg.num_classes
        )));
    }
    if cfg.per_class < 10 {
        return Err(PipelineError::Config("per_class must be at least 10 so every split is populated".into()));
    }
    if cfg.size < 8 || cfg.size % 8 != 0 {
        return Err(PipelineError::Config(format!("size must be a positive multiple of 8, got {}", cfg.size)));
    }
    let motifs = &MOTIFS[..cfg.num_classes];
    for (class, motif) in motifs.iter().enumerate() {
        let dir = out_root.join(motif.name());
        fs::create_dir_all(&dir)?;
        let class_seed = derive_seed(cfg.seed, class as u64);
        (0..cfg.per_class).into_par_iter().try_for_each(|i| -> Result<(), PipelineError> {
            let img = render(*motif, cfg.size, derive_seed(class_seed, i as u64), &cfg.render);
            img.save_pnm(dir.join(format!("{i:04}.ppm")))?;
            Ok(())
        })?;
    }
    let mut classes: Vec<String> = motifs.iter().map(|m| m.name().to_string()).collect();
    classes.sort();
    let mut ds = Dataset {
        root: out_root.to_path_buf(),
        classes,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (label, class) in ds.classes.clone().iter().enumerate() {
        let class_index = motifs.iter().position(|m| m.name() == class).expect("known class");
        let parts = assign_splits(cfg.per_class, cfg.seed, class_index);
        for (split, part) in Split::ALL.iter().zip(parts) {
            let samples = part.into_iter().map(|i| Sample { path: format!("{class}/{i:04}.ppm"), label });
            ds.split_mut(*split).extend(samples);
        }
    }
    fs::write(out_root.join(MANIFEST), ds.manifest_text())?;
    Ok(ds)
}

fn is_image(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm" | "pnm"))
}

impl Dataset {
    /// Loads `root`. Class order is lexicographic. Without a manifest the
    /// files are split 80/10/10 per class using `seed`.
    pub fn load(root: &Path, seed: u64) -> Result<Self, PipelineError> {
        let mut classes = Vec::new();
        let mut files: Vec<Vec<String>> = Vec::new();
        let mut entries: Vec<PathBuf> =
            fs::read_dir(root)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for dir in entries.into_iter().filter(|p| p.is_dir()) {
            let name = dir.file_name().and_then(|n| n.to_str()).map(str::to_string);
            let name = name.ok_or_else(|| PipelineError::Dataset(format!("non-UTF-8 class name {dir:?}")))?;
            let mut imgs: Vec<String> = fs::read_dir(&dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|p| is_image(p))
                .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(|n| format!("{name}/{n}")))
                .collect();
            if imgs.is_empty() {
                return Err(PipelineError::Dataset(format!("class '{name}' has no images")));
            }
            imgs.sort();
            classes.push(name);
            files.push(imgs);
        }
        if classes.len() < 2 {
            return Err(PipelineError::Dataset(format!("{} needs at least two class directories", root.display())));
        }
        let mut ds = Dataset {
            root: root.to_path_buf(),
            classes,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        let manifest = root.join(MANIFEST);
        if manifest.exists() {
            ds.read_manifest(&fs::read_to_string(manifest)?, &files)?;
        } else {
            for (label, list) in files.iter().enumerate() {
                let parts = assign_splits(list.len(), seed, label);
                for (split, part) in Split::ALL.iter().zip(parts) {
                    let samples = part.into_iter().map(|i| Sample { path: list[i].clone(), label });
                    ds.split_mut(*split).extend(samples);
                }
            }
        }
        ds.validate()?;
        Ok(ds)
    }

    fn read_manifest(&mut self, text: &str, files: &[Vec<String>]) -> Result<(), PipelineError> {
        let known: HashSet<&str> = files.iter().flatten().map(String::as_str).collect();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| PipelineError::Dataset(format!("{MANIFEST} line {}: {msg}", n + 1));
            let mut cols = line.split('\t');
            let (Some(split), Some(path), Some(class), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected split<TAB>path<TAB>class"));
            };
            let split: Split = split.parse().map_err(|_| bad("unknown split"))?;
            let label = self.classes.iter().position(|c| c == class).ok_or_else(|| bad("unknown class"))?;
            if !known.contains(path) || !path.starts_with(&format!("{class}/")) {
                return Err(bad(&format!("'{path}' is not an image of class '{class}'")));
            }
            self.split_mut(split).push(Sample { path: path.to_string(), label });
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = HashSet::new();
        for split in Split::ALL {
            let samples = self.split(split);
            for label in 0..self.classes.len() {
                if !samples.iter().any(|s| s.label == label) {
                    return Err(PipelineError::Dataset(format!(
                        "class '{}' has no {split} images",
                        self.classes[label]
                    )));
                }
            }
            for s in samples {
                if !seen.insert(&s.path) {
                    return Err(PipelineError::Dataset(format!("'{}' appears in more than one split entry", s.path)));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<Sample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn manifest_text(&self) -> String {
        let mut out = String::new();
        for split in Split::ALL {
            for s in self.split(split) {
                out += &format!("{split}\t{}\t{}\n", s.path, self.classes[s.label]);
            }
        }
        out
    }

    /// Reads a split as `INPUT_SIZE²` RGB images, in manifest order.
    pub fn load_images(&self, split: Split) -> Result<Vec<Image>, PipelineError> {
        self.split(split)
            .par_iter()
            .map(|s| Ok(normalize_input(&Image::load_pnm(self.root.join(&s.path))?)))
            .collect()
    }

    pub fn labels(&self, split: Split) -> Vec<usize> {
        self.split(split).iter().map(|s| s.label).collect()
    }
}

/// RGB at the network's input size.
pub fn normalize_input(img: &Image) -> Image {
    let rgb = if img.channels() == 3 { img.clone() } else { img.to_rgb() };
    if rgb.height() == INPUT_SIZE && rgb.width() == INPUT_SIZE {
        rgb
    } else {
        rgb.resize_bilinear(INPUT_SIZE, INPUT_SIZE)
    }
}

/// Subtracted from every intensity on the way into the network.
pub const INPUT_OFFSET: f32 = 0.5;

/// Stacks RGB images into a planar `[n, 3, h, w]` tensor, centred on
/// [`INPUT_OFFSET`] and scaled to [-1, 1].
pub fn images_to_tensor(images: &[&Image]) -> Tensor<f32> {
    let (h, w, _) = images[0].shape();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        assert_eq!(img.shape(), (h, w, 3), "batch images must share an RGB shape");
        for c in 0..3 {
            data.extend(img.data().iter().skip(c).step_by(3).map(|v| (v - INPUT_OFFSET) * 2.0));
        }
    }
    Tensor::new(vec![images.len(), 3, h, w], data).expect("non-empty batch")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GenConfig {
        GenConfig { num_classes: 3, per_class: 10, size: 16, seed, ..GenConfig::default() }
    }

    fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_counts(100), (80, 10, 10));
        assert_eq!(split_counts(10), (8, 1, 1));
        assert_eq!(split_counts(25), (20, 2, 3));
    }

    #[test]
    fn generation_is_reproducible_and_loadable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let da = gen_synthetic_dataset(a.path(), &small(3)).unwrap();
        gen_synthetic_dataset(b.path(), &small(3)).unwrap();
        assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
        assert_eq!(da.classes, vec!["disc", "square", "triangle"]);
        assert_eq!((da.train.len(), da.val.len(), da.test.len()), (24, 3, 3));

        let loaded = Dataset::load(a.path(), 99).unwrap();
        assert_eq!(loaded, da);
        let imgs = loaded.load_images(Split::Val).unwrap();
        assert_eq!(imgs[0].shape(), (INPUT_SIZE, INPUT_SIZE, 3));
    }

    #[test]
    fn eight_classes_split_640_80_80() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig { per_class: 100, size: 8, ..GenConfig::default() };
        let ds = gen_synthetic_dataset(dir.path(), &cfg).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (640, 80, 80));
        let files = tree_bytes(dir.path()).into_iter().filter(|(p, _)| is_image(p)).count();
        assert_eq!(files, 800);
    }

    #[test]
    fn missing_manifest_uses_seeded_split() {
        let dir = tempfile::tempdir().unwrap();
        gen_synthetic_dataset(dir.path(), &small(1)).unwrap();
        fs::remove_file(dir.path().join(MANIFEST)).unwrap();
        let a = Dataset::load(dir.path(), 5).unwrap();
        assert_eq!(a, Dataset::load(dir.path(), 5).unwrap());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (24, 3, 3));
    }

    #[test]
    fn empty_class_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        gen_synthetic_dataset(dir.path(), &small(1)).unwrap();
        fs::create_dir(dir.path().join("aaa_empty")).unwrap();
        assert!(Dataset::load(dir.path(), 0).is_err());
    }

    #[test]
    fn class_order_is_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["zeta", "alpha", "mid"] {
            let d = dir.path().join(name);
            fs::create_dir(&d).unwrap();
            for i in 0..10 {
                Image::filled(8, 8, 1, 0.5).unwrap().save_pnm(d.join(format!("{i:04}.pgm"))).unwrap();
            }
        }
        let ds = Dataset::load(dir.path(), 0).unwrap();
        assert_eq!(ds.classes, vec!["alpha", "mid", "zeta"]);
        // Grayscale inputs are promoted and resized.
        assert_eq!(ds.load_images(Split::Test).unwrap()[0].shape(), (INPUT_SIZE, INPUT_SIZE, 3));
    }

    #[test]
    fn planar_tensor_layout() {
        let img = Image::from_fn(8, 8, 3, |y, x, c| (c * 100 + y * 8 + x) as f32 / 300.0).unwrap();
        let t = images_to_tensor(&[&img]);
        assert_eq!(t.shape(), &[1, 3, 8, 8]);
        assert_eq!(t.data()[64 + 9], (img.get(1, 1, 1) - INPUT_OFFSET) * 2.0);
    }
}
