//! Per-subcommand settings: defaults, config file, flags, then dispatch.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use robustcls::degrade::{apply_distortion, DistortionKind, DistortionSpec};
use robustcls::denoise::{preprocess, DenoiserSpec};
use robustcls::image::Image;
use robustcls::kv::{self, KvError};
use robustcls::nn::checkpoint::Checkpoint;
use robustcls::nn::gradcheck::{grad_check, linear_only_model, ramp_batch, random_batch, GradCheckConfig};
use robustcls::nn::{Merge, Model};
use robustcls::pipeline::config::Variant;
use robustcls::pipeline::dataset::DEFAULT_SPLIT_SEED;
use robustcls::pipeline::RenderParams;
use robustcls::pipeline::train::TrainData;
use robustcls::pipeline::{
    evaluate, gen_synthetic_dataset, train_baseline, train_from_body, write_report, Dataset, EvalReport,
    ExperimentConfig, GenConfig, PipelineError, Split, TrainOutcome,
};
use robustcls::rng::{derive_seed, rng_from_seed};

use crate::{Command, DegradeArgs, DenoiseArgs, EvalArgs, GenArgs, Global, GradCheckArgs, ReportArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, keys or values.
    Usage(String),
    /// The work itself failed.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Configuration errors are the caller's fault; everything else is a
/// runtime failure.
fn classify(e: PipelineError) -> CliError {
    match e {
        PipelineError::Config(_) | PipelineError::Kv(_) => usage(e),
        _ => runtime(e),
    }
}

/// A settings block addressed by flat keys.
trait Settings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError>;
    fn to_kv_text(&self) -> String;
}

/// Defaults, then the config file, then `flags` (in order).
fn resolve<S: Settings>(mut s: S, global: &Global, flags: Vec<(String, String)>) -> Result<S, CliError> {
    if let Some(path) = &global.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in kv::parse_pairs(&text).map_err(usage)? {
            s.set(&k, &v)?;
        }
    }
    if let Some(seed) = global.seed {
        s.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &global.out {
        s.set("out", &out.display().to_string())?;
    }
    for (k, v) in flags {
        s.set(&k, &v)?;
    }
    Ok(s)
}

fn print_resolved(command: &str, text: &str) {
    eprintln!("# robustcls {command}: resolved configuration");
    for line in text.lines() {
        eprintln!("{line}");
    }
}

fn flag<T: ToString>(key: &str, v: &Option<T>) -> Option<(String, String)> {
    v.as_ref().map(|v| (key.to_string(), v.to_string()))
}

fn split_sets(sets: &[String]) -> Result<Vec<(String, String)>, CliError> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{s}'")))
        })
        .collect()
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    kv::parse_value(key, value).map_err(usage)
}

fn unknown(key: &str) -> CliError {
    usage(KvError::UnknownKey(key.to_string()))
}

fn required(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    path.clone().ok_or_else(|| usage(format!("missing required setting '{key}'")))
}

pub fn run(global: &Global, command: &Command) -> Result<(), CliError> {
    if let Some(n) = global.workers {
        if n == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)?;
    }
    match command {
        Command::GenDataset(a) => gen_dataset(global, a),
        Command::Degrade(a) => degrade(global, a),
        Command::Denoise(a) => denoise(global, a),
        Command::Train(a) => train(global, a),
        Command::Eval(a) => eval(global, a),
        Command::Report(a) => report(global, a),
        Command::GradCheck(a) => grad_check_cmd(global, a),
    }
}

// gen-dataset

struct GenSettings {
    out: PathBuf,
    gen: GenConfig,
}

impl Settings for GenSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let g = &mut self.gen;
        match key {
            "out" => self.out = PathBuf::from(value),
            "num_classes" => g.num_classes = parse(key, value)?,
            "per_class" => g.per_class = parse(key, value)?,
            "size" => g.size = parse(key, value)?,
            "seed" => g.seed = parse(key, value)?,
            "min_radius" => g.render.min_radius = parse(key, value)?,
            "max_radius" => g.render.max_radius = parse(key, value)?,
            "min_contrast" => g.render.min_contrast = parse(key, value)?,
            "texture_amplitude" => g.render.texture_amplitude = parse(key, value)?,
            "grain" => g.render.grain = parse(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn to_kv_text(&self) -> String {
        let (g, r): (&GenConfig, &RenderParams) = (&self.gen, &self.gen.render);
        format!(
            "out={}\nnum_classes={}\nper_class={}\nsize={}\nseed={}\nmin_radius={}\nmax_radius={}\nmin_contrast={}\ntexture_amplitude={}\ngrain={}\n",
            self.out.display(),
            g.num_classes,
            g.per_class,
            g.size,
            g.seed,
            r.min_radius,
            r.max_radius,
            r.min_contrast,
            r.texture_amplitude,
            r.grain
        )
    }
}

fn gen_dataset(global: &Global, a: &GenArgs) -> Result<(), CliError> {
    let flags = [flag("num_classes", &a.num_classes), flag("per_class", &a.per_class), flag("size", &a.size)];
    let defaults = GenSettings { out: PathBuf::from("data"), gen: GenConfig::default() };
    let s = resolve(defaults, global, flags.into_iter().flatten().collect())?;
    print_resolved("gen-dataset", &s.to_kv_text());
    let ds = gen_synthetic_dataset(&s.out, &s.gen).map_err(classify)?;
    println!(
        "wrote {} classes to {} (train {}, val {}, test {})",
        ds.num_classes(),
        s.out.display(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    Ok(())
}

// degrade

struct DegradeSettings {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    kind: DistortionKind,
    intensity: u8,
    param: Option<f64>,
    seed: u64,
}

impl Settings for DegradeSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "in" => self.input = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "kind" => self.kind = value.parse().map_err(usage)?,
            "intensity" => self.intensity = parse(key, value)?,
            "param" => self.param = Some(parse(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn to_kv_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = format!(
            "in={}\nout={}\nkind={}\nintensity={}\nseed={}\n",
            path(&self.input),
            path(&self.out),
            self.kind,
            self.intensity,
            self.seed
        );
        if let Some(p) = self.param {
            s += &format!("param={p}\n");
        }
        s
    }
}

fn degrade(global: &Global, a: &DegradeArgs) -> Result<(), CliError> {
    let flags = [
        a.input.as_ref().map(|p| ("in".to_string(), p.display().to_string())),
        flag("kind", &a.kind),
        flag("intensity", &a.intensity),
        flag("param", &a.param),
    ];
    let defaults =
        DegradeSettings { input: None, out: None, kind: DistortionKind::Gaussian, intensity: 1, param: None, seed: 0 };
    let s = resolve(defaults, global, flags.into_iter().flatten().collect())?;
    let (input, out) = (required(&s.input, "in")?, required(&s.out, "out")?);
    let spec = DistortionSpec { kind: s.kind, intensity: s.intensity, param: s.param, seed: s.seed };
    let value = spec.resolve().map_err(usage)?;
    print_resolved("degrade", &s.to_kv_text());
    if let Some(v) = value {
        eprintln!("# resolved {}={v}", s.kind.param_key().unwrap_or("param"));
    }
    let img = Image::load_pnm(&input).map_err(runtime)?;
    apply_distortion(&img, &spec).map_err(runtime)?.save_pnm(&out).map_err(runtime)
}

// denoise

struct DenoiseSettings {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    spec: DenoiserSpec,
}

impl Settings for DenoiseSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "in" => self.input = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "method" => self.spec = DenoiserSpec::default_for(value).map_err(usage)?,
            "seed" => {}
            _ => self.spec.set(key, value).map_err(usage)?,
        }
        Ok(())
    }

    fn to_kv_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = format!("in={}\nout={}\n", path(&self.input), path(&self.out));
        for pair in self.spec.to_string().split_whitespace() {
            s += pair;
            s.push('\n');
        }
        s
    }
}

fn denoise(global: &Global, a: &DenoiseArgs) -> Result<(), CliError> {
    let mut flags: Vec<(String, String)> = a.input.iter().map(|p| ("in".into(), p.display().to_string())).collect();
    flags.extend(flag("method", &a.method));
    flags.extend(split_sets(&a.set)?);
    let defaults = DenoiseSettings { input: None, out: None, spec: DenoiserSpec::default() };
    let s = resolve(defaults, global, flags)?;
    let (input, out) = (required(&s.input, "in")?, required(&s.out, "out")?);
    s.spec.validate().map_err(usage)?;
    print_resolved("denoise", &s.to_kv_text());
    let img = Image::load_pnm(&input).map_err(runtime)?;
    preprocess(&img, &s.spec).map_err(runtime)?.save_pnm(&out).map_err(runtime)
}

// train

struct TrainSettings {
    out: PathBuf,
    baseline: Option<PathBuf>,
    baseline_out: Option<PathBuf>,
    cfg: ExperimentConfig,
}

impl Settings for TrainSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "out" => self.out = PathBuf::from(value),
            "baseline" => self.baseline = Some(PathBuf::from(value)),
            "baseline_out" => self.baseline_out = Some(PathBuf::from(value)),
            _ => self.cfg.set(key, value).map_err(classify)?,
        }
        Ok(())
    }

    fn to_kv_text(&self) -> String {
        let mut s = format!("out={}\n", self.out.display());
        if let Some(p) = &self.baseline {
            s += &format!("baseline={}\n", p.display());
        }
        if let Some(p) = &self.baseline_out {
            s += &format!("baseline_out={}\n", p.display());
        }
        s + &self.cfg.to_kv_text()
    }
}

fn train(global: &Global, a: &TrainArgs) -> Result<(), CliError> {
    // `denoiser` goes first so its parameters in --set apply to it.
    let mut flags: Vec<(String, String)> = [
        flag("denoiser", &a.denoiser),
        flag("dataset", &a.dataset),
        flag("variant", &a.variant),
        flag("merge", &a.merge),
        flag("strategy", &a.strategy),
        flag("baseline", &a.baseline),
        flag("baseline_out", &a.baseline_out),
    ]
    .into_iter()
    .flatten()
    .collect();
    flags.extend(split_sets(&a.set)?);
    let defaults =
        TrainSettings { out: PathBuf::from("model.ckpt"), baseline: None, baseline_out: None, cfg: Default::default() };
    let s = resolve(defaults, global, flags)?;
    s.cfg.validate().map_err(classify)?;
    print_resolved("train", &s.to_kv_text());

    let cfg = &s.cfg;
    let ds = Dataset::load(&cfg.dataset, DEFAULT_SPLIT_SEED).map_err(classify)?;
    let data = TrainData::load(&ds, cfg.variant.uses_denoiser().then_some(&cfg.denoiser)).map_err(classify)?;
    let baseline = match &s.baseline {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(runtime)?;
            TrainOutcome::from_checkpoint(&ck).map_err(classify)?
        }
        None => train_baseline(&cfg.train, &data).map_err(classify)?,
    };
    if let Some(path) = &s.baseline_out {
        baseline.checkpoint().save(path).map_err(runtime)?;
    }
    let outcome = train_from_body(&baseline, cfg, &data).map_err(classify)?;
    eprint!("{}", outcome.log.summary());
    outcome.checkpoint().save(&s.out).map_err(runtime)?;
    println!("wrote {} ({})", s.out.display(), cfg.model_label());
    Ok(())
}

// eval

struct EvalSettings {
    checkpoint: Option<PathBuf>,
    out: PathBuf,
    label: Option<String>,
    seed: u64,
    cfg: ExperimentConfig,
}

impl Settings for EvalSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "label" => self.label = Some(value.to_string()),
            "seed" => self.seed = parse(key, value)?,
            "dataset" | "kinds" | "intensities" | "grid_seed" => self.cfg.set(key, value).map_err(classify)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn to_kv_text(&self) -> String {
        let c = &self.cfg;
        let join = |v: Vec<String>| v.join("+");
        format!(
            "checkpoint={}\nout={}\nlabel={}\nseed={}\ndataset={}\nkinds={}\nintensities={}\ngrid_seed={}\n",
            self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            self.out.display(),
            self.label.clone().unwrap_or_default(),
            self.seed,
            c.dataset.display(),
            join(c.kinds.iter().map(|k| k.to_string()).collect()),
            join(c.intensities.iter().map(|i| i.to_string()).collect()),
            c.grid_seed
        )
    }
}

fn default_label(outcome: &TrainOutcome) -> String {
    let merge = if outcome.model.merge == Merge::Sum { "sum" } else { "concat" };
    let method = outcome.denoiser.map(|d| d.method_name()).unwrap_or("none");
    match outcome.variant {
        Variant::SingleBaseline => "baseline".into(),
        Variant::SinglePreprocessed => format!("preprocessed_{method}"),
        Variant::Dual => format!("dual_{merge}_{method}"),
    }
}

fn eval(global: &Global, a: &EvalArgs) -> Result<(), CliError> {
    let flags = [
        flag("checkpoint", &a.checkpoint),
        flag("dataset", &a.dataset),
        flag("label", &a.label),
        flag("kinds", &a.kinds),
        flag("intensities", &a.intensities),
        flag("grid_seed", &a.grid_seed),
    ];
    let defaults =
        EvalSettings { checkpoint: None, out: PathBuf::from("eval.csv"), label: None, seed: 0, cfg: Default::default() };
    let mut s = resolve(defaults, global, flags.into_iter().flatten().collect())?;
    let ck_path = required(&s.checkpoint, "checkpoint")?;
    s.cfg.validate().map_err(classify)?;
    let ck = Checkpoint::load(&ck_path).map_err(runtime)?;
    let outcome = TrainOutcome::from_checkpoint(&ck).map_err(classify)?;
    if s.label.is_none() {
        s.label = Some(default_label(&outcome));
    }
    print_resolved("eval", &s.to_kv_text());
    let ds = Dataset::load(&s.cfg.dataset, DEFAULT_SPLIT_SEED).map_err(classify)?;
    if ds.num_classes() != outcome.model.classes() {
        return Err(usage(format!(
            "checkpoint has {} classes but the dataset has {}",
            outcome.model.classes(),
            ds.num_classes()
        )));
    }
    let images = ds.load_images(Split::Test).map_err(classify)?;
    let labels = ds.labels(Split::Test);
    let label = s.label.clone().expect("set above");
    let report = evaluate(&outcome, &label, s.seed, &images, &labels, &s.cfg.grid()).map_err(classify)?;
    write_output(&s.out, &report.to_csv())?;
    for (cell, acc) in &report.cells {
        eprintln!("{cell}: {:.2}%", acc * 100.0);
    }
    Ok(())
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    if path == Path::new("-") {
        print!("{text}");
        return Ok(());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    fs::write(path, text).map_err(runtime)
}

// report

struct ReportSettings {
    out: PathBuf,
    inputs: Vec<PathBuf>,
}

impl Settings for ReportSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "out" => self.out = PathBuf::from(value),
            "inputs" => self.inputs = value.split('+').filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
            "seed" => {}
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn to_kv_text(&self) -> String {
        let inputs: Vec<String> = self.inputs.iter().map(|p| p.display().to_string()).collect();
        format!("out={}\ninputs={}\n", self.out.display(), inputs.join("+"))
    }
}

fn report(global: &Global, a: &ReportArgs) -> Result<(), CliError> {
    let flags = (!a.inputs.is_empty()).then(|| ("inputs".to_string(), a.inputs.join("+")));
    let defaults = ReportSettings { out: PathBuf::from("report"), inputs: Vec::new() };
    let s = resolve(defaults, global, flags.into_iter().collect())?;
    if s.inputs.is_empty() {
        return Err(usage("report needs at least one evaluation CSV"));
    }
    print_resolved("report", &s.to_kv_text());
    let mut reports: Vec<EvalReport> = Vec::new();
    for path in &s.inputs {
        let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        reports.extend(EvalReport::from_csv(&text).map_err(runtime)?);
    }
    let files = write_report(&reports, &s.out).map_err(runtime)?;
    print!("{}", fs::read_to_string(&files.table).map_err(runtime)?);
    eprintln!("wrote {}, {} and {} chart(s)", files.csv.display(), files.table.display(), files.charts.len());
    Ok(())
}

// grad-check

struct GradSettings {
    seed: u64,
    merge: Merge,
    linear_only: bool,
    size: usize,
    batch: usize,
    classes: usize,
    eps: f64,
    per_tensor: usize,
    tolerance: f64,
}

impl Settings for GradSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "merge" => self.merge = value.parse().map_err(|_| usage(format!("merge must be concat or sum, got '{value}'")))?,
            "linear_only" => self.linear_only = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "per_tensor" => self.per_tensor = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn to_kv_text(&self) -> String {
        format!(
            "seed={}\nmerge={}\nlinear_only={}\nsize={}\nbatch={}\nclasses={}\neps={}\nper_tensor={}\ntolerance={}\n",
            self.seed,
            self.merge,
            self.linear_only,
            self.size,
            self.batch,
            self.classes,
            self.eps,
            self.per_tensor,
            self.tolerance
        )
    }
}

fn grad_check_cmd(global: &Global, a: &GradCheckArgs) -> Result<(), CliError> {
    let mut flags: Vec<(String, String)> = [
        flag("merge", &a.merge),
        flag("size", &a.size),
        flag("batch", &a.batch),
        flag("classes", &a.classes),
        flag("eps", &a.eps),
        flag("per_tensor", &a.per_tensor),
        flag("tolerance", &a.tolerance),
    ]
    .into_iter()
    .flatten()
    .collect();
    if a.linear_only {
        flags.push(("linear_only".into(), "true".into()));
    }
    let defaults = GradSettings {
        seed: 0,
        merge: Merge::Concat,
        linear_only: false,
        size: 16,
        batch: 2,
        classes: 4,
        eps: 1e-3,
        per_tensor: 200,
        tolerance: 1e-2,
    };
    let s = resolve(defaults, global, flags)?;
    if s.size == 0 || s.size % 8 != 0 || !(1..=4).contains(&s.batch) || s.classes < 2 || !(s.eps > 0.0) {
        return Err(usage("need size a positive multiple of 8, batch in 1..=4, classes >= 2 and eps > 0"));
    }
    print_resolved("grad-check", &s.to_kv_text());
    let mut rng = rng_from_seed(s.seed);
    let (model, x_orig, x_aug) = if s.linear_only {
        let m = linear_only_model(s.classes, s.merge, &mut rng).map_err(runtime)?;
        (m, ramp_batch(s.batch, s.size, &mut rng), ramp_batch(s.batch, s.size, &mut rng))
    } else {
        let m = Model::dual(s.classes, s.merge, &mut rng).map_err(runtime)?;
        (m, random_batch(s.batch, s.size, &mut rng), random_batch(s.batch, s.size, &mut rng))
    };
    let labels: Vec<usize> = (0..s.batch).map(|i| i % s.classes).collect();
    let cfg = GradCheckConfig { eps: s.eps, per_tensor: s.per_tensor, seed: derive_seed(s.seed, 1), ..Default::default() };
    let report = grad_check(&model, &x_orig, Some(&x_aug), &labels, &cfg).map_err(runtime)?;
    println!("{:<28} {:>7} {:>7} {:>12} {:>12}", "tensor", "checked", "kinked", "rel_error", "max_elem");
    for t in &report.tensors {
        println!(
            "{:<28} {:>7} {:>7} {:>12.3e} {:>12.3e}",
            t.name, t.checked, t.frozen, t.rel_error, t.max_elementwise
        );
    }
    let worst = report.max_rel_error();
    println!("max relative error {worst:.3e} (tolerance {:.1e})", s.tolerance);
    if worst < s.tolerance {
        Ok(())
    } else {
        Err(runtime(format!("gradient check failed: {worst:.3e} >= {:.1e}", s.tolerance)))
    }
}
