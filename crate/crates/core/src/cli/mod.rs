//! Command-line entry point: `extract`, `synth`, `train`, `eval`, `infer`
//! and `params`.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.

pub mod deviation;
pub mod overlay;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

pub use deviation::{center_deviation, DeviationRecord, DEFAULT_BAND};
pub use overlay::{overlay, OverlayMasks};

use crate::data::io::{ensure_dir, read_image, read_mask, write_image, write_mask};
use crate::data::manifest::{load_entry, manifest_dir};
use crate::data::resize::{resize_image_bilinear, resize_mask_nearest};
use crate::data::{extract_frames, load_manifest, AugmentationSpec, DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::DEFAULT_TAU;
use crate::models::{build, count_parameters, Arch, ModelConfig};
use crate::raster::Mask;
use crate::synth::{generate_dataset_with_split, SceneParams, DEFAULT_VAL_FRACTION};
use crate::train::predict::report_from_predictions;
use crate::train::{self, load_checkpoint, predict_images, AugmentMode, LanePrediction, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "laneseg", version, about = "Lane segmentation toolkit")]
struct Cli {
    /// Worker threads. The default of 1 runs sequentially; more enables the
    /// rayon pool.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decompose a YUV4MPEG2 video into PNG frames.
    Extract(ExtractArgs),
    /// Generate a synthetic road-scene dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or saved predictions) against a dataset.
    Eval(EvalArgs),
    /// Predict lane masks for frames or a video.
    Infer(InferArgs),
    /// Print the parameter count of an architecture.
    Params(ParamsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    Fpn,
    #[value(name = "unet_attn")]
    UnetAttn,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Fpn => Arch::Fpn,
            ArchArg::UnetAttn => Arch::UnetAttn,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image size as HxW.
    #[arg(long, value_parser = parse_size, default_value = "224x224")]
    size: (usize, usize),
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_fraction: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    arch: ArchArg,
    /// Dataset directory (containing manifest.json) or manifest path.
    #[arg(long)]
    data: PathBuf,
    /// JSON file with optional "model" and "train" sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Network input as HxW.
    #[arg(long, value_parser = parse_size)]
    input_size: Option<(usize, usize)>,
    #[arg(long)]
    base_width: Option<usize>,
    /// Augmentation spec (JSON list of transforms).
    #[arg(long)]
    augment: Option<PathBuf>,
    #[arg(long, value_parser = ["offline", "online"])]
    augment_mode: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory, or a training output directory holding `best/`.
    #[arg(long, required_unless_present = "pred", conflicts_with = "pred")]
    ckpt: Option<PathBuf>,
    /// Directory of predicted `<frame>_left.png` / `<frame>_right.png` masks.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Frame directory or `.y4m` video.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overlay: bool,
    #[arg(long)]
    deviation: bool,
    /// Measurement band as LO,HI row fractions.
    #[arg(long, value_parser = parse_band, default_value = "0.70,0.95")]
    band: (f64, f64),
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    #[arg(long, value_enum)]
    arch: ArchArg,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also print the per-layer table.
    #[arg(long)]
    summary: bool,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    if h == 0 || w == 0 {
        return Err(format!("size '{s}' must be positive"));
    }
    Ok((h, w))
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LO,HI, got '{s}'"))?;
    let band = (
        lo.trim().parse().map_err(|_| format!("bad band start '{lo}'"))?,
        hi.trim().parse().map_err(|_| format!("bad band end '{hi}'"))?,
    );
    deviation::check_band(band).map_err(|e| e.to_string())?;
    Ok(band)
}

/// Run the CLI on `argv` (including the program name) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    exec::configure_workers(cli.workers);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Argument(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Extract(a) => cmd_extract(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Params(a) => cmd_params(a),
    }
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let n = extract_frames(&a.video, &a.out, a.stride)?;
    println!("wrote {n} frames to {}", a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let params = SceneParams::for_size(a.size.0, a.size.1);
    let m = generate_dataset_with_split(a.seed, a.n, &params, &a.out, a.val_fraction)?;
    let c = m.counts();
    println!("wrote {} scenes ({} train, {} val) to {}", a.n, c.train, c.val, a.out.display());
    Ok(())
}

/// Recursively overlay `patch` onto `base`.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn overlay_config<T>(defaults: &T, patch: Option<&Value>, what: &str) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(defaults)?;
    if let Some(p) = patch {
        merge_json(&mut v, p);
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{what} section: {e}")))
}

/// `(model, train)` sections of a config file.
fn read_config_file(path: Option<&Path>) -> Result<(Option<Value>, Option<Value>)> {
    let Some(path) = path else {
        return Ok((None, None));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", path.display())))?;
    if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "model" | "train")) {
        return Err(Error::Config(format!("{}: unknown section '{k}'", path.display())));
    }
    Ok((obj.get("model").cloned(), obj.get("train").cloned()))
}

fn model_config(arch: Arch, patch: Option<&Value>) -> Result<ModelConfig> {
    let mut cfg: ModelConfig = overlay_config(&ModelConfig::default_for(arch), patch, "model")?;
    cfg.arch = arch;
    Ok(cfg)
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.json")
    } else {
        data.to_path_buf()
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let arch: Arch = a.arch.into();
    let (model_patch, train_patch) = read_config_file(a.config.as_deref())?;
    let mut mcfg = model_config(arch, model_patch.as_ref())?;
    let mut tcfg: TrainConfig = overlay_config(&TrainConfig::default_for(arch), train_patch.as_ref(), "train")?;
    if let Some(seed) = a.seed {
        tcfg.seed = seed;
        mcfg.init_seed = seed;
    }
    if let Some(v) = a.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = a.lr {
        tcfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        tcfg.batch_size = v;
    }
    if a.max_steps.is_some() {
        tcfg.max_steps = a.max_steps;
    }
    if let Some((h, w)) = a.input_size {
        mcfg.input_size = [h, w];
    }
    if let Some(v) = a.base_width {
        mcfg.base_width = v;
    }
    if let Some(p) = &a.augment {
        tcfg.augmentation = Some(AugmentationSpec::load(p)?);
    }
    if let Some(m) = &a.augment_mode {
        tcfg.augment_mode = if m == "online" { AugmentMode::Online } else { AugmentMode::Offline };
    }
    let path = manifest_path(&a.data);
    let manifest = load_manifest(&path)?;
    let model = build(&mcfg)?;
    let outcome = train::train(model, &manifest, &manifest_dir(&path), &tcfg, &a.out)?;
    for r in &outcome.last.history {
        println!("{}", serde_json::to_string(r)?);
    }
    println!(
        "trained {} steps; best epoch {}; checkpoints in {}",
        outcome.step_losses.len(),
        outcome.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn checkpoint_dir(p: &Path) -> PathBuf {
    if !p.join(train::checkpoint::CONFIG_FILE).exists() && p.join("best").is_dir() {
        p.join("best")
    } else {
        p.to_path_buf()
    }
}

fn split_entries(m: &DatasetManifest, split: SplitArg) -> Vec<&crate::data::ManifestEntry> {
    m.entries
        .iter()
        .filter(|e| match split {
            SplitArg::All => true,
            SplitArg::Train => e.split == Split::Train,
            SplitArg::Val => e.split == Split::Val,
        })
        .collect()
}

fn read_prediction(dir: &Path, frame_id: &str, height: usize, width: usize) -> Result<LanePrediction> {
    let fit = |m: Mask| {
        if (m.height, m.width) == (height, width) {
            m
        } else {
            resize_mask_nearest(&m, height, width)
        }
    };
    let left = fit(read_mask(&dir.join(format!("{frame_id}_left.png")))?);
    let right = fit(read_mask(&dir.join(format!("{frame_id}_right.png")))?);
    let union = left.or(&right)?;
    Ok(LanePrediction { left, right, union })
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let path = manifest_path(&a.data);
    let manifest = load_manifest(&path)?;
    let base = manifest_dir(&path);
    let entries = split_entries(&manifest, a.split);
    if entries.is_empty() {
        return Err(Error::Argument(format!("no entries in the {:?} split", a.split)));
    }
    let samples: Vec<Sample> = entries.iter().map(|e| load_entry(&base, e)).collect::<Result<_>>()?;
    let report = match (&a.ckpt, &a.pred) {
        (Some(ckpt), _) => {
            let bundle = load_checkpoint(&checkpoint_dir(ckpt))?;
            let threshold = a.threshold.unwrap_or(bundle.train_config.threshold);
            train::evaluate(&bundle.model, &samples, threshold, a.tau, bundle.train_config.batch_size)?
        }
        (None, Some(pred)) => {
            let preds = samples
                .iter()
                .map(|s| read_prediction(pred, &s.frame_id, s.height(), s.width()))
                .collect::<Result<Vec<_>>>()?;
            report_from_predictions(&preds, &samples, a.tau)?
        }
        (None, None) => return Err(Error::Argument("eval needs --ckpt or --pred".into())),
    };
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&a.report, text).map_err(|e| Error::io(&a.report, e))?;
    let p = &report.pixel;
    println!(
        "accuracy {:.4} precision {:.4} recall {:.4} iou_fg {:.4} iou_mean {:.4}",
        p.accuracy, p.precision, p.recall, p.iou_fg, p.iou_mean
    );
    println!(
        "frames {}: both lanes {} ({}), at least one {} ({})",
        report.frame.total_frames,
        report.frame.both_detected,
        report.frame.display_acc_both(),
        report.frame.one_detected,
        report.frame.display_acc_one()
    );
    Ok(())
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    frames.sort();
    Ok(frames)
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Error::Argument(format!("alpha {} outside [0, 1]", a.alpha)));
    }
    let bundle = load_checkpoint(&checkpoint_dir(&a.ckpt))?;
    let model = &bundle.model;
    let threshold = a.threshold.unwrap_or(bundle.train_config.threshold);
    ensure_dir(&a.out)?;
    let frame_dir = if a.input.is_dir() {
        a.input.clone()
    } else {
        let dir = a.out.join("frames");
        extract_frames(&a.input, &dir, 1)?;
        dir
    };
    let frames = list_frames(&frame_dir)?;
    if frames.is_empty() {
        return Err(Error::Argument(format!("no frames found in {}", frame_dir.display())));
    }
    let mask_dir = a.out.join("masks");
    ensure_dir(&mask_dir)?;
    let overlay_dir = a.out.join("overlay");
    if a.overlay {
        ensure_dir(&overlay_dir)?;
    }
    let mut deviations = Vec::new();
    let [ih, iw] = model.config().input_size;
    for chunk in frames.chunks(bundle.train_config.batch_size.max(1)) {
        let originals = chunk.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
        let inputs: Vec<_> = originals.iter().map(|img| resize_image_bilinear(img, ih, iw)).collect();
        let refs: Vec<_> = inputs.iter().collect();
        let preds = predict_images(model, &refs, threshold, chunk.len())?;
        for ((path, img), pred) in chunk.iter().zip(&originals).zip(preds) {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let pred = pred.resized(img.height, img.width);
            write_mask(&mask_dir.join(format!("{id}_left.png")), &pred.left)?;
            write_mask(&mask_dir.join(format!("{id}_right.png")), &pred.right)?;
            write_mask(&mask_dir.join(format!("{id}_union.png")), &pred.union)?;
            if a.overlay {
                let masks = match model.arch() {
                    Arch::Fpn => OverlayMasks::Lanes {
                        left: &pred.left,
                        right: &pred.right,
                    },
                    Arch::UnetAttn => OverlayMasks::Union(&pred.union),
                };
                write_image(&overlay_dir.join(format!("{id}.png")), &overlay(img, masks, a.alpha)?)?;
            }
            if a.deviation {
                deviations.push(center_deviation(&id, &pred.left, &pred.right, a.band, img.width)?);
            }
        }
    }
    if a.deviation {
        let path = a.out.join("deviation.jsonl");
        let mut buf = Vec::new();
        for d in &deviations {
            serde_json::to_writer(&mut buf, d)?;
            buf.write_all(b"\n").expect("writing to a Vec");
        }
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    println!("processed {} frames into {}", frames.len(), a.out.display());
    Ok(())
}

fn cmd_params(a: ParamsArgs) -> Result<()> {
    let (model_patch, _) = read_config_file(a.config.as_deref())?;
    let cfg = model_config(a.arch.into(), model_patch.as_ref())?;
    let model = build(&cfg)?;
    if a.summary {
        print!("{}", model.summary_text());
    }
    println!("{}", count_parameters(&model));
    Ok(())
}
