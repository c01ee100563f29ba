//! Command-line front end. Reports are JSON on stdout; diagnostics go to
//! stderr.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::affinity::{affinity_eval_f64, AffinityConfig, AffinityMode, ModelingFn};
use crate::bench::{bench_affinity, BenchConfig};
use crate::error::{Error, Result};
use crate::eval::confusion;
use crate::experiment::{mean_miou, paired_gains, run_suite, Variant};
use crate::gradcheck::{grad_check, GradTarget, InstanceSize};
use crate::io::{labelmap_read_pgm, labelmap_write_pgm, tensor_read, tensor_write};
use crate::metric::{lr_loss, reassign, compute_centroids, LrConfig};
use crate::model::checkpoint;
use crate::model::train::{metrics_csv, refine, refine_image, TrainConfig, TrainItem, Trainer};
use crate::pairs::{build_pairs, pair_counts, KernelSet};
use crate::synth::{generate, read_scene, write_scene, Corruption, SceneSpec};
use crate::tensor::{validate_labels, DenseTensor, LabelMap, NEUTRAL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CONTRACT: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandResult {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug, Parser)]
#[command(name = "affinity-lr", version, about = "Affinity and label-reassign losses for pseudo-label refinement")]
struct Cli {
    /// Worker threads for loss evaluation (results are identical for any value).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the standard or adaptive affinity loss.
    AffinityLoss(AffinityArgs),
    /// Evaluate the label-reassign loss.
    LrLoss(LrArgs),
    /// Reassign labeled pixels to their most similar class centroid.
    Reassign(ReassignArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Synthetic scene tools.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Train the toy network on one scene directory or generated scene.
    Train(TrainArgs),
    /// Predict a dense label map with a trained checkpoint.
    Refine(RefineArgs),
    /// Evaluation metrics.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Run the seeded refinement suite over several loss configurations.
    Suite(SuiteArgs),
}

#[derive(Debug, Args)]
struct AffinityArgs {
    #[arg(long)]
    probs: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    conf: Option<PathBuf>,
    #[arg(long, value_parser = ["sa", "aa"])]
    mode: String,
    #[arg(long, default_value = "4,8,12,24")]
    kernels: String,
    #[arg(long, default_value_t = 3.0)]
    margin: f64,
    #[arg(long, default_value = "max")]
    modeling_fn: String,
    #[arg(long)]
    grad_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LrArgs {
    #[arg(long)]
    embed: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    conf: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    margin_n: f64,
    #[arg(long)]
    grad_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReassignArgs {
    #[arg(long)]
    embed: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    conf: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "8x8x3")]
    size: String,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Generate a scene directory from a JSON spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Mean IoU of a predicted map against ground truth.
    Miou {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        classes: usize,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Affinity loss forward and backward timing.
    Affinity {
        #[arg(long, default_value = "321x321x21")]
        size: String,
        #[arg(long, default_value = "4,8,12,24")]
        kernels: String,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "aa", value_parser = ["sa", "aa"])]
        mode: String,
    },
}

#[derive(Debug, Args)]
struct SuiteArgs {
    /// Number of scenes (seeds 0..N).
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Comma-separated variants: baseline, sa, aa-max, aa-min, aa-plus, full.
    #[arg(long, default_value = "baseline,full")]
    variants: String,
    /// Optional RunConfig JSON overriding the scene template and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Training run description for `train` and `suite`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Scene directory (relative paths resolve against the config file).
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Scene to generate when `data` is absent.
    #[serde(default)]
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    /// The acceptance-suite setup: 64x64 ambiguity scenes, dilations 1,2,4,8.
    pub fn suite_default() -> Self {
        let mut train = TrainConfig::default();
        train.affinity.kernels = KernelSet::new(vec![1, 2, 4, 8]).expect("valid kernels");
        Self {
            data: None,
            scene: Some(SceneSpec::new(64, 64, Corruption::Ambiguity, 0)),
            train,
        }
    }
}

/// Parse and execute `argv` (including the program name).
pub fn run<I, S>(argv: I) -> CommandResult
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    return CommandResult {
                        code: EXIT_OK,
                        stdout: e.to_string(),
                        stderr: String::new(),
                    }
                }
                _ => EXIT_VALIDATION,
            };
            let msg = e.to_string();
            return CommandResult {
                code,
                stdout: error_json("argument", msg.trim()),
                stderr: msg,
            };
        }
    };
    match dispatch(&cli) {
        Ok(Outcome { report, code, note }) => CommandResult {
            code,
            stdout: to_line(&report),
            stderr: note,
        },
        Err(e) => {
            let (code, kind) = classify(&e);
            let msg = e.to_string();
            CommandResult {
                code,
                stdout: error_json(kind, &msg),
                stderr: format!("error: {msg}\n"),
            }
        }
    }
}

fn classify(e: &Error) -> (i32, &'static str) {
    match e {
        Error::Io { .. } => (EXIT_IO, "io"),
        Error::Numerical(_) => (EXIT_CONTRACT, "numerical"),
        Error::Format { .. } => (EXIT_VALIDATION, "format"),
        Error::Json(_) => (EXIT_VALIDATION, "json"),
        Error::Validation(_) => (EXIT_VALIDATION, "validation"),
        Error::Argument(_) => (EXIT_VALIDATION, "argument"),
    }
}

fn error_json(kind: &str, msg: &str) -> String {
    to_line(&json!({ "error": { "kind": kind, "message": msg } }))
}

fn to_line(v: &Value) -> String {
    let mut s = serde_json::to_string(v).expect("JSON values serialize");
    s.push('\n');
    s
}

struct Outcome {
    report: Value,
    code: i32,
    note: String,
}

impl Outcome {
    fn ok(report: Value) -> Self {
        Self {
            report,
            code: EXIT_OK,
            note: String::new(),
        }
    }
}

fn flag<T: std::str::FromStr<Err = Error>>(name: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|e: Error| Error::Argument(format!("--{name} '{value}': {e}")))
}

fn threads(cli: &Cli) -> Result<usize> {
    if cli.threads == 0 {
        return Err(Error::Argument("--threads must be at least 1, got 0".into()));
    }
    Ok(cli.threads)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let threads = threads(cli)?;
    match &cli.command {
        Command::AffinityLoss(a) => affinity_cmd(a, threads),
        Command::LrLoss(a) => lr_cmd(a),
        Command::Reassign(a) => reassign_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
        Command::Synth {
            command: SynthCommand::Gen { spec, out },
        } => synth_cmd(spec, out),
        Command::Train(a) => train_cmd(a, threads),
        Command::Refine(a) => refine_cmd(a),
        Command::Eval {
            command: EvalCommand::Miou { pred, gt, classes },
        } => miou_cmd(pred, gt, *classes),
        Command::Bench {
            command:
                BenchCommand::Affinity {
                    size,
                    kernels,
                    repeat,
                    seed,
                    mode,
                },
        } => {
            let cfg = BenchConfig {
                size: flag("size", size)?,
                kernels: flag("kernels", kernels)?,
                repeat: *repeat,
                seed: *seed,
                threads,
                mode: parse_mode(mode),
            };
            let r = bench_affinity(&cfg)?;
            let note = format!(
                "{} pairs, {:.3} s per forward+backward, {:.3e} pairs/s\n",
                r.pairs, r.mean_secs, r.pairs_per_sec
            );
            Ok(Outcome {
                report: serde_json::to_value(r)?,
                code: EXIT_OK,
                note,
            })
        }
        Command::Suite(a) => suite_cmd(a, threads),
    }
}

fn parse_mode(mode: &str) -> AffinityMode {
    if mode == "sa" {
        AffinityMode::Sa
    } else {
        AffinityMode::Aa
    }
}

fn read_labels_for(path: &Path, h: usize, w: usize, classes: usize, flag_name: &str) -> Result<LabelMap> {
    let labels = labelmap_read_pgm(path)?;
    if (labels.height(), labels.width()) != (h, w) {
        return Err(Error::Validation(format!(
            "--{flag_name} {} is {}x{} but the input tensor is {h}x{w}",
            path.display(),
            labels.height(),
            labels.width()
        )));
    }
    validate_labels(&labels, classes)
        .map_err(|e| Error::Validation(format!("--{flag_name} {}: {e}", path.display())))?;
    Ok(labels)
}

fn read_conf(path: &Path, h: usize, w: usize) -> Result<DenseTensor> {
    let conf = tensor_read(path)?;
    let (ch, cw, cc) = conf.hwc()?;
    if (ch, cw, cc) != (h, w, 1) {
        return Err(Error::Validation(format!(
            "--conf {} has dims {:?}, expected [{h}, {w}]",
            path.display(),
            conf.dims()
        )));
    }
    if let Some((k, v)) = conf.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Validation(format!(
            "--conf {}: value {v} at pixel ({}, {}) outside [0, 1]",
            path.display(),
            k / w,
            k % w
        )));
    }
    Ok(conf)
}

fn affinity_cmd(a: &AffinityArgs, threads: usize) -> Result<Outcome> {
    let mode = parse_mode(&a.mode);
    let cfg = AffinityConfig {
        margin_m: a.margin,
        kernels: flag("kernels", &a.kernels)?,
        mode,
        modeling_fn: flag::<ModelingFn>("modeling-fn", &a.modeling_fn)?,
        threads,
        ..Default::default()
    };
    if !(a.margin > 0.0 && a.margin.is_finite()) {
        return Err(Error::Argument(format!("--margin must be positive, got {}", a.margin)));
    }
    match (mode, &a.conf) {
        (AffinityMode::Aa, None) => {
            return Err(Error::Argument("--mode aa requires --conf (per-pixel confidence map)".into()))
        }
        (AffinityMode::Sa, Some(_)) => {
            return Err(Error::Argument("--conf is only used with --mode aa".into()))
        }
        _ => {}
    }
    let probs = tensor_read(&a.probs)?;
    let (h, w, c) = probs.hwc()?;
    let labels = read_labels_for(&a.labels, h, w, c, "labels")?;
    let conf = a.conf.as_ref().map(|p| read_conf(p, h, w)).transpose()?;
    let pairs = build_pairs(&labels, &cfg.kernels)?;
    let conf64 = conf.as_ref().map(DenseTensor::to_f64);
    let eval = affinity_eval_f64(&probs.to_f64(), c, conf64.as_deref(), &pairs, &cfg)?;
    let grad_written_to = match &a.grad_out {
        Some(p) => {
            tensor_write(&DenseTensor::from_f64(probs.dims().to_vec(), &eval.grad_probs)?, p)?;
            Some(p.display().to_string())
        }
        None => None,
    };
    Ok(Outcome::ok(json!({
        "mode": a.mode,
        "modeling_fn": cfg.modeling_fn,
        "margin": cfg.margin_m,
        "kernels": cfg.kernels.to_string(),
        "total": eval.total,
        "per_dilation": eval.per_dilation,
        "pair_counts": pair_counts(&pairs),
        "grad_written_to": grad_written_to,
    })))
}

fn lr_inputs(embed: &Path, labels: &Path, conf: &Path) -> Result<(DenseTensor, LabelMap, DenseTensor)> {
    let embed = tensor_read(embed)?;
    let (h, w, _) = embed.hwc()?;
    let labels = read_labels_for(labels, h, w, NEUTRAL as usize, "labels")?;
    let conf = read_conf(conf, h, w)?;
    Ok((embed, labels, conf))
}

fn lr_config(gamma: f64, margin_n: f64) -> Result<LrConfig> {
    let cfg = LrConfig {
        gamma,
        margin_n,
        ..Default::default()
    };
    cfg.validate()
        .map_err(|e| Error::Argument(format!("--gamma {gamma} / --margin-n {margin_n}: {e}")))?;
    Ok(cfg)
}

fn lr_cmd(a: &LrArgs) -> Result<Outcome> {
    let cfg = lr_config(a.gamma, a.margin_n)?;
    let (embed, labels, conf) = lr_inputs(&a.embed, &a.labels, &a.conf)?;
    let r = lr_loss(&embed, &labels, &conf, &cfg)?;
    let grad_written_to = match &a.grad_out {
        Some(p) => {
            tensor_write(&r.grad_embed, p)?;
            Some(p.display().to_string())
        }
        None => None,
    };
    let classes: Vec<u8> = r.centroids.centroids.iter().map(|c| c.class).collect();
    Ok(Outcome::ok(json!({
        "total": r.total,
        "l_bg": r.l_minus,
        "l_fg": r.l_plus,
        "gamma": cfg.gamma,
        "margin_n": cfg.margin_n,
        "centroid_classes": classes,
        "grad_written_to": grad_written_to,
    })))
}

fn reassign_cmd(a: &ReassignArgs) -> Result<Outcome> {
    let cfg = lr_config(a.gamma, LrConfig::default().margin_n)?;
    let (embed, labels, conf) = lr_inputs(&a.embed, &a.labels, &a.conf)?;
    let centroids = compute_centroids(&embed, &labels, &conf)?;
    let r = reassign(&embed, &labels, &centroids, &cfg)?;
    let out = r.apply(&labels);
    labelmap_write_pgm(&out, &a.out)?;
    let changed = out
        .labels()
        .iter()
        .zip(labels.labels())
        .filter(|(a, b)| a != b)
        .count();
    Ok(Outcome::ok(json!({
        "out": a.out.display().to_string(),
        "labeled": r.pixels.len(),
        "changed": changed,
        "foreground": r.fg.len(),
        "background": r.bg.len(),
    })))
}

fn grad_check_cmd(a: &GradCheckArgs) -> Result<Outcome> {
    let target: GradTarget = flag("target", &a.target)?;
    let size: InstanceSize = flag("size", &a.size)?;
    let r = grad_check(target, size, a.seed)?;
    let code = if r.passed { EXIT_OK } else { EXIT_CONTRACT };
    let note = format!(
        "{target} {size}: max relative error {:.3e} over {} coordinates ({} skipped), {}\n",
        r.max_rel_err,
        r.checked,
        r.skipped,
        if r.passed { "ok" } else { "FAILED" }
    );
    Ok(Outcome {
        report: serde_json::to_value(r)?,
        code,
        note,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn synth_cmd(spec: &Path, out: &Path) -> Result<Outcome> {
    let spec: SceneSpec = read_json(spec)?;
    let scene = generate(&spec)?;
    let files = write_scene(&scene, &spec, out)?;
    Ok(Outcome::ok(json!({
        "out": out.display().to_string(),
        "files": files,
        "labeled": scene.pseudo.num_labeled(),
        "band_size": scene.band_size,
        "flipped": scene.flipped,
        "image_labels": scene.image_labels,
    })))
}

/// Training item plus ground truth (if available) described by a RunConfig.
fn load_run_data(cfg: &RunConfig, base: &Path) -> Result<(TrainItem, Option<LabelMap>)> {
    match (&cfg.data, &cfg.scene) {
        (Some(dir), None) => {
            let dir = if dir.is_relative() { base.join(dir) } else { dir.clone() };
            let s = read_scene(&dir)?;
            Ok((TrainItem::new(&s.image, s.pseudo, s.labels.image_labels)?, s.gt))
        }
        (None, Some(spec)) => {
            let s = generate(spec)?;
            Ok((TrainItem::new(&s.image, s.pseudo.clone(), s.image_labels.clone())?, Some(s.gt)))
        }
        _ => Err(Error::Argument(
            "--config must set exactly one of \"data\" (scene directory) or \"scene\" (spec)".into(),
        )),
    }
}

fn train_cmd(a: &TrainArgs, threads: usize) -> Result<Outcome> {
    let mut cfg: RunConfig = read_json(&a.config)?;
    cfg.train.affinity.threads = threads;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let (item, gt) = load_run_data(&cfg, base)?;
    let mut trainer = Trainer::new(cfg.train.clone(), &item)?;
    let log = trainer.run(&item)?;
    let refined = refine(&trainer.model, &item)?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let metrics = a.out.join("metrics.csv");
    fs::write(&metrics, metrics_csv(&log)).map_err(|e| Error::io(&metrics, e))?;
    checkpoint::save(&trainer.model, a.out.join("ckpt"))?;
    labelmap_write_pgm(&refined, a.out.join("refined.pgm"))?;

    let classes = item.num_classes();
    let scores = gt
        .map(|gt| -> Result<Value> {
            Ok(json!({
                "pseudo_miou": crate::eval::miou(&item.pseudo, &gt, classes)?.miou,
                "refined_miou": crate::eval::miou(&refined, &gt, classes)?.miou,
            }))
        })
        .transpose()?;
    Ok(Outcome::ok(json!({
        "out": a.out.display().to_string(),
        "steps": log.len(),
        "final": log.last(),
        "scores": scores,
    })))
}

fn refine_cmd(a: &RefineArgs) -> Result<Outcome> {
    let model = checkpoint::load(&a.ckpt)?;
    let image = tensor_read(a.input.join(crate::synth::IMAGE_FILE))?;
    let (h, w, c) = image.hwc()?;
    if c != model.shape.in_channels {
        return Err(Error::Validation(format!(
            "--in image has {c} channels but the checkpoint expects {}",
            model.shape.in_channels
        )));
    }
    let pred = refine_image(&model, &image.to_f64(), h, w)?;
    labelmap_write_pgm(&pred, &a.out)?;
    let classes = model.shape.num_classes;
    let mut counts = vec![0usize; classes];
    for &l in pred.labels() {
        counts[l as usize] += 1;
    }
    let gt_path = a.input.join(crate::synth::GT_FILE);
    let miou = if gt_path.exists() {
        Some(crate::eval::miou(&pred, &labelmap_read_pgm(&gt_path)?, classes)?.miou)
    } else {
        None
    };
    Ok(Outcome::ok(json!({
        "out": a.out.display().to_string(),
        "height": h,
        "width": w,
        "class_counts": counts,
        "miou": miou,
    })))
}

fn miou_cmd(pred: &Path, gt: &Path, classes: usize) -> Result<Outcome> {
    if classes == 0 || classes > NEUTRAL as usize {
        return Err(Error::Argument(format!("--classes must be in 1..=255, got {classes}")));
    }
    let p = labelmap_read_pgm(pred)?;
    let g = labelmap_read_pgm(gt)?;
    validate_labels(&p, classes).map_err(|e| Error::Validation(format!("--pred {}: {e}", pred.display())))?;
    validate_labels(&g, classes).map_err(|e| Error::Validation(format!("--gt {}: {e}", gt.display())))?;
    if (p.height(), p.width()) != (g.height(), g.width()) {
        return Err(Error::Argument(format!(
            "--pred is {}x{} but --gt is {}x{}",
            p.height(),
            p.width(),
            g.height(),
            g.width()
        )));
    }
    let conf = confusion(&p, &g, classes)?;
    let r = conf.iou();
    Ok(Outcome::ok(json!({
        "miou": r.miou,
        "per_class": r.per_class,
        "confusion": conf.matrix,
        "unassigned": conf.unassigned,
    })))
}

fn suite_cmd(a: &SuiteArgs, threads: usize) -> Result<Outcome> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<RunConfig>(p)?,
        None => RunConfig::suite_default(),
    };
    cfg.train.affinity.threads = threads;
    let template = cfg
        .scene
        .clone()
        .ok_or_else(|| Error::Argument("--config for suite needs a \"scene\" template".into()))?;
    let variants: Vec<Variant> = a
        .variants
        .split(',')
        .map(|v| flag("variants", v.trim()))
        .collect::<Result<_>>()?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let results = run_suite(&template, &seeds, &variants, &cfg.train)?;
    let means: serde_json::Map<String, Value> = variants
        .iter()
        .map(|v| (v.to_string(), json!(mean_miou(&results, *v))))
        .collect();
    let gains: serde_json::Map<String, Value> = if variants.contains(&Variant::Baseline) {
        variants
            .iter()
            .filter(|v| **v != Variant::Baseline)
            .map(|v| {
                let g = paired_gains(&results, *v, Variant::Baseline);
                let wins = g.iter().filter(|(_, d)| *d > 0.0).count();
                let mean = g.iter().map(|(_, d)| d).sum::<f64>() / g.len().max(1) as f64;
                (v.to_string(), json!({ "wins": wins, "runs": g.len(), "mean_gain": mean }))
            })
            .collect()
    } else {
        serde_json::Map::new()
    };
    Ok(Outcome::ok(json!({
        "seeds": a.seeds,
        "results": results,
        "mean_refined_miou": means,
        "vs_baseline": gains,
    })))
}
