use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trajseg::ingest;
use trajseg::metrics::EvalOptions;
use trajseg::model::{segmentation_from_labels, segmentation_to_labels, Demonstration, FrameLabeling, Skill};
use trajseg::pipeline::{eval_only, prepare_features, run_pipeline, PipelineConfig};
use trajseg::pmdd::{promote, write_trace_jsonl};
use trajseg::synth::{self, GestureShape, SynthConfig};
use trajseg::{Error, Result};

#[derive(Parser)]
#[command(name = "trajseg", version, about = "Unsupervised trajectory segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ingest, denoise, cluster, promote and evaluate over a dataset.
    Segment(SegmentArgs),
    /// Merge over-segmented frame labels of one demonstration.
    Promote(PromoteArgs),
    /// Score a predicted frame-label file against a ground-truth one.
    Eval(EvalArgs),
    /// Write a synthetic dataset with transcriptions.
    Synth(SynthArgs),
    /// Write raw and denoised channels of one kinematics file as CSV.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML pipeline configuration; defaults apply to anything it omits.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set pmdd.tau=0.6` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip wavelet denoising.
    #[arg(long)]
    no_denoise: bool,
    /// Skip segment promotion.
    #[arg(long)]
    no_promote: bool,
    /// Similarity threshold for merging adjacent segments.
    #[arg(long)]
    tau: Option<f64>,
    /// Minimum IoU for a predicted segment to match a true one.
    #[arg(long)]
    iou_threshold: Option<f64>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Glob of kinematics files.
    #[arg(long)]
    kinematics: Option<String>,
    /// Glob of transcription files.
    #[arg(long)]
    transcriptions: Option<String>,
    /// Glob of visual feature CSVs.
    #[arg(long)]
    features: Option<String>,
    /// Directory for reports, traces and bar files.
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct PromoteArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Kinematics file of the demonstration.
    #[arg(long)]
    kinematics: PathBuf,
    /// Optional visual feature CSV for the same demonstration.
    #[arg(long)]
    features: Option<PathBuf>,
    /// One integer label per frame.
    #[arg(long)]
    labels: PathBuf,
    /// Promoted frame labels.
    #[arg(long, short)]
    out: PathBuf,
    /// Merge trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted frame labels.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth frame labels.
    #[arg(long)]
    truth: PathBuf,
    /// Minimum IoU for a predicted segment to match a true one.
    #[arg(long, default_value_t = trajseg::metrics::DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    /// Count background (-1) frames in NMI and the accuracy denominator.
    #[arg(long)]
    count_background: bool,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Number of demonstrations.
    #[arg(long, default_value_t = 5)]
    demos: usize,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distinct gestures per demonstration.
    #[arg(long, default_value_t = 4)]
    gestures: usize,
    /// Kinematic dimensions.
    #[arg(long, default_value_t = 6)]
    dims: usize,
    /// Observation noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Piecewise-constant gestures instead of smooth loops.
    #[arg(long)]
    plateau: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Kinematics file to inspect.
    #[arg(long)]
    kinematics: PathBuf,
    /// Output CSV.
    #[arg(long, short)]
    out: PathBuf,
}

/// Replaces the value at a dotted `key` of a TOML table.
fn set_key(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{key}`")))?;
    let mut node = table;
    for p in parts {
        node = node
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    node.insert(last.to_owned(), value);
    Ok(())
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if !self.overrides.is_empty() {
            let mut table: toml::Table = toml::from_str(&cfg.to_toml_string()?).map_err(|e| Error::Serialize(e.to_string()))?;
            for o in &self.overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
                set_key(&mut table, k.trim(), v.trim())?;
            }
            cfg = PipelineConfig::from_toml_str(&toml::to_string(&table).map_err(|e| Error::Serialize(e.to_string()))?)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.no_denoise {
            cfg.denoise_enabled = false;
        }
        if self.no_promote {
            cfg.promote_enabled = false;
        }
        if let Some(t) = self.tau {
            cfg.pmdd.tau = t;
        }
        if let Some(t) = self.iou_threshold {
            cfg.eval.iou_threshold = t;
        }
        cfg.validate()?;
        Ok(cfg.resolved())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| Error::Serialize(e.to_string()))
}

fn load_demo(kinematics: &Path, features: Option<&Path>, cfg: &PipelineConfig) -> Result<Demonstration> {
    let kin = ingest::load_kinematics(kinematics, &cfg.data.columns)?;
    let vis = features.map(ingest::load_features).transpose()?;
    let id = kinematics.file_stem().and_then(|s| s.to_str()).unwrap_or("demo");
    Demonstration::new(id, cfg.data.rate_hz, kin, vis, Skill::Unknown)
}

fn segment(args: &SegmentArgs) -> Result<()> {
    let mut cfg = args.config.build()?;
    if let Some(k) = &args.kinematics {
        cfg.data.kinematics = k.clone();
    }
    if let Some(t) = &args.transcriptions {
        cfg.data.transcriptions = Some(t.clone());
    }
    if let Some(f) = &args.features {
        cfg.data.features = Some(f.clone());
    }
    if let Some(o) = &args.output_dir {
        cfg.output_dir = o.clone();
    }
    if args.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let report = run_pipeline(&cfg)?;
    let a = report.aggregate;
    println!(
        "{} demonstrations ({} evaluated): segments {:.2} -> {:.2}, nmi {:.4} -> {:.4}, seg-acc {:.4} -> {:.4}",
        a.demonstrations,
        a.evaluated,
        a.mean_tsc_segments,
        a.mean_promoted_segments,
        a.mean_tsc_nmi,
        a.mean_nmi,
        a.mean_tsc_seg_acc,
        a.mean_seg_acc
    );
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn promote_cmd(args: &PromoteArgs) -> Result<()> {
    let cfg = args.config.build()?;
    let demo = load_demo(&args.kinematics, args.features.as_deref(), &cfg)?;
    let labels = ingest::load_labels(&args.labels)?;
    if labels.len() != demo.frames() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} labels, {} has {} frames",
            args.labels.display(),
            labels.len(),
            args.kinematics.display(),
            demo.frames()
        )));
    }
    let seg = segmentation_from_labels(&FrameLabeling::new(labels))?;
    let data = prepare_features(&demo, &cfg)?;
    let mut pmdd = cfg.pmdd.clone();
    if !cfg.promote_enabled {
        pmdd.tau = 1.0;
    }
    let out = promote(&seg, &data, &pmdd)?;
    let promoted = segmentation_to_labels(&out.segmentation, demo.frames())?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    ingest::write_labels(&args.out, promoted.labels())?;
    if let Some(t) = &args.trace {
        let file = fs::File::create(t).map_err(|e| Error::Io { path: t.clone(), source: e })?;
        write_trace_jsonl(&out.trace, std::io::BufWriter::new(file))?;
    }
    println!("{} segments -> {} after {} merges", seg.len(), out.segmentation.len(), out.merges());
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let opts = EvalOptions {
        iou_threshold: args.iou_threshold,
        count_background: args.count_background,
    };
    let report = eval_only(&args.pred, &args.truth, &opts)?;
    let json = to_json(&report)?;
    match &args.out {
        Some(p) => write_text(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_gestures: args.gestures,
        dims: args.dims,
        noise_sigma: args.noise,
        shape: if args.plateau { GestureShape::Plateau } else { GestureShape::Smooth },
        seed: args.seed,
        ..SynthConfig::default()
    };
    let demos = synth::generate(&cfg, args.demos)?;
    let written = synth::write_dataset(&args.out, &demos, cfg.n_gestures)?;
    println!("wrote {} demonstrations to {}", written.len(), args.out.display());
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<()> {
    let mut cfg = args.config.build()?;
    let demo = load_demo(&args.kinematics, None, &cfg)?;
    let raw = demo.kinematic();
    cfg.data.standardize = false;
    cfg.denoise_enabled = true;
    let clean = prepare_features(&demo, &cfg)?;
    let mut out = String::from("frame");
    for j in 0..raw.ncols() {
        out.push_str(&format!(",raw_{j}"));
    }
    for j in 0..raw.ncols() {
        out.push_str(&format!(",denoised_{j}"));
    }
    out.push('\n');
    for r in 0..raw.nrows() {
        out.push_str(&r.to_string());
        for v in raw.row(r).iter().chain(clean.row(r).iter()) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_text(&args.out, &out)?;
    println!("{} frames x {} channels -> {}", raw.nrows(), raw.ncols(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Segment(a) => segment(a),
        Command::Promote(a) => promote_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // `Display` already includes the source chain.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
