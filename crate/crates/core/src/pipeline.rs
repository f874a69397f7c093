//! End-to-end orchestration: ingest, denoise, cluster, promote, evaluate.
//!
//! Demonstrations are loaded, denoised, promoted and evaluated in parallel;
//! results are always assembled in demonstration-id order so reports are
//! byte-identical across runs with the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{tsc_segment, TscConfig};
use crate::error::{Error, Result};
use crate::ingest::{self, ColumnSelection};
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::model::{segmentation_from_labels, segmentation_to_labels, Demonstration, FrameLabeling, Matrix, Segmentation, Skill};
use crate::pmdd::{adjacent_similarities, promote_with_reference, MergeStep, NormalizationScope, PmddConfig, ReferenceStats};
use crate::wavelet::{denoise_matrix, DenoiseConfig};

/// Where the initial-scope normalization statistics of PMDD come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromoteReference {
    /// Adjacent pairs of every demonstration in the run.
    #[default]
    Pooled,
    /// Adjacent pairs of the demonstration being promoted.
    PerDemonstration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Glob of whitespace-delimited kinematics files; the file stem is the demonstration id.
    pub kinematics: String,
    /// Glob of transcription files, matched to kinematics by file stem.
    pub transcriptions: Option<String>,
    /// Glob of headerless feature CSVs, matched to kinematics by file stem.
    pub features: Option<String>,
    pub columns: ColumnSelection,
    pub rate_hz: f64,
    /// Z-score every fused column per demonstration before clustering.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kinematics: "kinematics/*.txt".into(),
            transcriptions: Some("transcriptions/*.txt".into()),
            features: None,
            columns: ColumnSelection::All,
            rate_hz: 30.0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every stochastic stage; overrides `tsc.seed`.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub denoise_enabled: bool,
    pub promote_enabled: bool,
    pub promote_reference: PromoteReference,
    pub data: DataConfig,
    pub eval: EvalOptions,
    pub denoise: DenoiseConfig,
    pub tsc: TscConfig,
    pub pmdd: PmddConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            denoise_enabled: true,
            promote_enabled: true,
            promote_reference: PromoteReference::Pooled,
            data: DataConfig::default(),
            eval: EvalOptions::default(),
            denoise: DenoiseConfig::default(),
            tsc: TscConfig::default(),
            pmdd: PmddConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// The configuration with the pipeline seed pushed into every stage.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.tsc.seed = self.seed;
        out
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.rate_hz > 0.0 && self.data.rate_hz.is_finite()) {
            return Err(Error::Config(format!("rate_hz must be positive, got {}", self.data.rate_hz)));
        }
        self.eval.validate()?;
        self.denoise.validate()?;
        self.tsc.validate()?;
        self.pmdd.validate()
    }
}

/// One demonstration ready for the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInput {
    pub demonstration: Demonstration,
    pub truth: Option<Segmentation>,
}

fn sorted_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob `{pattern}`: {e}")))?;
    let mut out = Vec::new();
    for p in paths {
        let p = p.map_err(|e| Error::io(e.path().to_path_buf(), std::io::Error::other(e.to_string())))?;
        if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::Config(format!("{}: file name is not valid UTF-8", path.display())))
}

fn by_stem(pattern: Option<&str>) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if let Some(p) = pattern {
        for path in sorted_glob(p)? {
            let id = stem(&path)?;
            if let Some(prev) = out.insert(id.clone(), path.clone()) {
                return Err(Error::Config(format!(
                    "demonstration `{id}` matched twice: {} and {}",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

/// Loads every demonstration named by `data`, ordered by id.
pub fn load_inputs(data: &DataConfig) -> Result<Vec<PipelineInput>> {
    let kinematics = by_stem(Some(&data.kinematics))?;
    if kinematics.is_empty() {
        return Err(Error::Config(format!("no kinematics files match `{}`", data.kinematics)));
    }
    let transcriptions = by_stem(data.transcriptions.as_deref())?;
    let features = by_stem(data.features.as_deref())?;
    let entries: Vec<(&String, &PathBuf)> = kinematics.iter().collect();
    entries
        .par_iter()
        .map(|(id, kin_path)| {
            let kin = ingest::load_kinematics(kin_path, &data.columns)?;
            let visual = match (&data.features, features.get(*id)) {
                (None, _) => None,
                (Some(_), Some(p)) => Some(ingest::load_features(p)?),
                (Some(pattern), None) => {
                    return Err(Error::Config(format!("no feature file for `{id}` under `{pattern}`")));
                }
            };
            let frames = kin.nrows();
            let truth = match transcriptions.get(*id) {
                Some(p) => Some(ingest::load_transcription(p, Some(frames))?.segmentation),
                None => {
                    if data.transcriptions.is_some() {
                        log::warn!("{id}: no transcription, demonstration is not evaluated");
                    }
                    None
                }
            };
            Ok(PipelineInput {
                demonstration: Demonstration::new(id.as_str(), data.rate_hz, kin, visual, Skill::Unknown)?,
                truth,
            })
        })
        .collect()
}

/// Denoises (optionally) and fuses the channels of one demonstration.
pub fn prepare_features(demo: &Demonstration, cfg: &PipelineConfig) -> Result<Matrix> {
    let clean = |m: &Matrix| -> Result<Matrix> {
        if cfg.denoise_enabled {
            denoise_matrix(m, &cfg.denoise)
        } else {
            Ok(m.clone())
        }
    };
    let kin = clean(demo.kinematic())?;
    let vis = demo.visual().map(clean).transpose()?;
    ingest::fuse(&kin, vis.as_ref(), cfg.data.standardize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub id: String,
    pub frames: usize,
    pub channels: usize,
    pub tsc_segments: usize,
    pub promoted_segments: usize,
    pub merges: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tsc_eval: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub promoted_eval: Option<EvalReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Aggregate {
    pub demonstrations: usize,
    pub evaluated: usize,
    pub mean_tsc_segments: f64,
    pub mean_promoted_segments: f64,
    pub mean_tsc_nmi: f64,
    pub mean_tsc_seg_acc: f64,
    pub mean_nmi: f64,
    pub mean_seg_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TscSummary {
    pub frame_k: usize,
    pub transition_k: usize,
    pub transitions: usize,
    pub kept_transitions: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub demonstrations: Vec<DemoReport>,
    pub aggregate: Aggregate,
    pub tsc: TscSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub promote_reference: Option<ReferenceStats>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

/// Per-demonstration segmentations and merge trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub id: String,
    pub tsc: Segmentation,
    pub promoted: Segmentation,
    pub truth: Option<Segmentation>,
    pub trace: Vec<MergeStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub demos: Vec<DemoOutcome>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs every stage over in-memory inputs; nothing is written.
pub fn execute(inputs: &[PipelineInput], cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("demonstrations"));
    }
    let features: Vec<Matrix> = inputs
        .par_iter()
        .map(|i| prepare_features(&i.demonstration, &cfg))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("denoise"))?;

    let tsc = tsc_segment(&features, &cfg.tsc).map_err(|e| e.in_stage("cluster"))?;

    let reference = if cfg.promote_enabled
        && cfg.promote_reference == PromoteReference::Pooled
        && cfg.pmdd.normalization_scope == NormalizationScope::Initial
    {
        let raw: Vec<Vec<_>> = features
            .iter()
            .zip(&tsc.segmentations)
            .map(|(f, s)| adjacent_similarities(s, f, &cfg.pmdd))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("promote"))?;
        let all: Vec<_> = raw.into_iter().flatten().collect();
        if all.is_empty() {
            None
        } else {
            Some(ReferenceStats::of(&all).map_err(|e| e.in_stage("promote"))?)
        }
    } else {
        None
    };

    let per_demo: Vec<(DemoOutcome, DemoReport)> = inputs
        .par_iter()
        .zip(features.par_iter())
        .zip(tsc.segmentations.par_iter())
        .map(|((input, f), seg)| {
            let (promoted, trace) = if cfg.promote_enabled {
                let out = promote_with_reference(seg, f, &cfg.pmdd, reference).map_err(|e| e.in_stage("promote"))?;
                (out.segmentation, out.trace)
            } else {
                (seg.clone(), Vec::new())
            };
            let (tsc_eval, promoted_eval) = match &input.truth {
                Some(truth) => {
                    let a = evaluate(seg, truth, &cfg.eval).map_err(|e| e.in_stage("evaluate"))?;
                    let mut b = evaluate(&promoted, truth, &cfg.eval).map_err(|e| e.in_stage("evaluate"))?;
                    b.segments_before_promote = Some(seg.len());
                    (Some(a), Some(b))
                }
                None => (None, None),
            };
            let id = input.demonstration.id().to_owned();
            let report = DemoReport {
                id: id.clone(),
                frames: f.nrows(),
                channels: f.ncols(),
                tsc_segments: seg.len(),
                promoted_segments: promoted.len(),
                merges: trace.iter().filter(|s| s.merged.is_some()).count(),
                tsc_eval,
                promoted_eval,
            };
            let outcome = DemoOutcome {
                id,
                tsc: seg.clone(),
                promoted,
                truth: input.truth.clone(),
                trace,
            };
            Ok((outcome, report))
        })
        .collect::<Result<_>>()?;

    let (mut demos, mut reports): (Vec<_>, Vec<_>) = per_demo.into_iter().unzip();
    demos.sort_by(|a, b| a.id.cmp(&b.id));
    reports.sort_by(|a, b| a.id.cmp(&b.id));

    let evaluated: Vec<&DemoReport> = reports.iter().filter(|r| r.promoted_eval.is_some()).collect();
    let aggregate = Aggregate {
        demonstrations: reports.len(),
        evaluated: evaluated.len(),
        mean_tsc_segments: mean(reports.iter().map(|r| r.tsc_segments as f64)),
        mean_promoted_segments: mean(reports.iter().map(|r| r.promoted_segments as f64)),
        mean_tsc_nmi: mean(evaluated.iter().filter_map(|r| r.tsc_eval.as_ref()).map(|e| e.nmi)),
        mean_tsc_seg_acc: mean(evaluated.iter().filter_map(|r| r.tsc_eval.as_ref()).map(|e| e.seg_acc)),
        mean_nmi: mean(evaluated.iter().filter_map(|r| r.promoted_eval.as_ref()).map(|e| e.nmi)),
        mean_seg_acc: mean(evaluated.iter().filter_map(|r| r.promoted_eval.as_ref()).map(|e| e.seg_acc)),
    };
    let report = PipelineReport {
        demonstrations: reports,
        aggregate,
        tsc: TscSummary {
            frame_k: tsc.report.frame_k,
            transition_k: tsc.report.transition_k,
            transitions: tsc.report.transitions.len(),
            kept_transitions: tsc.report.transitions.iter().filter(|t| t.kept).count(),
            warnings: tsc.report.warnings.clone(),
        },
        promote_reference: reference,
    };
    Ok(PipelineOutcome { report, demos })
}

/// `frame,tsc,promoted,truth` rows; `truth` is empty when there is no transcription.
pub fn bars_csv(demo: &DemoOutcome) -> Result<String> {
    let frames = demo.tsc.frames();
    let tsc = segmentation_to_labels(&demo.tsc, frames)?;
    let promoted = segmentation_to_labels(&demo.promoted, frames)?;
    let truth = demo.truth.as_ref().map(|t| segmentation_to_labels(t, frames)).transpose()?;
    let mut out = String::from("frame,tsc,promoted,truth\n");
    for f in 0..frames {
        let t = truth.as_ref().map(|t| t.labels()[f].to_string()).unwrap_or_default();
        writeln!(out, "{f},{},{},{t}", tsc.labels()[f], promoted.labels()[f]).expect("writing to a String");
    }
    Ok(out)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    demo: &'a str,
    #[serde(flatten)]
    step: &'a MergeStep,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `trace.jsonl`, `bars_<id>.csv` and `resolved_config.toml` into `dir`.
pub fn write_outputs(outcome: &PipelineOutcome, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("resolved_config.toml"), &cfg.resolved().to_toml_string()?)?;
    write_file(&dir.join("report.json"), &(outcome.report.to_json()? + "\n"))?;
    let trace_path = dir.join("trace.jsonl");
    let file = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let mut out = BufWriter::new(file);
    for d in &outcome.demos {
        for step in &d.trace {
            serde_json::to_writer(&mut out, &TraceLine { demo: &d.id, step }).map_err(|e| Error::Serialize(e.to_string()))?;
            std::io::Write::write_all(&mut out, b"\n").map_err(|e| Error::io(&trace_path, e))?;
        }
    }
    std::io::Write::flush(&mut out).map_err(|e| Error::io(&trace_path, e))?;
    for d in &outcome.demos {
        write_file(&dir.join(format!("bars_{}.csv", d.id)), &bars_csv(d)?)?;
    }
    Ok(())
}

/// Loads the configured data, runs every stage and writes the outputs to `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let inputs = load_inputs(&cfg.data).map_err(|e| e.in_stage("ingest"))?;
    let outcome = execute(&inputs, cfg)?;
    write_outputs(&outcome, cfg, &cfg.output_dir)?;
    Ok(outcome.report)
}

/// NMI and seg-acc of a predicted against a ground-truth frame-label file.
pub fn eval_only(pred: impl AsRef<Path>, truth: impl AsRef<Path>, opts: &EvalOptions) -> Result<EvalReport> {
    let (pred, truth) = (pred.as_ref(), truth.as_ref());
    let p = ingest::load_labels(pred)?;
    let t = ingest::load_labels(truth)?;
    if p.len() != t.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} labels, {} has {}",
            pred.display(),
            p.len(),
            truth.display(),
            t.len()
        )));
    }
    let p = segmentation_from_labels(&FrameLabeling::new(p))?;
    let t = segmentation_from_labels(&FrameLabeling::new(t))?;
    evaluate(&p, &t, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn inputs(seed: u64, n: usize) -> Vec<PipelineInput> {
        generate(&SynthConfig { seed, ..SynthConfig::default() }, n)
            .unwrap()
            .into_iter()
            .map(|d| PipelineInput {
                demonstration: d.demonstration,
                truth: Some(d.truth),
            })
            .collect()
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::from_toml_str("seed = 7\n[pmdd]\ntau = 0.8\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pmdd.tau, 0.8);
        assert_eq!(cfg.pmdd.q, PmddConfig::default().q);
        assert!(PipelineConfig::from_toml_str("sed = 7\n").is_err());
        assert!(PipelineConfig::from_toml_str("[pmdd]\ntaux = 1\n").is_err());
    }

    #[test]
    fn resolved_config_carries_the_seed() {
        let cfg = PipelineConfig { seed: 42, ..PipelineConfig::default() };
        assert_eq!(cfg.resolved().tsc.seed, 42);
    }

    #[test]
    fn promote_off_equals_unreachable_tau() {
        let data = inputs(3, 4);
        let off = execute(&data, &PipelineConfig { promote_enabled: false, ..PipelineConfig::default() }).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.pmdd.tau = 1.0;
        let on = execute(&data, &cfg).unwrap();
        for (a, b) in off.demos.iter().zip(&on.demos) {
            assert_eq!(a.promoted, b.promoted);
            assert_eq!(a.promoted, a.tsc);
        }
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let mut data = inputs(0, 2);
        let d = &data[1].demonstration;
        let narrow = d.kinematic().columns(0, 3).into_owned();
        data[1].demonstration = Demonstration::new(d.id(), 30.0, narrow, None, Skill::Unknown).unwrap();
        let err = execute(&data, &PipelineConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`cluster`"), "{err}");
    }

    #[test]
    fn bars_have_one_row_per_frame() {
        let data = inputs(1, 2);
        let out = execute(&data, &PipelineConfig::default()).unwrap();
        let csv = bars_csv(&out.demos[0]).unwrap();
        assert_eq!(csv.lines().count(), data[0].demonstration.frames() + 1);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    }
}
