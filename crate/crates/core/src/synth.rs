//! Synthetic demonstrations with known gesture boundaries.
//!
//! Every gesture has one prototype, a smooth closed loop through a few anchor
//! points scattered around a gesture-specific center, traversed `cycles`
//! times and shared by all demonstrations of a call. Each demonstration replays the prototypes in
//! order with its own duration and time warp, then adds Gaussian noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_kinematics, write_transcription};
use crate::model::{Demonstration, Label, Matrix, Segmentation, Skill};

/// Stream ids keep prototype, warp and noise draws independent, so changing
/// `noise_sigma` leaves every other draw untouched.
const PROTOTYPE_STREAM: u64 = 0;
const WARP_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Half-width of the cube gesture centers are drawn from.
const CENTER_RANGE: f64 = 4.0;
/// Gesture centers are redrawn until they sit at least this far from every
/// earlier center (best of `CENTER_ATTEMPTS` draws otherwise).
const MIN_CENTER_SEPARATION: f64 = 5.0;
const CENTER_ATTEMPTS: usize = 64;
/// Half-width of the cube anchors are scattered in around their center.
const ANCHOR_SPREAD: f64 = 1.0;
pub const SYNTH_RATE_HZ: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GestureShape {
    /// Smooth motion through the gesture's anchors.
    #[default]
    Smooth,
    /// The gesture holds its center.
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_gestures: usize,
    pub dims: usize,
    /// Prototype length of each gesture is drawn from this range.
    pub frames_per_gesture: RangeInclusive<usize>,
    pub noise_sigma: f64,
    /// Strength of per-demonstration duration changes and time warping.
    pub skill_jitter: f64,
    pub anchors_per_gesture: usize,
    /// Laps around the anchor loop per gesture; repeated motion keeps every
    /// part of a gesture in the same subspace.
    pub cycles: usize,
    pub shape: GestureShape,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_gestures: 4,
            dims: 6,
            frames_per_gesture: 40..=80,
            noise_sigma: 0.05,
            skill_jitter: 0.2,
            anchors_per_gesture: 4,
            cycles: 3,
            shape: GestureShape::Smooth,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_gestures == 0 || self.dims == 0 {
            return Err(Error::Config("n_gestures and dims must be at least 1".into()));
        }
        if self.frames_per_gesture.is_empty() || *self.frames_per_gesture.start() < 2 {
            return Err(Error::Config(format!(
                "frames_per_gesture {:?} must be non-empty with at least 2 frames",
                self.frames_per_gesture
            )));
        }
        if self.anchors_per_gesture < 2 {
            return Err(Error::Config("anchors_per_gesture must be at least 2".into()));
        }
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        if !(self.skill_jitter >= 0.0 && self.skill_jitter.is_finite()) {
            return Err(Error::Config(format!("skill_jitter must be finite and >= 0, got {}", self.skill_jitter)));
        }
        Ok(())
    }
}

/// A generated demonstration and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDemo {
    pub demonstration: Demonstration,
    pub truth: Segmentation,
}

/// Gesture `g` (0-based) is annotated as label `g + 1`, written `G<g+1>`.
pub fn gesture_label(g: usize) -> Label {
    g as Label + 1
}

pub fn gesture_names(n_gestures: usize) -> BTreeMap<Label, String> {
    (0..n_gestures).map(|g| (gesture_label(g), format!("G{}", gesture_label(g)))).collect()
}

struct Prototype {
    anchors: Vec<Vec<f64>>,
    cycles: usize,
    frames: usize,
}

impl Prototype {
    /// Position at normalized time `s` in `[0, 1]`: `cycles` laps of the
    /// closed anchor loop with cosine easing between consecutive anchors.
    fn at(&self, s: f64, out: &mut [f64]) {
        let n = self.anchors.len();
        let pieces = n * self.cycles;
        let x = (s.clamp(0.0, 1.0) * pieces as f64).min(pieces as f64 - 1e-12);
        let k = x.floor() as usize;
        let w = (1.0 - (PI * (x - k as f64)).cos()) / 2.0;
        let (from, to) = (&self.anchors[k % n], &self.anchors[(k + 1) % n]);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (1.0 - w) * from[j] + w * to[j];
        }
    }
}

fn prototypes(cfg: &SynthConfig) -> Vec<Prototype> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PROTOTYPE_STREAM);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_gestures);
    (0..cfg.n_gestures)
        .map(|_| {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _ in 0..CENTER_ATTEMPTS {
                let cand: Vec<f64> = (0..cfg.dims).map(|_| rng.random_range(-CENTER_RANGE..=CENTER_RANGE)).collect();
                let gap = centers
                    .iter()
                    .map(|c| c.iter().zip(&cand).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min);
                if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                    best = Some((gap, cand));
                }
                if gap >= MIN_CENTER_SEPARATION {
                    break;
                }
            }
            let center = best.expect("at least one attempt").1;
            centers.push(center.clone());
            let frames = rng.random_range(cfg.frames_per_gesture.clone());
            let anchors = match cfg.shape {
                GestureShape::Smooth => (0..cfg.anchors_per_gesture)
                    .map(|_| {
                        center
                            .iter()
                            .map(|c| c + rng.random_range(-ANCHOR_SPREAD..=ANCHOR_SPREAD))
                            .collect()
                    })
                    .collect(),
                GestureShape::Plateau => vec![center.clone(), center],
            };
            Prototype {
                anchors,
                cycles: cfg.cycles,
                frames,
            }
        })
        .collect()
}

/// Demonstration `i` is expert, intermediate, novice, expert, ...
pub fn skill_of(i: usize) -> Skill {
    [Skill::Expert, Skill::Intermediate, Skill::Novice][i % 3]
}

/// Experts vary least, novices most.
fn jitter_scale(skill: Skill) -> f64 {
    match skill {
        Skill::Expert => 0.5,
        Skill::Intermediate => 1.0,
        Skill::Novice | Skill::Unknown => 1.5,
    }
}

/// Monotone warp of `[0, 1]` onto itself; `a` in `(-1, 1)`.
fn warp(s: f64, a: f64) -> f64 {
    s + a * (PI * s).sin() / PI
}

/// Generates `n_demos` demonstrations; output is a pure function of `(cfg, n_demos)`.
pub fn generate(cfg: &SynthConfig, n_demos: usize) -> Result<Vec<SynthDemo>> {
    cfg.validate()?;
    if n_demos == 0 {
        return Err(Error::Config("n_demos must be at least 1".into()));
    }
    let protos = prototypes(cfg);
    let mut warp_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    warp_rng.set_stream(WARP_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(NOISE_STREAM);

    let mut out = Vec::with_capacity(n_demos);
    for i in 0..n_demos {
        let skill = skill_of(i);
        let strength = cfg.skill_jitter * jitter_scale(skill);
        let plan: Vec<(usize, f64)> = protos
            .iter()
            .map(|p| {
                let stretch: f64 = 1.0 + strength * warp_rng.random_range(-1.0..=1.0);
                let frames = ((p.frames as f64 * stretch).round() as usize).max(2);
                let bend = (strength * warp_rng.random_range(-1.0..=1.0)).clamp(-0.9, 0.9);
                (frames, bend)
            })
            .collect();
        let total: usize = plan.iter().map(|p| p.0).sum();
        let mut data = Matrix::zeros(total, cfg.dims);
        let mut row = vec![0.0; cfg.dims];
        let mut boundaries = Vec::with_capacity(protos.len() - 1);
        let mut r0 = 0;
        for (g, (proto, &(frames, bend))) in protos.iter().zip(&plan).enumerate() {
            if g > 0 {
                boundaries.push(r0);
            }
            for t in 0..frames {
                proto.at(warp(t as f64 / (frames - 1) as f64, bend), &mut row);
                for (j, v) in row.iter().enumerate() {
                    data[(r0 + t, j)] = *v;
                }
            }
            r0 += frames;
        }
        for v in data.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            *v += cfg.noise_sigma * z;
        }
        let labels: Vec<Label> = (0..protos.len()).map(gesture_label).collect();
        let truth = Segmentation::from_boundaries(total, &boundaries, &labels)?;
        let demonstration = Demonstration::new(format!("synth_{i:03}"), SYNTH_RATE_HZ, data, None, skill)?;
        out.push(SynthDemo { demonstration, truth });
    }
    Ok(out)
}

/// Paths of one dumped demonstration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpedDemo {
    pub kinematics: PathBuf,
    pub transcription: PathBuf,
}

/// Writes `kinematics/<id>.txt` and `transcriptions/<id>.txt` under `dir` in
/// the formats `ingest` reads.
pub fn write_dataset(dir: impl AsRef<Path>, demos: &[SynthDemo], n_gestures: usize) -> Result<Vec<DumpedDemo>> {
    let dir = dir.as_ref();
    let kin_dir = dir.join("kinematics");
    let tr_dir = dir.join("transcriptions");
    for d in [&kin_dir, &tr_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let names = gesture_names(n_gestures);
    demos
        .iter()
        .map(|d| {
            let id = d.demonstration.id();
            let kinematics = kin_dir.join(format!("{id}.txt"));
            let transcription = tr_dir.join(format!("{id}.txt"));
            write_kinematics(&kinematics, d.demonstration.kinematic())?;
            write_transcription(&transcription, &d.truth, &names)?;
            Ok(DumpedDemo {
                kinematics,
                transcription,
            })
        })
        .collect()
}
