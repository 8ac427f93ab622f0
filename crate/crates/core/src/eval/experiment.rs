//! The desk-scale experiment: training artifacts, recordings with their
//! oracle traces, threshold calibration and the metrics report.
//!
//! Workspace layout:
//!
//! ```text
//! models/controller.mrmw      base driving controller
//! models/ensemble-<i>.mrmw    extra ensemble members (member 0 is the base)
//! models/sae.mrmw             autoencoder baseline
//! models/mutants/             mutant pool (pool.json + weights)
//! recordings/<id>/            manifest.json, controls.csv, traces.csv [, frames/]
//! thresholds.json
//! report.csv, summary.md, alarms.jsonl
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{auc, classify, first_alarm_in_window, metrics, ConfusionCounts, Metrics, RecordingFacts};
use super::EvalError;
use crate::baselines::{self, sae_train, Autoencoder, EnsemblePool, ENSEMBLE_ORACLE, SAE_ORACLE};
use crate::control::ControlOutput;
use crate::corrupt::{CorruptionKind, CorruptionSpec};
use crate::monitor::{self, calibrate_thresholds, read_trace_csv, write_trace_csv, AlarmEvent, MonitorTrace, MrId, MrOracle, Oracle, SmoothingMode, ThresholdSet};
use crate::mutate::{build_mutant_pool, MutationOperator, MutationSpec, PoolEntry, PoolManifest};
use crate::nn::{self, LabeledDataset, Model, Net, NetSpec, TrainConfig};
use crate::sim::{reference_driver, run_episode, run_episode_with, Condition, EpisodeOptions, Manifest, OuNoise, Recording, Track, TrackSpec};
use crate::util::write_atomic;

pub const REPORT_HEADER: [&str; 14] = [
    "oracle",
    "dataset",
    "circuit",
    "reaction_offset",
    "TP",
    "FP",
    "TN",
    "FN",
    "FPR",
    "precision",
    "TPR",
    "F1",
    "auc_roc",
    "auc_prc",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucGranularity {
    /// One score per recording: its max smoothed score.
    #[default]
    Recording,
    /// Every frame's smoothed score is a sample.
    Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NominalPlan {
    pub calibration_laps: usize,
    pub eval_laps: usize,
    pub frames: usize,
}

impl Default for NominalPlan {
    fn default() -> Self {
        Self {
            calibration_laps: 7,
            eval_laps: 10,
            frames: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyPlan {
    pub kinds: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
    pub repeats: usize,
    pub onset_frame: usize,
    pub max_frames: usize,
}

impl Default for AnomalyPlan {
    fn default() -> Self {
        Self {
            kinds: CorruptionKind::ALL.to_vec(),
            severities: vec![5],
            repeats: 1,
            onset_frame: 200,
            max_frames: 600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutantParam {
    pub operator: MutationOperator,
    pub param: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutantPlan {
    pub specs: Vec<MutantParam>,
    pub models_per_spec: usize,
    pub repeats: usize,
    pub max_frames: usize,
}

impl Default for MutantPlan {
    fn default() -> Self {
        Self {
            specs: MutationSpec::defaults(0)
                .into_iter()
                .map(|s| MutantParam {
                    operator: s.operator,
                    param: s.param,
                })
                .collect(),
            models_per_spec: 2,
            repeats: 1,
            max_frames: 900,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingPlan {
    /// Track variants driven to collect training data, e.g.
    /// `circuit-1+mirrored+reversed`.
    pub tracks: Vec<String>,
    pub episodes_per_track: usize,
    pub episode_frames: usize,
    /// Ornstein-Uhlenbeck steering perturbation of the data-collection driver.
    pub noise_theta: f64,
    pub noise_sigma: f64,
    pub controller: TrainConfig,
    /// Ensemble size including the base controller.
    pub ensemble_members: usize,
    pub sae: TrainConfig,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            tracks: vec![
                "circuit-1+mirrored".into(),
                "circuit-1+mirrored+reversed".into(),
                "circuit-2+mirrored".into(),
                "circuit-2+mirrored+reversed".into(),
            ],
            episodes_per_track: 2,
            episode_frames: 300,
            noise_theta: 0.15,
            noise_sigma: 0.08,
            controller: TrainConfig {
                learning_rate: 0.001,
                epochs: 45,
                batch_size: 1,
                seed: 0,
            },
            ensemble_members: 3,
            sae: TrainConfig {
                learning_rate: 20.0,
                epochs: 10,
                batch_size: 1,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    /// Taken from the run config, never from the plan table.
    #[serde(skip)]
    pub seed: u64,
    pub circuits: Vec<String>,
    /// Thresholds come from this circuit's calibration laps only.
    pub calibration_circuit: String,
    pub nominal: NominalPlan,
    pub anomalies: AnomalyPlan,
    pub mutants: MutantPlan,
    pub reaction_frames: Vec<usize>,
    pub smoothing_window: usize,
    pub smoothing: SmoothingMode,
    /// Alarms on anomaly recordings must come at or after onset.
    pub strict_onset: bool,
    pub auc_granularity: AucGranularity,
    /// Keep camera frames of every recording on disk (large).
    pub persist_frames: bool,
    pub training: TrainingPlan,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            seed: 2024,
            circuits: vec!["circuit-1".into(), "circuit-2".into()],
            calibration_circuit: "circuit-1".into(),
            nominal: NominalPlan::default(),
            anomalies: AnomalyPlan::default(),
            mutants: MutantPlan::default(),
            reaction_frames: vec![0, 10, 20, 30, 40],
            smoothing_window: monitor::DEFAULT_WINDOW,
            smoothing: SmoothingMode::WeightedSum,
            strict_onset: false,
            auc_granularity: AucGranularity::Recording,
            persist_frames: false,
            training: TrainingPlan::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Plan(m.to_string()));
        if self.circuits.is_empty() {
            return bad("no circuits");
        }
        if !self.circuits.contains(&self.calibration_circuit) {
            return bad("calibration circuit is not one of the circuits");
        }
        for c in self.circuits.iter().chain(&self.training.tracks) {
            track_spec(c)?;
        }
        if self.nominal.calibration_laps == 0 || self.nominal.eval_laps == 0 || self.nominal.frames == 0 {
            return bad("nominal laps and frames must be positive");
        }
        if self.anomalies.severities.iter().any(|s| !(1..=5).contains(s)) {
            return bad("anomaly severities must be in 1..=5");
        }
        if self.anomalies.onset_frame >= self.anomalies.max_frames {
            return bad("anomaly onset must come before max_frames");
        }
        if self.mutants.models_per_spec == 0 && !self.mutants.specs.is_empty() {
            return bad("models_per_spec must be positive");
        }
        if self.mutants.specs.iter().any(|s| s.operator != MutationOperator::Hlr && !(0.0..1.0).contains(&s.param)) {
            return bad("TAN/TCL parameters must be in [0, 1)");
        }
        if self.training.ensemble_members < 2 {
            return bad("ensemble needs at least 2 members");
        }
        if self.training.tracks.is_empty() || self.training.episodes_per_track == 0 || self.training.episode_frames == 0 {
            return bad("training data plan is empty");
        }
        if self.smoothing_window == 0 {
            return bad("smoothing window must be at least 1");
        }
        if self.reaction_frames.first() != Some(&0) {
            return bad("reaction_frames must start at 0");
        }
        self.training.controller.validate().map_err(|e| EvalError::Plan(e.to_string()))?;
        self.training.sae.validate().map_err(|e| EvalError::Plan(e.to_string()))?;
        Ok(())
    }

    pub fn oracle_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = MrId::ALL.iter().map(|m| m.oracle_id()).collect();
        ids.push(SAE_ORACLE.into());
        ids.push(ENSEMBLE_ORACLE.into());
        ids
    }

    fn mutation_specs(&self) -> Vec<MutationSpec> {
        self.mutants
            .specs
            .iter()
            .map(|p| MutationSpec {
                operator: p.operator,
                param: p.param,
                model_seed: self.seed,
            })
            .collect()
    }
}

/// Builds a track from an id such as `circuit-2` with optional
/// `+mirrored` / `+reversed` suffixes, or from a JSON file path.
pub fn track_spec(name: &str) -> Result<TrackSpec, EvalError> {
    let mut parts = name.split('+');
    let base = parts.next().unwrap_or_default();
    let mut spec = match base {
        "circuit-1" => TrackSpec::circuit1(),
        "circuit-2" => TrackSpec::circuit2(),
        p if p.ends_with(".json") => {
            let text = fs::read_to_string(p).map_err(|e| EvalError::Plan(format!("track {p}: {e}")))?;
            TrackSpec::from_json(&text).map_err(|e| EvalError::Plan(e.to_string()))?
        }
        other => return Err(EvalError::Plan(format!("unknown track {other:?}"))),
    };
    for modifier in parts {
        spec = match modifier {
            "mirrored" => spec.mirrored(),
            "reversed" => spec.reversed(),
            m => return Err(EvalError::Plan(format!("unknown track modifier {m:?}"))),
        };
    }
    Ok(spec)
}

fn load_track(name: &str) -> Result<Track, EvalError> {
    Track::new(track_spec(name)?).map_err(|e| EvalError::Plan(e.to_string()))
}

/// Stable per-item seed from the plan seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Paths inside an experiment workspace.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn controller(&self) -> PathBuf {
        self.models().join("controller.mrmw")
    }

    pub fn ensemble_member(&self, i: usize) -> PathBuf {
        self.models().join(format!("ensemble-{i}.mrmw"))
    }

    pub fn sae(&self) -> PathBuf {
        self.models().join("sae.mrmw")
    }

    pub fn mutants(&self) -> PathBuf {
        self.models().join("mutants")
    }

    pub fn recording(&self, id: &str) -> PathBuf {
        self.root.join("recordings").join(id)
    }

    pub fn thresholds(&self) -> PathBuf {
        self.root.join("thresholds.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.md")
    }

    pub fn alarms(&self) -> PathBuf {
        self.root.join("alarms.jsonl")
    }
}

/// Behavioral-cloning data: the reference driver with an OU steering
/// perturbation; labels are the unperturbed reference commands.
pub fn collect_training_data(plan: &ExperimentPlan) -> Result<LabeledDataset, EvalError> {
    let t = &plan.training;
    let mut samples = Vec::new();
    for name in &t.tracks {
        let track = load_track(name)?;
        for ep in 0..t.episodes_per_track {
            let seed = derive_seed(plan.seed, &format!("train/{name}/{ep}"));
            let mut opts = EpisodeOptions::nominal(format!("train-{name}-{ep}"), seed, t.episode_frames);
            opts.record_labels = true;
            let mut noise = OuNoise::new(t.noise_theta, t.noise_sigma, seed);
            let rec = run_episode_with(&track, &opts, |v| {
                let r = reference_driver(&track, v.state);
                ControlOutput::clamped(r.steering + noise.next(), r.throttle)
            })?;
            if rec.oob_frame.is_some() {
                log::warn!("training episode {} left the lane at frame {:?}", rec.id, rec.oob_frame);
            }
            samples.extend(rec.frames.into_iter().filter_map(|f| f.label.map(|l| (f.image, l))));
        }
    }
    Ok(LabeledDataset::new(samples)?)
}

/// Everything the recordings and oracles need.
pub struct Artifacts {
    pub net: Arc<Net>,
    pub base: Model,
    pub ensemble: EnsemblePool,
    pub sae: Autoencoder,
    pub pool: PoolManifest,
    pub pool_dir: PathBuf,
}

fn controller_cfg(plan: &ExperimentPlan) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(plan.seed, "controller"),
        ..plan.training.controller.clone()
    }
}

fn sae_cfg(plan: &ExperimentPlan) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(plan.seed, "sae"),
        ..plan.training.sae.clone()
    }
}

fn load_model(net: &Arc<Net>, path: &Path, seed: u64, epochs: usize) -> Result<Model, EvalError> {
    let (header, w) = nn::load_weights(path, net).map_err(|e| EvalError::Missing {
        what: format!("{}: {e}", path.display()),
        step: "train",
    })?;
    if header.seed != seed || header.epochs != epochs {
        return Err(EvalError::Missing {
            what: format!("{} was trained under a different plan", path.display()),
            step: "train --force",
        });
    }
    Ok(Model::new(net.clone(), w)?)
}

/// Trains whatever is missing (everything with `force`) and returns the
/// loaded artifacts.
pub fn train_artifacts(plan: &ExperimentPlan, ws: &Workspace, force: bool) -> Result<Artifacts, EvalError> {
    plan.validate()?;
    fs::create_dir_all(ws.models())?;
    let net = Arc::new(Net::new(NetSpec::default_controller())?);
    let members = plan.training.ensemble_members;
    let need = |p: &Path| force || !p.exists();
    let mut todo = vec![ws.controller(), ws.sae()];
    todo.extend((1..members).map(|i| ws.ensemble_member(i)));
    let pool_complete = PoolManifest::load(ws.mutants()).is_ok_and(|m| {
        m.entries.len() == plan.mutants.specs.len() * plan.mutants.models_per_spec
    });
    if todo.iter().any(|p| need(p)) || force || !pool_complete {
        log::info!("collecting training data");
        let data = collect_training_data(plan)?;
        log::info!("{} training samples", data.len());
        let ccfg = controller_cfg(plan);
        let jobs: Vec<usize> = (0..members).filter(|&i| need(&member_path(ws, i))).collect();
        jobs.par_iter()
            .map(|&i| -> Result<(), EvalError> {
                let (w, seed) = if i == 0 {
                    (nn::train_controller(&net, &data, &ccfg)?.0, ccfg.seed)
                } else {
                    (baselines::train_member(&net, &ccfg, &data, plan.seed, i)?, baselines::member_seed(plan.seed, i))
                };
                nn::save_weights(member_path(ws, i), &net, &w, seed, ccfg.epochs)?;
                log::info!("trained ensemble member {i}");
                Ok(())
            })
            .collect::<Result<Vec<_>, _>>()?;
        if need(&ws.sae()) {
            let images: Vec<_> = data.samples.iter().map(|(img, _)| img.clone()).collect();
            let cfg = sae_cfg(plan);
            let (ae, _) = sae_train(&images, &cfg)?;
            ae.save(ws.sae(), cfg.seed, cfg.epochs)?;
            log::info!("trained autoencoder");
        }
        build_mutant_pool(&net, &ccfg, &data, &plan.mutation_specs(), plan.mutants.models_per_spec, ws.mutants(), force)?;
        log::info!("mutant pool ready");
    }
    load_artifacts(plan, ws)
}

fn member_path(ws: &Workspace, i: usize) -> PathBuf {
    if i == 0 {
        ws.controller()
    } else {
        ws.ensemble_member(i)
    }
}

pub fn load_artifacts(plan: &ExperimentPlan, ws: &Workspace) -> Result<Artifacts, EvalError> {
    let net = Arc::new(Net::new(NetSpec::default_controller())?);
    let ccfg = controller_cfg(plan);
    let base = load_model(&net, &ws.controller(), ccfg.seed, ccfg.epochs)?;
    let mut members = vec![base.clone()];
    for i in 1..plan.training.ensemble_members {
        members.push(load_model(&net, &ws.ensemble_member(i), baselines::member_seed(plan.seed, i), ccfg.epochs)?);
    }
    let sae = Autoencoder::load(ws.sae()).map_err(|e| EvalError::Missing {
        what: format!("{}: {e}", ws.sae().display()),
        step: "train",
    })?;
    let pool = PoolManifest::load(ws.mutants()).map_err(|e| EvalError::Missing {
        what: e.to_string(),
        step: "train",
    })?;
    Ok(Artifacts {
        net,
        base,
        ensemble: EnsemblePool::new(members)?,
        sae,
        pool,
        pool_dir: ws.mutants(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobKind {
    Nominal { frames: usize },
    Anomaly { spec: CorruptionSpec, max_frames: usize },
    Mutant { entry: PoolEntry, max_frames: usize },
}

impl JobKind {
    pub fn frame_limit(&self) -> usize {
        match self {
            JobKind::Nominal { frames } => *frames,
            JobKind::Anomaly { max_frames, .. } | JobKind::Mutant { max_frames, .. } => *max_frames,
        }
    }
}

/// One recording of the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingJob {
    pub id: String,
    pub circuit: String,
    pub seed: u64,
    pub calibration: bool,
    pub kind: JobKind,
}

/// Every recording of the plan, in a fixed order.
pub fn plan_jobs(plan: &ExperimentPlan, pool: &PoolManifest) -> Vec<RecordingJob> {
    let mut jobs = Vec::new();
    for circuit in &plan.circuits {
        let mut push = |id: String, calibration: bool, kind: JobKind| {
            jobs.push(RecordingJob {
                seed: derive_seed(plan.seed, &id),
                id,
                circuit: circuit.clone(),
                calibration,
                kind,
            })
        };
        let frames = plan.nominal.frames;
        if *circuit == plan.calibration_circuit {
            for lap in 0..plan.nominal.calibration_laps {
                push(format!("{circuit}-cal-{lap:02}"), true, JobKind::Nominal { frames });
            }
        }
        for lap in 0..plan.nominal.eval_laps {
            push(format!("{circuit}-nom-{lap:02}"), false, JobKind::Nominal { frames });
        }
        let a = &plan.anomalies;
        for kind in &a.kinds {
            for &severity in &a.severities {
                for r in 0..a.repeats {
                    let id = format!("{circuit}-anom-{kind}-s{severity}-r{r}");
                    let spec = CorruptionSpec {
                        kind: *kind,
                        severity,
                        onset_frame: a.onset_frame,
                        seed: derive_seed(plan.seed, &format!("{id}/corruption")),
                    };
                    push(
                        id,
                        false,
                        JobKind::Anomaly {
                            spec,
                            max_frames: a.max_frames,
                        },
                    );
                }
            }
        }
        for p in &plan.mutants.specs {
            for entry in pool.for_spec(p.operator, p.param) {
                if entry.diverged {
                    log::warn!("mutant {} diverged during training; no recordings", entry.model_id());
                    continue;
                }
                for r in 0..plan.mutants.repeats {
                    push(
                        format!("{circuit}-mut-{}-r{r}", entry.model_id()),
                        false,
                        JobKind::Mutant {
                            entry: entry.clone(),
                            max_frames: plan.mutants.max_frames,
                        },
                    );
                }
            }
        }
    }
    jobs
}

/// A finished recording as persisted: manifest plus one trace per oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRun {
    pub manifest: Manifest,
    pub traces: Vec<MonitorTrace>,
}

const TRACES_FILE: &str = "traces.csv";

pub fn load_run(dir: &Path) -> Result<RecordedRun, EvalError> {
    let manifest = crate::sim::recording::load_manifest(dir)?;
    let traces = read_trace_csv(&manifest.id, dir.join(TRACES_FILE))?;
    Ok(RecordedRun { manifest, traces })
}

/// Drives one recording, scores it with every oracle and persists it.
/// Reuses a complete earlier run unless `force`.
pub fn run_job(job: &RecordingJob, art: &Artifacts, plan: &ExperimentPlan, ws: &Workspace, force: bool) -> Result<RecordedRun, EvalError> {
    let dir = ws.recording(&job.id);
    if !force {
        if let Ok(run) = load_run(&dir) {
            let m = &run.manifest;
            let complete = m.oob_frame.is_some() || m.n_frames == job.kind.frame_limit();
            let oracles: BTreeSet<&str> = run.traces.iter().map(|t| t.oracle_id.as_str()).collect();
            let wanted = plan.oracle_ids();
            if m.seed == job.seed && complete && m.n_frames <= job.kind.frame_limit() && oracles == wanted.iter().map(String::as_str).collect() {
                return Ok(run);
            }
        }
    }
    let track = load_track(&job.circuit)?;
    let (driver, ensemble, opts) = match &job.kind {
        JobKind::Nominal { frames } => (art.base.clone(), art.ensemble.clone(), EpisodeOptions::nominal(&job.id, job.seed, *frames)),
        JobKind::Anomaly { spec, max_frames } => {
            let mut opts = EpisodeOptions::nominal(&job.id, job.seed, *max_frames);
            opts.corruption = Some(*spec);
            (art.base.clone(), art.ensemble.clone(), opts)
        }
        JobKind::Mutant { entry, max_frames } => {
            let (_, w) = nn::load_weights(art.pool_dir.join(&entry.weights), &art.net)?;
            let model = Model::new(art.net.clone(), w)?;
            let ensemble = baselines::ensemble_for_mutant(&art.net, &art.pool, &art.pool_dir, &entry.spec)?;
            (model, ensemble, EpisodeOptions::nominal(&job.id, job.seed, *max_frames))
        }
    };
    let mut rec = run_episode(&track, &driver, &opts)?;
    rec.circuit_id = job.circuit.clone();
    if let JobKind::Mutant { entry, .. } = &job.kind {
        rec.condition = Condition::Mutant {
            operator: entry.spec.operator,
            param: entry.spec.param,
            model_id: entry.model_id(),
        };
    }
    let mr = MrOracle::new(driver, job.seed);
    let oracles: [&dyn Oracle; 3] = [&mr, &art.sae, &ensemble];
    let traces: Vec<MonitorTrace> = oracles
        .iter()
        .flat_map(|o| {
            monitor::trace_frames(&rec.id, rec.frames.iter().map(|f| &f.image), *o, plan.smoothing_window, plan.smoothing)
        })
        .collect();
    persist_run(&rec, &traces, &dir, plan.persist_frames)?;
    log::info!("recorded {} ({} frames, oob {:?})", rec.id, rec.len(), rec.oob_frame);
    Ok(RecordedRun {
        manifest: rec.manifest(),
        traces,
    })
}

fn persist_run(rec: &Recording, traces: &[MonitorTrace], dir: &Path, frames: bool) -> Result<(), EvalError> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    if frames {
        rec.save(dir)?;
    } else {
        // controls and manifest only; the manifest is written last
        fs::create_dir_all(dir)?;
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["index", "steering", "throttle"]).map_err(csv_err)?;
        for f in &rec.frames {
            csv.write_record([f.index.to_string(), f.control.steering.to_string(), f.control.throttle.to_string()])
                .map_err(csv_err)?;
        }
        write_atomic(&dir.join("controls.csv"), &csv.into_inner().map_err(|e| EvalError::Format(e.to_string()))?)?;
    }
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, traces, true)?;
    write_atomic(&dir.join(TRACES_FILE), &buf)?;
    let manifest = serde_json::to_vec_pretty(&rec.manifest()).expect("manifest serializes");
    write_atomic(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> EvalError {
    EvalError::Format(e.to_string())
}

/// Generates (or reuses) every recording of the plan.
pub fn record_all(plan: &ExperimentPlan, art: &Artifacts, ws: &Workspace, force: bool) -> Result<Vec<RecordedRun>, EvalError> {
    let jobs = plan_jobs(plan, &art.pool);
    log::info!("{} recordings in plan", jobs.len());
    jobs.par_iter().map(|j| run_job(j, art, plan, ws, force)).collect()
}

/// Loads every finished recording of the plan; errors name `record` when
/// one is missing.
pub fn load_runs(plan: &ExperimentPlan, ws: &Workspace) -> Result<Vec<(RecordingJob, RecordedRun)>, EvalError> {
    let pool = PoolManifest::load(ws.mutants()).map_err(|e| EvalError::Missing {
        what: e.to_string(),
        step: "train",
    })?;
    plan_jobs(plan, &pool)
        .into_iter()
        .map(|job| {
            let run = load_run(&ws.recording(&job.id)).map_err(|e| EvalError::Missing {
                what: format!("recording {}: {e}", job.id),
                step: "record",
            })?;
            Ok((job, run))
        })
        .collect()
}

/// Thresholds from the calibration laps.
pub fn calibrate(runs: &[(RecordingJob, RecordedRun)]) -> Result<ThresholdSet, EvalError> {
    let traces: Vec<MonitorTrace> = runs
        .iter()
        .filter(|(j, _)| j.calibration)
        .flat_map(|(_, r)| r.traces.iter().cloned())
        .collect();
    Ok(calibrate_thresholds(&traces)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Nominal,
    Anomaly,
    Mutant,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Nominal => "nominal",
            Dataset::Anomaly => "anomaly",
            Dataset::Mutant => "mutant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub oracle: String,
    pub dataset: Dataset,
    pub circuit: String,
    pub reaction_offset: i64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    /// `None` when a class is empty (nominal rows, or no usable positives).
    pub auc: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub granularity: AucGranularity,
    /// Positive recordings left out because they never went out of bounds.
    pub excluded: Vec<String>,
    pub alarms: Vec<AlarmEvent>,
}

impl Report {
    pub fn row(&self, oracle: &str, dataset: Dataset, circuit: &str, offset: i64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.oracle == oracle && r.dataset == dataset && r.circuit == circuit && r.reaction_offset == offset)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER).expect("in-memory write");
        let f = |v: f64| format!("{v:.6}");
        for r in &self.rows {
            let (roc, prc) = match r.auc {
                Some((a, b)) => (f(a), f(b)),
                None => ("NA".into(), "NA".into()),
            };
            w.write_record([
                r.oracle.clone(),
                r.dataset.name().into(),
                r.circuit.clone(),
                r.reaction_offset.to_string(),
                r.counts.tp.to_string(),
                r.counts.fp.to_string(),
                r.counts.tn.to_string(),
                r.counts.r#fn.to_string(),
                f(r.metrics.fpr),
                f(r.metrics.precision),
                f(r.metrics.tpr),
                f(r.metrics.f1),
                roc,
                prc,
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Markdown tables: threshold metrics and AUCs at offset 0, then
    /// AUC-PRC across the reaction offsets.
    pub fn summary_markdown(&self, offsets: &[usize]) -> String {
        let mut s = String::new();
        let na = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
        s.push_str(&format!("AUC granularity: {:?}\n\n", self.granularity).to_lowercase());
        s.push_str("| dataset | circuit | oracle | TP | FP | TN | FN | FPR | precision | TPR | F1 | AUC-ROC | AUC-PRC |\n");
        s.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|---|\n");
        for r in self.rows.iter().filter(|r| r.reaction_offset == 0) {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {} | {} |\n",
                r.dataset.name(),
                r.circuit,
                r.oracle,
                r.counts.tp,
                r.counts.fp,
                r.counts.tn,
                r.counts.r#fn,
                r.metrics.fpr,
                r.metrics.precision,
                r.metrics.tpr,
                r.metrics.f1,
                na(r.auc.map(|a| a.0)),
                na(r.auc.map(|a| a.1)),
            ));
        }
        s.push_str("\nAUC-PRC by reaction offset\n\n| dataset | circuit | oracle |");
        for o in offsets {
            s.push_str(&format!(" {} |", -(*o as i64)));
        }
        s.push_str("\n|---|---|---|");
        s.push_str(&"---|".repeat(offsets.len()));
        s.push('\n');
        for r in self.rows.iter().filter(|r| r.reaction_offset == 0 && r.dataset != Dataset::Nominal) {
            s.push_str(&format!("| {} | {} | {} |", r.dataset.name(), r.circuit, r.oracle));
            for o in offsets {
                let v = self.row(&r.oracle, r.dataset, &r.circuit, -(*o as i64)).and_then(|x| x.auc.map(|a| a.1));
                s.push_str(&format!(" {} |", na(v)));
            }
            s.push('\n');
        }
        if !self.excluded.is_empty() {
            s.push_str(&format!(
                "\nExcluded (no out-of-bounds): {} recordings\n",
                self.excluded.len()
            ));
        }
        s
    }
}

fn dataset_of(cond: &Condition) -> Dataset {
    match cond {
        Condition::Nominal => Dataset::Nominal,
        Condition::Anomaly { .. } => Dataset::Anomaly,
        Condition::Mutant { .. } => Dataset::Mutant,
    }
}

/// Last frame whose alarm still counts for a positive recording.
fn window_end(oob: usize, reaction: usize) -> Option<usize> {
    oob.checked_sub(reaction)
}

fn window_scores(trace: &MonitorTrace, start: usize, end: Option<usize>) -> Vec<f64> {
    match end {
        Some(e) if e >= start => trace.smoothed[start..=e.min(trace.smoothed.len() - 1)].to_vec(),
        _ => Vec::new(),
    }
}

/// Verdicts, counts and AUCs for every (oracle, dataset, circuit, offset).
pub fn evaluate(plan: &ExperimentPlan, runs: &[(RecordingJob, RecordedRun)], thresholds: &ThresholdSet) -> Result<Report, EvalError> {
    let eval: Vec<&(RecordingJob, RecordedRun)> = runs.iter().filter(|(j, _)| !j.calibration).collect();
    thresholds.check_disjoint(eval.iter().map(|(j, _)| j.id.as_str()))?;
    let mut excluded = Vec::new();
    for (j, r) in &eval {
        if dataset_of(&r.manifest.condition) != Dataset::Nominal && r.manifest.oob_frame.is_none() {
            log::warn!("{}: never left the lane; excluded from evaluation", j.id);
            excluded.push(j.id.clone());
        }
    }
    let trace_of = |run: &RecordedRun, oracle: &str| -> Result<MonitorTrace, EvalError> {
        run.traces
            .iter()
            .find(|t| t.oracle_id == oracle)
            .cloned()
            .ok_or_else(|| EvalError::Format(format!("{}: no trace for {oracle}", run.manifest.id)))
    };
    let mut rows = Vec::new();
    let mut alarms = Vec::new();
    for oracle in plan.oracle_ids() {
        let threshold = thresholds.get(&oracle)?;
        for (_, run) in &eval {
            if let Some(a) = trace_of(run, &oracle)?.first_alarm(threshold) {
                alarms.push(a);
            }
        }
        for dataset in [Dataset::Nominal, Dataset::Anomaly, Dataset::Mutant] {
            for circuit in &plan.circuits {
                let negatives: Vec<MonitorTrace> = eval
                    .iter()
                    .filter(|(j, r)| j.circuit == *circuit && r.manifest.condition.is_nominal())
                    .map(|(_, r)| trace_of(r, &oracle))
                    .collect::<Result<_, _>>()?;
                let positives: Vec<(&Manifest, MonitorTrace)> = if dataset == Dataset::Nominal {
                    Vec::new()
                } else {
                    eval.iter()
                        .filter(|(j, r)| {
                            j.circuit == *circuit && dataset_of(&r.manifest.condition) == dataset && r.manifest.oob_frame.is_some()
                        })
                        .map(|(_, r)| Ok((&r.manifest, trace_of(r, &oracle)?)))
                        .collect::<Result<_, EvalError>>()?
                };
                for &reaction in &plan.reaction_frames {
                    let mut counts = ConfusionCounts::default();
                    let mut neg_scores = Vec::new();
                    for t in &negatives {
                        let facts = RecordingFacts {
                            positive: false,
                            onset_frame: None,
                            oob_frame: None,
                        };
                        let alarm = first_alarm_in_window(&t.smoothed, threshold, None);
                        counts.add(classify(alarm, &facts, reaction, plan.strict_onset).expect("negatives always classify"));
                        match plan.auc_granularity {
                            AucGranularity::Recording => neg_scores.push(t.max_smoothed()),
                            AucGranularity::Frame => neg_scores.extend_from_slice(&t.smoothed),
                        }
                    }
                    let mut pos_scores = Vec::new();
                    for (m, t) in &positives {
                        let oob = m.oob_frame.expect("filtered on oob");
                        let facts = RecordingFacts {
                            positive: true,
                            onset_frame: m.onset_frame,
                            oob_frame: Some(oob),
                        };
                        let end = window_end(oob, reaction);
                        let start = if plan.strict_onset { m.onset_frame.unwrap_or(0) } else { 0 };
                        let alarm = end.and_then(|e| first_alarm_in_window(&t.smoothed, threshold, Some(e)));
                        counts.add(classify(alarm, &facts, reaction, plan.strict_onset).expect("positives have oob"));
                        let window = window_scores(t, start, end);
                        match plan.auc_granularity {
                            AucGranularity::Recording => pos_scores.push(window.iter().cloned().fold(0.0, f64::max)),
                            AucGranularity::Frame => {
                                let from = m.onset_frame.unwrap_or(0).saturating_sub(start);
                                pos_scores.extend(window.iter().skip(from).cloned())
                            }
                        }
                    }
                    let auc = if dataset == Dataset::Nominal || pos_scores.is_empty() || neg_scores.is_empty() {
                        None
                    } else {
                        Some(auc(&pos_scores, &neg_scores)?)
                    };
                    rows.push(ReportRow {
                        oracle: oracle.clone(),
                        dataset,
                        circuit: circuit.clone(),
                        reaction_offset: -(reaction as i64),
                        counts,
                        metrics: metrics(&counts),
                        auc,
                    });
                }
            }
        }
    }
    Ok(Report {
        rows,
        granularity: plan.auc_granularity,
        excluded,
        alarms,
    })
}

/// Writes report.csv, summary.md and alarms.jsonl.
pub fn write_report(report: &Report, plan: &ExperimentPlan, ws: &Workspace) -> Result<(), EvalError> {
    write_atomic(&ws.report(), &report.to_csv())?;
    write_atomic(&ws.summary(), report.summary_markdown(&plan.reaction_frames).as_bytes())?;
    monitor::write_alarms(ws.alarms(), &report.alarms)?;
    Ok(())
}

/// Train, record, calibrate and evaluate in one go.
pub fn run_experiment(plan: &ExperimentPlan, ws: &Workspace, force: bool) -> Result<Report, EvalError> {
    let art = train_artifacts(plan, ws, force)?;
    record_all(plan, &art, ws, force)?;
    let runs = load_runs(plan, ws)?;
    let thresholds = calibrate(&runs)?;
    thresholds.save(ws.thresholds())?;
    let report = evaluate(plan, &runs, &thresholds)?;
    write_report(&report, plan, ws)?;
    Ok(report)
}
