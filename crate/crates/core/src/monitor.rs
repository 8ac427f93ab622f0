//! Metamorphic runtime monitor: per-frame MR uncertainty, the weighted-sum
//! smoothing filter, threshold calibration and alarm emission.
//!
//! Every oracle (MRs and the baselines) produces one raw score per frame;
//! the same smoothing, calibration and alarm logic applies to all of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlOutput, Controller};
use crate::imgops::{add_uniform_noise, box_blur, flip_horizontal, reduce_brightness, set_saturation, Image, Rng};
use crate::util::write_atomic;

pub const DEFAULT_WINDOW: usize = 10;
pub const THRESHOLD_MARGIN: f64 = 1.1;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("calibration needs at least one recording")]
    EmptyCalibration,
    #[error("calibration and evaluation share recordings: {0:?}")]
    Overlap(Vec<String>),
    #[error("no threshold for oracle {0}")]
    MissingThreshold(String),
    #[error("unknown MR {0:?}")]
    UnknownMr(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MrId {
    #[serde(rename = "MR1")]
    Mr1,
    #[serde(rename = "MR2")]
    Mr2,
    #[serde(rename = "MR3")]
    Mr3,
    #[serde(rename = "MR4")]
    Mr4,
    #[serde(rename = "MR5")]
    Mr5,
}

impl MrId {
    pub const ALL: [MrId; 5] = [MrId::Mr1, MrId::Mr2, MrId::Mr3, MrId::Mr4, MrId::Mr5];

    pub fn name(self) -> &'static str {
        match self {
            MrId::Mr1 => "MR1",
            MrId::Mr2 => "MR2",
            MrId::Mr3 => "MR3",
            MrId::Mr4 => "MR4",
            MrId::Mr5 => "MR5",
        }
    }

    /// Namespaced oracle id, e.g. `mr/MR5`.
    pub fn oracle_id(self) -> String {
        format!("mr/{}", self.name())
    }
}

impl fmt::Display for MrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MrId {
    type Err = MonitorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix("mr/").unwrap_or(s);
        MrId::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| MonitorError::UnknownMr(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputRelation {
    ReduceBrightness(u8),
    SetSaturation(u8),
    UniformNoise(f64),
    BoxBlur { kw: usize, kh: usize },
    Flip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputRelation {
    Identity,
    Negate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrDef {
    pub id: MrId,
    pub input: InputRelation,
    pub output: OutputRelation,
}

impl MrDef {
    pub fn builtin(id: MrId) -> Self {
        let (input, output) = match id {
            MrId::Mr1 => (InputRelation::ReduceBrightness(77), OutputRelation::Identity),
            MrId::Mr2 => (InputRelation::SetSaturation(50), OutputRelation::Identity),
            MrId::Mr3 => (InputRelation::UniformNoise(0.2), OutputRelation::Identity),
            MrId::Mr4 => (InputRelation::BoxBlur { kw: 5, kh: 1 }, OutputRelation::Identity),
            MrId::Mr5 => (InputRelation::Flip, OutputRelation::Negate),
        };
        Self { id, input, output }
    }

    pub fn all() -> Vec<MrDef> {
        MrId::ALL.into_iter().map(Self::builtin).collect()
    }

    pub fn stochastic(&self) -> bool {
        matches!(self.input, InputRelation::UniformNoise(_))
    }

    pub fn follow_up(&self, img: &Image, rng: &mut Rng) -> Image {
        match self.input {
            InputRelation::ReduceBrightness(d) => reduce_brightness(img, d),
            InputRelation::SetSaturation(s) => set_saturation(img, s),
            InputRelation::UniformNoise(r) => add_uniform_noise(img, r, rng),
            InputRelation::BoxBlur { kw, kh } => box_blur(img, kw, kh),
            InputRelation::Flip => flip_horizontal(img),
        }
    }

    /// Steering the follow-up output is expected to have.
    pub fn expected_steering(&self, source: &ControlOutput) -> f64 {
        match self.output {
            OutputRelation::Identity => source.steering,
            OutputRelation::Negate => -source.steering,
        }
    }
}

/// `|OR(source) - followup|` on steering.
pub fn mr_uncertainty(mr: &MrDef, source: &ControlOutput, followup: &ControlOutput) -> f64 {
    (mr.expected_steering(source) - followup.steering).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorStep {
    /// The source output; the only one ever actuated.
    pub control: ControlOutput,
    pub raw: Vec<f64>,
}

/// One controller call on the source frame plus one per MR on its follow-up.
/// `rng` is consumed only by stochastic MRs.
pub fn monitor_step<C: Controller + ?Sized>(mrs: &[MrDef], controller: &C, img: &Image, rng: &mut Rng) -> MonitorStep {
    let control = controller.control(img);
    let raw = mrs
        .iter()
        .map(|mr| {
            let follow = controller.control(&mr.follow_up(img, rng));
            mr_uncertainty(mr, &control, &follow)
        })
        .collect();
    MonitorStep { control, raw }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    /// `s_t = sum_{i=1..min(k,t)} raw_{t-i} / i`, current frame excluded.
    #[default]
    WeightedSum,
    /// Normalized recursion on past smoothed values:
    /// `s_t = (raw_t + sum_{i=1..k} s_{t-i} / i) / (1 + H_k)`.
    Recursive,
}

/// Streaming form of the smoothing filter.
#[derive(Debug, Clone)]
pub struct ArFilter {
    k: usize,
    mode: SmoothingMode,
    /// Most recent first: raw scores (weighted sum) or smoothed values (recursive).
    past: std::collections::VecDeque<f64>,
    norm: f64,
}

impl ArFilter {
    pub fn new(k: usize, mode: SmoothingMode) -> Self {
        assert!(k >= 1, "window must be at least 1");
        Self {
            k,
            mode,
            past: std::collections::VecDeque::with_capacity(k + 1),
            norm: 1.0 + harmonic(k),
        }
    }

    pub fn push(&mut self, raw: f64) -> f64 {
        let weighted: f64 = self.past.iter().enumerate().fold(0.0, |acc, (i, v)| acc + v / (i + 1) as f64);
        let (out, keep) = match self.mode {
            SmoothingMode::WeightedSum => (weighted, raw),
            SmoothingMode::Recursive => {
                let s = (raw + weighted) / self.norm;
                (s, s)
            }
        };
        self.past.push_front(keep);
        self.past.truncate(self.k);
        out
    }
}

pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

/// Smoothed series for a whole raw history; `smoothed[0] == 0` in the
/// weighted-sum mode.
pub fn ar_smooth(raw: &[f64], k: usize) -> Vec<f64> {
    ar_smooth_with(raw, k, SmoothingMode::WeightedSum)
}

pub fn ar_smooth_with(raw: &[f64], k: usize, mode: SmoothingMode) -> Vec<f64> {
    let mut f = ArFilter::new(k, mode);
    raw.iter().map(|&r| f.push(r)).collect()
}

/// A per-frame scorer. One oracle may produce several named scores per frame
/// (the MR bank scores all its MRs off a single source inference).
pub trait Oracle: Sync {
    fn ids(&self) -> Vec<String>;
    fn score(&self, frame: usize, img: &Image) -> Vec<f64>;
}

/// The MR monitor over a controller; MR3's rng is keyed by `(seed, frame)`.
pub struct MrOracle<C> {
    pub mrs: Vec<MrDef>,
    pub controller: C,
    pub seed: u64,
}

impl<C: Controller> MrOracle<C> {
    pub fn new(controller: C, seed: u64) -> Self {
        Self {
            mrs: MrDef::all(),
            controller,
            seed,
        }
    }

    pub fn step(&self, frame: usize, img: &Image) -> MonitorStep {
        let mut rng = Rng::derive(self.seed, frame as u64);
        monitor_step(&self.mrs, &self.controller, img, &mut rng)
    }
}

impl<C: Controller> Oracle for MrOracle<C> {
    fn ids(&self) -> Vec<String> {
        self.mrs.iter().map(|m| m.id.oracle_id()).collect()
    }

    fn score(&self, frame: usize, img: &Image) -> Vec<f64> {
        self.step(frame, img).raw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorTrace {
    pub recording_id: String,
    pub oracle_id: String,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl MonitorTrace {
    pub fn from_raw(recording_id: &str, oracle_id: &str, raw: Vec<f64>, k: usize, mode: SmoothingMode) -> Self {
        let smoothed = ar_smooth_with(&raw, k, mode);
        Self {
            recording_id: recording_id.to_string(),
            oracle_id: oracle_id.to_string(),
            raw,
            smoothed,
        }
    }

    pub fn max_smoothed(&self) -> f64 {
        self.smoothed.iter().cloned().fold(0.0, f64::max)
    }

    /// First frame whose smoothed score exceeds `threshold`.
    pub fn first_alarm(&self, threshold: f64) -> Option<AlarmEvent> {
        self.smoothed
            .iter()
            .position(|&s| s > threshold)
            .map(|frame| AlarmEvent {
                recording_id: self.recording_id.clone(),
                oracle_id: self.oracle_id.clone(),
                frame,
                score: self.smoothed[frame],
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub recording_id: String,
    pub oracle_id: String,
    pub frame: usize,
    pub score: f64,
}

/// Scores a frame sequence with one oracle; returns one trace per oracle id.
pub fn trace_frames<'a, O: Oracle + ?Sized>(
    recording_id: &str,
    frames: impl IntoIterator<Item = &'a Image>,
    oracle: &O,
    k: usize,
    mode: SmoothingMode,
) -> Vec<MonitorTrace> {
    let ids = oracle.ids();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    for (i, img) in frames.into_iter().enumerate() {
        let scores = oracle.score(i, img);
        assert_eq!(scores.len(), ids.len(), "oracle returned the wrong number of scores");
        for (r, s) in raw.iter_mut().zip(scores) {
            r.push(s);
        }
    }
    ids.iter()
        .zip(raw)
        .map(|(id, r)| MonitorTrace::from_raw(recording_id, id, r, k, mode))
        .collect()
}

/// Offline replay of a recording: traces for every id of `oracle` and the
/// first alarm of each against `thresholds`.
pub fn replay_monitor<O: Oracle + ?Sized>(
    recording: &crate::sim::Recording,
    oracle: &O,
    thresholds: &ThresholdSet,
    k: usize,
    mode: SmoothingMode,
) -> Result<Vec<(MonitorTrace, Option<AlarmEvent>)>, MonitorError> {
    recording
        .validate()
        .map_err(|e| MonitorError::Format(e.to_string()))?;
    let traces = trace_frames(&recording.id, recording.frames.iter().map(|f| &f.image), oracle, k, mode);
    traces
        .into_iter()
        .map(|t| {
            let th = thresholds.get(&t.oracle_id)?;
            let alarm = t.first_alarm(th);
            Ok((t, alarm))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSet {
    pub margin: f64,
    pub thresholds: BTreeMap<String, f64>,
    /// Oracles whose calibration scores were all zero (threshold 0).
    pub degenerate: Vec<String>,
    /// Calibration recording ids.
    pub provenance: Vec<String>,
}

impl ThresholdSet {
    pub fn get(&self, oracle_id: &str) -> Result<f64, MonitorError> {
        self.thresholds
            .get(oracle_id)
            .copied()
            .ok_or_else(|| MonitorError::MissingThreshold(oracle_id.to_string()))
    }

    /// Errors if any evaluation recording was used for calibration.
    pub fn check_disjoint<'a>(&self, eval_ids: impl IntoIterator<Item = &'a str>) -> Result<(), MonitorError> {
        let calib: BTreeSet<&str> = self.provenance.iter().map(String::as_str).collect();
        let shared: BTreeSet<String> = eval_ids
            .into_iter()
            .filter(|id| calib.contains(id))
            .map(str::to_string)
            .collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(MonitorError::Overlap(shared.into_iter().collect()))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MonitorError> {
        let json = serde_json::to_vec_pretty(self).expect("thresholds serialize");
        write_atomic(path.as_ref(), &json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MonitorError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MonitorError::Format(format!("thresholds: {e}")))
    }
}

/// Per oracle: margin times the largest smoothed score over all calibration
/// frames.
pub fn calibrate_thresholds(traces: &[MonitorTrace]) -> Result<ThresholdSet, MonitorError> {
    calibrate_with_margin(traces, THRESHOLD_MARGIN)
}

pub fn calibrate_with_margin(traces: &[MonitorTrace], margin: f64) -> Result<ThresholdSet, MonitorError> {
    if traces.is_empty() {
        return Err(MonitorError::EmptyCalibration);
    }
    let mut maxima: BTreeMap<String, f64> = BTreeMap::new();
    let mut provenance = BTreeSet::new();
    for t in traces {
        let m = maxima.entry(t.oracle_id.clone()).or_insert(0.0);
        *m = m.max(t.max_smoothed());
        provenance.insert(t.recording_id.clone());
    }
    let degenerate = maxima
        .iter()
        .filter(|(_, &m)| m == 0.0)
        .map(|(id, _)| id.clone())
        .collect::<Vec<_>>();
    for id in &degenerate {
        log::warn!("oracle {id}: all calibration scores are zero; any positive score will alarm");
    }
    Ok(ThresholdSet {
        margin,
        thresholds: maxima.into_iter().map(|(id, m)| (id, m * margin)).collect(),
        degenerate,
        provenance: provenance.into_iter().collect(),
    })
}

/// Appends `frame,oracle,raw,smoothed` rows (header included when `header`).
pub fn write_trace_csv<W: Write>(out: W, traces: &[MonitorTrace], header: bool) -> Result<(), MonitorError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let fmt_err = |e: csv::Error| MonitorError::Format(e.to_string());
    if header {
        w.write_record(["frame", "oracle", "raw", "smoothed"]).map_err(fmt_err)?;
    }
    for t in traces {
        for (i, (r, s)) in t.raw.iter().zip(&t.smoothed).enumerate() {
            w.write_record([i.to_string(), t.oracle_id.clone(), r.to_string(), s.to_string()])
                .map_err(fmt_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads traces back; rows of one oracle must be in frame order.
pub fn read_trace_csv(recording_id: &str, path: impl AsRef<Path>) -> Result<Vec<MonitorTrace>, MonitorError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| MonitorError::Format(e.to_string()))?;
    let mut by_id: BTreeMap<String, MonitorTrace> = BTreeMap::new();
    let mut order = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| MonitorError::Format(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, MonitorError> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| MonitorError::Format(format!("bad trace row {row:?}")))
        };
        let frame = parse(0)? as usize;
        let id = row.get(1).unwrap_or_default().to_string();
        let t = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            MonitorTrace {
                recording_id: recording_id.to_string(),
                oracle_id: id.clone(),
                raw: Vec::new(),
                smoothed: Vec::new(),
            }
        });
        if frame != t.raw.len() {
            return Err(MonitorError::Format(format!("{id}: frame {frame} out of order")));
        }
        t.raw.push(parse(2)?);
        t.smoothed.push(parse(3)?);
    }
    Ok(order.into_iter().map(|id| by_id.remove(&id).unwrap()).collect())
}

/// JSONL alarm log.
pub fn write_alarms(path: impl AsRef<Path>, alarms: &[AlarmEvent]) -> Result<(), MonitorError> {
    let mut buf = Vec::new();
    for a in alarms {
        serde_json::to_writer(&mut buf, a).expect("alarm serializes");
        buf.push(b'\n');
    }
    write_atomic(path.as_ref(), &buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{CountingController, FnController};
    use crate::imgops::WIDTH;

    fn out(s: f64) -> ControlOutput {
        ControlOutput {
            steering: s,
            throttle: 0.5,
        }
    }

    #[test]
    fn uncertainty_examples() {
        let mr1 = MrDef::builtin(MrId::Mr1);
        let mr5 = MrDef::builtin(MrId::Mr5);
        assert_eq!(mr_uncertainty(&mr1, &out(0.3), &out(0.3)), 0.0);
        assert_eq!(mr_uncertainty(&mr5, &out(0.4), &out(-0.4)), 0.0);
        assert!((mr_uncertainty(&mr5, &out(0.4), &out(0.1)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn only_mr3_is_stochastic() {
        let s: Vec<bool> = MrDef::all().iter().map(MrDef::stochastic).collect();
        assert_eq!(s, vec![false, false, true, false, false]);
    }

    #[test]
    fn mr_ids_parse() {
        assert_eq!("mr/MR5".parse::<MrId>().unwrap(), MrId::Mr5);
        assert_eq!("mr2".parse::<MrId>().unwrap(), MrId::Mr2);
        assert!("MR6".parse::<MrId>().is_err());
    }

    #[test]
    fn smoothing_examples() {
        assert!(ar_smooth(&[0.0; 20], 10).iter().all(|&v| v == 0.0));
        let ones = ar_smooth(&[1.0; 30], 10);
        assert_eq!(ones[0], 0.0);
        for v in &ones[10..] {
            assert!((v - 2.928968254).abs() < 1e-6);
        }
        let mut impulse = vec![0.0; 8];
        impulse[0] = 2.0;
        let s = ar_smooth(&impulse, 10);
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 2.0).abs() < 1e-12);
        assert!((s[2] - 1.0).abs() < 1e-12);
        assert!((s[3] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_is_linear() {
        let mut rng = Rng::new(4);
        let x: Vec<f64> = (0..40).map(|_| rng.next_f64()).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.next_f64()).collect();
        let (a, b) = (1.7, -0.3);
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (sx, sy, sm) = (ar_smooth(&x, 10), ar_smooth(&y, 10), ar_smooth(&mixed, 10));
        for t in 0..40 {
            assert!((sm[t] - (a * sx[t] + b * sy[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn recursive_mode_is_bounded() {
        let s = ar_smooth_with(&[1.0; 200], 10, SmoothingMode::Recursive);
        assert!(s.iter().all(|v| v.is_finite() && *v <= 1.0 + 1e-12));
        assert!((s[199] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn calibration_examples() {
        let trace = |id: &str, m: f64| MonitorTrace {
            recording_id: id.into(),
            oracle_id: "mr/MR1".into(),
            raw: vec![0.0, m],
            smoothed: vec![0.0, m],
        };
        let t = calibrate_thresholds(&[trace("a", 0.2), trace("b", 0.5), trace("c", 0.3)]).unwrap();
        assert!((t.get("mr/MR1").unwrap() - 0.55).abs() < 1e-12);
        assert_eq!(t.provenance, vec!["a", "b", "c"]);
        let single = calibrate_thresholds(&[trace("x", 1.0)]).unwrap();
        assert!((single.get("mr/MR1").unwrap() - 1.1).abs() < 1e-12);
        assert!(calibrate_thresholds(&[]).is_err());
        let zero = calibrate_thresholds(&[trace("z", 0.0)]).unwrap();
        assert_eq!(zero.degenerate, vec!["mr/MR1"]);
        assert!(t.check_disjoint(["d", "e"]).is_ok());
        assert!(t.check_disjoint(["d", "b"]).is_err());
    }

    #[test]
    fn threshold_scaling_keeps_decisions() {
        let mut rng = Rng::new(8);
        let calib: Vec<f64> = (0..50).map(|_| rng.next_f64()).collect();
        let eval: Vec<f64> = (0..50).map(|_| 1.5 * rng.next_f64()).collect();
        for c in [0.01, 3.0, 1e4] {
            let scale = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
            let base_t = calibrate_thresholds(&[MonitorTrace::from_raw("c", "o", calib.clone(), 10, SmoothingMode::WeightedSum)]).unwrap();
            let scaled_t = calibrate_thresholds(&[MonitorTrace::from_raw("c", "o", scale(&calib), 10, SmoothingMode::WeightedSum)]).unwrap();
            assert!((scaled_t.get("o").unwrap() - c * base_t.get("o").unwrap()).abs() < 1e-9 * c);
            let e1 = MonitorTrace::from_raw("e", "o", eval.clone(), 10, SmoothingMode::WeightedSum);
            let e2 = MonitorTrace::from_raw("e", "o", scale(&eval), 10, SmoothingMode::WeightedSum);
            assert_eq!(
                e1.first_alarm(base_t.get("o").unwrap()).map(|a| a.frame),
                e2.first_alarm(scaled_t.get("o").unwrap()).map(|a| a.frame)
            );
        }
    }

    #[test]
    fn impulse_alarm_follows_filter() {
        // 1-frame spike of 10x the threshold at frame 5; smoothing delays it by one frame
        let mut raw = vec![0.0; 20];
        raw[5] = 10.0;
        let t = MonitorTrace::from_raw("r", "o", raw, 10, SmoothingMode::WeightedSum);
        let a = t.first_alarm(1.0).unwrap();
        assert_eq!(a.frame, 6);
        assert_eq!(a.score, 10.0);
        // the impulse response 10/i stays above 1 up to i = 9
        assert!(t.smoothed[14] < 10.0 / 9.0 + 1e-12 && t.smoothed[14] > 1.0);
        assert_eq!(t.smoothed[16], 0.0);
        let zero = MonitorTrace::from_raw("r", "o", vec![0.0, 0.0, 0.5, 0.0], 10, SmoothingMode::WeightedSum);
        assert_eq!(zero.first_alarm(0.0).unwrap().frame, 3);
    }

    fn symmetric_image() -> Image {
        Image::from_fn(WIDTH, 120, |x, y| {
            let m = x.min(WIDTH - 1 - x);
            [(m % 256) as u8, (y * 2) as u8, 90]
        })
    }

    #[test]
    fn constant_controller_scores() {
        let c = FnController(|_: &Image| ControlOutput {
            steering: 0.35,
            throttle: 0.6,
        });
        let step = monitor_step(&MrDef::all(), &c, &symmetric_image(), &mut Rng::new(1));
        assert_eq!(&step.raw[..4], &[0.0; 4]);
        assert!((step.raw[4] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn mirror_equivariant_controller_on_symmetric_image() {
        // steering = left-half brightness minus right-half brightness: exactly odd under flips
        let c = FnController(|img: &Image| {
            let w = img.width();
            let mut d = 0i64;
            for y in 0..img.height() {
                for x in 0..w / 2 {
                    d += img.pixel(x, y)[0] as i64 - img.pixel(w - 1 - x, y)[0] as i64;
                }
            }
            ControlOutput::clamped(d as f64 / 1e6, 0.5)
        });
        let step = monitor_step(&[MrDef::builtin(MrId::Mr5)], &c, &symmetric_image(), &mut Rng::new(1));
        assert_eq!(step.raw, vec![0.0]);
    }

    #[test]
    fn cost_contract_and_non_interference() {
        let inner = FnController(|img: &Image| ControlOutput::clamped(img.data()[7] as f64 / 255.0 - 0.5, 0.5));
        let counted = CountingController::new(&inner);
        let img = symmetric_image();
        for n in 1..=5 {
            counted.reset();
            let mrs: Vec<MrDef> = MrDef::all().into_iter().take(n).collect();
            let step = monitor_step(&mrs, &counted, &img, &mut Rng::new(2));
            assert_eq!(counted.calls(), 1 + n as u64);
            assert_eq!(step.control, inner.control(&img));
        }
    }

    #[test]
    fn mr3_trace_is_seed_deterministic() {
        let inner = FnController(|img: &Image| ControlOutput::clamped(img.data()[101] as f64 / 255.0 - 0.5, 0.5));
        let o = MrOracle::new(inner, 77);
        let img = symmetric_image();
        assert_eq!(o.score(3, &img), o.score(3, &img));
        assert_ne!(o.score(3, &img)[2], o.score(4, &img)[2]);
    }

    #[test]
    fn trace_csv_round_trip() {
        let traces = vec![
            MonitorTrace::from_raw("r", "mr/MR1", vec![0.1, 0.2, 0.3], 10, SmoothingMode::WeightedSum),
            MonitorTrace::from_raw("r", "ensemble", vec![1.0 / 3.0, 0.0, 2.5], 10, SmoothingMode::WeightedSum),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &traces, true).unwrap();
        std::fs::write(&path, buf).unwrap();
        assert_eq!(read_trace_csv("r", &path).unwrap(), traces);
    }
}
