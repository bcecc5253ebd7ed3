//! Average workload profile classification from fixed-length multichannel
//! windows.

pub mod ridge;
pub mod rocket;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::ConfusionMatrix;
use crate::labeling::AwpClass;
use crate::likelihood::quantile_sorted;
use crate::stream::{derive_rate_channels, Journey, JourneyError};

pub use ridge::RidgeClassifier;
pub use rocket::{build_kernel_bank, KernelBank};

/// Uniform resampling rate of the profiler input.
pub const RESAMPLE_HZ: f64 = 20.0;
pub const DEFAULT_WINDOW_LEN: usize = 400;
pub const WINDOW_LENGTHS: [usize; 6] = [100, 200, 400, 600, 1200, 1800];
pub const DEFAULT_FEATURES: usize = 2000;

#[derive(Error, Debug)]
pub enum ProfileError {
    #[error("invalid window: {0}")]
    Window(String),
    #[error("scores must be non-empty, finite and non-negative with a positive sum")]
    BadScores,
    #[error("empty score sequence")]
    EmptySequence,
    #[error("training needs at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("no windows: every journey is shorter than one window")]
    NoWindows,
    #[error("journey {0} has no profile label")]
    Unlabelled(String),
    #[error("invalid profiling config: {0}")]
    Config(String),
    #[error(transparent)]
    Journey(#[from] JourneyError),
    #[error(transparent)]
    Kernel(#[from] rocket::RocketError),
    #[error(transparent)]
    Ridge(#[from] ridge::RidgeError),
}

/// `Q x L` block of synchronized samples starting at `t_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub journey_id: String,
    pub t_start: f64,
    rows: Vec<Vec<f64>>,
}

impl Window {
    pub fn new(journey_id: &str, t_start: f64, rows: Vec<Vec<f64>>) -> Result<Self, ProfileError> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || len == 0 {
            return Err(ProfileError::Window("needs at least one channel and one sample".into()));
        }
        if rows.iter().any(|r| r.len() != len) {
            return Err(ProfileError::Window("channel rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ProfileError::Window("non-finite entry".into()));
        }
        Ok(Self { journey_id: journey_id.to_owned(), t_start, rows })
    }

    pub fn n_channels(&self) -> usize {
        self.rows.len()
    }

    pub fn len(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.rows[channel]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Linear interpolation of `(t, value)` points at `times`, holding the edge
/// values outside the sampled span. Points must be sorted by time.
pub fn interpolate(points: &[(f64, f64)], times: &[f64]) -> Vec<f64> {
    if points.is_empty() {
        return vec![0.0; times.len()];
    }
    let mut k = 0;
    times
        .iter()
        .map(|&t| {
            while k + 1 < points.len() && points[k + 1].0 <= t {
                k += 1;
            }
            let (t0, v0) = points[k];
            if t <= t0 || k + 1 == points.len() {
                return v0;
            }
            let (t1, v1) = points[k + 1];
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        })
        .collect()
}

/// Every channel (rate channels included) on a uniform grid from 0 to the
/// journey end.
pub fn resample(j: &Journey, hz: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>), ProfileError> {
    let j = derive_rate_channels(j)?;
    let n = (j.end_time() * hz).floor() as usize + 1;
    let times: Vec<f64> = (0..n).map(|i| i as f64 / hz).collect();
    let rows = (0..j.schema.len())
        .map(|c| {
            let pts: Vec<(f64, f64)> = j.channel_samples(c).map(|s| (s.t, s.value)).collect();
            interpolate(&pts, &times)
        })
        .collect();
    Ok((times, rows))
}

/// Unscaled non-overlapping windows of `len` samples at 20 Hz. A journey
/// shorter than one window yields none.
pub fn raw_windows(j: &Journey, len: usize) -> Result<Vec<Window>, ProfileError> {
    if len == 0 {
        return Err(ProfileError::Config("window length must be positive".into()));
    }
    let (times, rows) = resample(j, RESAMPLE_HZ)?;
    (0..times.len() / len)
        .map(|w| {
            let r = w * len..(w + 1) * len;
            Window::new(&j.journey_id, times[r.start], rows.iter().map(|row| row[r.clone()].to_vec()).collect())
        })
        .collect()
}

/// Per-channel median and IQR; channels with zero IQR are flagged constant
/// and only centred.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustScaleParams {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
    pub constant: Vec<bool>,
}

impl RobustScaleParams {
    pub fn fit(windows: &[&Window]) -> Result<Self, ProfileError> {
        let q = windows.first().ok_or(ProfileError::NoWindows)?.n_channels();
        if windows.iter().any(|w| w.n_channels() != q) {
            return Err(ProfileError::Window("windows differ in channel count".into()));
        }
        let mut median = Vec::with_capacity(q);
        let mut iqr = Vec::with_capacity(q);
        let mut constant = Vec::with_capacity(q);
        for c in 0..q {
            let mut v: Vec<f64> = windows.iter().flat_map(|w| w.row(c).iter().copied()).collect();
            v.sort_by(f64::total_cmp);
            let spread = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
            median.push(quantile_sorted(&v, 0.5));
            constant.push(!(spread > 0.0));
            iqr.push(if spread > 0.0 { spread } else { 1.0 });
        }
        Ok(Self { median, iqr, constant })
    }

    pub fn apply(&self, w: &Window) -> Result<Window, ProfileError> {
        if w.n_channels() != self.median.len() {
            return Err(ProfileError::Window(format!(
                "window has {} channels, scaler expects {}",
                w.n_channels(),
                self.median.len()
            )));
        }
        let rows = w
            .rows
            .iter()
            .enumerate()
            .map(|(c, r)| r.iter().map(|x| (x - self.median[c]) / self.iqr[c]).collect())
            .collect();
        Ok(Window { journey_id: w.journey_id.clone(), t_start: w.t_start, rows })
    }
}

/// Scaled windows of one journey.
pub fn preprocess(j: &Journey, len: usize, scale: &RobustScaleParams) -> Result<Vec<Window>, ProfileError> {
    raw_windows(j, len)?.iter().map(|w| scale.apply(w)).collect()
}

/// Per-class confidence in (L, M, H) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreVector(pub [f64; 3]);

impl ScoreVector {
    /// Normalizes non-negative weights onto the simplex.
    pub fn from_weights(w: [f64; 3]) -> Result<Self, ProfileError> {
        let s: f64 = w.iter().sum();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(s > 0.0) {
            return Err(ProfileError::BadScores);
        }
        Ok(Self(w.map(|v| v / s)))
    }

    pub fn get(&self, c: AwpClass) -> f64 {
        self.0[c.index()]
    }
}

/// Simple moving average over the whole sequence, renormalized.
pub fn sequence_filter(scores: &[ScoreVector]) -> Result<ScoreVector, ProfileError> {
    if scores.is_empty() {
        return Err(ProfileError::EmptySequence);
    }
    let mut sum = [0.0; 3];
    for s in scores {
        for (a, b) in sum.iter_mut().zip(s.0) {
            *a += b;
        }
    }
    ScoreVector::from_weights(sum.map(|v| v / scores.len() as f64))
}

/// Trailing moving average with `width` scores, one output per input.
pub fn moving_average(scores: &[ScoreVector], width: usize) -> Result<Vec<ScoreVector>, ProfileError> {
    if width == 0 {
        return Err(ProfileError::Config("moving average width must be positive".into()));
    }
    (0..scores.len()).map(|i| sequence_filter(&scores[(i + 1).saturating_sub(width)..=i])).collect()
}

/// Most confident class; ties go to the higher-workload class.
pub fn decide_awp(s: &ScoreVector) -> AwpClass {
    let mut best = AwpClass::H;
    for c in [AwpClass::M, AwpClass::L] {
        if s.get(c) > s.get(best) {
            best = c;
        }
    }
    best
}

/// Trained profile classifier: scaler, fitted kernel bank and ridge model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileModel {
    pub window_len: usize,
    pub scale: RobustScaleParams,
    pub bank: KernelBank,
    pub ridge: RidgeClassifier,
}

impl ProfileModel {
    /// Fits on unscaled training windows.
    pub fn fit(windows: &[&Window], labels: &[AwpClass], seed: u64, n_features: usize) -> Result<Self, ProfileError> {
        let first = windows.first().ok_or(ProfileError::NoWindows)?;
        let mut classes: Vec<AwpClass> = labels.to_vec();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(ProfileError::TooFewClasses(classes.len()));
        }
        let scale = RobustScaleParams::fit(windows)?;
        let scaled = windows.iter().map(|w| scale.apply(w)).collect::<Result<Vec<_>, _>>()?;
        let mut bank = build_kernel_bank(seed, first.n_channels(), first.len(), n_features)?;
        bank.fit_biases(&scaled.iter().collect::<Vec<_>>())?;
        let features = bank.transform_all(&scaled)?;
        let y: Vec<usize> = labels.iter().map(|c| c.index()).collect();
        let ridge = RidgeClassifier::fit(&features, &y, 3, &ridge::default_alphas())?;
        Ok(Self { window_len: first.len(), scale, bank, ridge })
    }

    /// Score of one unscaled window.
    pub fn score(&self, w: &Window) -> Result<ScoreVector, ProfileError> {
        let f = self.bank.transform(&self.scale.apply(w)?)?;
        let p = self.ridge.predict_proba(&f);
        ScoreVector::from_weights([p[0], p[1], p[2]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Random 80/20 split of all windows.
    Window,
    /// Whole journeys held out, stratified by class.
    Journey,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "window" => Ok(SplitMode::Window),
            "journey" => Ok(SplitMode::Journey),
            other => Err(format!("unknown split mode {other:?}, expected window or journey")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    pub window_len: usize,
    pub n_features: usize,
    pub train_fraction: f64,
    pub split: SplitMode,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW_LEN,
            n_features: DEFAULT_FEATURES,
            train_fraction: 0.8,
            split: SplitMode::Window,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JourneyProfile {
    pub journey_id: String,
    pub truth: AwpClass,
    pub window_scores: Vec<ScoreVector>,
    pub window_decisions: Vec<AwpClass>,
    pub filtered: ScoreVector,
    pub decision: AwpClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub journeys: Vec<JourneyProfile>,
    /// Over test windows, each judged on its own.
    pub window_confusion: ConfusionMatrix,
    /// Over journeys with test windows, after the sequence filter.
    pub journey_confusion: ConfusionMatrix,
    pub n_train_windows: usize,
    pub alpha: f64,
}

impl ProfileReport {
    pub fn window_accuracy(&self) -> f64 {
        self.window_confusion.accuracy()
    }

    pub fn journey_accuracy(&self) -> f64 {
        self.journey_confusion.accuracy()
    }

    pub fn render(&self) -> String {
        let names = ["L", "M", "H"];
        let mut s = String::new();
        for j in &self.journeys {
            for (w, d) in j.window_scores.iter().zip(&j.window_decisions) {
                let [l, m, h] = w.0;
                let _ = writeln!(s, "window {} {l:.6} {m:.6} {h:.6} {d}", j.journey_id);
            }
            let [l, m, h] = j.filtered.0;
            let _ = writeln!(
                s,
                "journey {} truth {} filtered {l:.6} {m:.6} {h:.6} decision {}",
                j.journey_id, j.truth, j.decision
            );
        }
        let _ = writeln!(s, "train_windows {} alpha {}", self.n_train_windows, self.alpha);
        let _ = writeln!(
            s,
            "window_accuracy {:.6} window_macro_f1 {:.6}",
            self.window_accuracy(),
            self.window_confusion.macro_f1()
        );
        let _ = writeln!(
            s,
            "journey_accuracy {:.6} journey_macro_f1 {:.6}",
            self.journey_accuracy(),
            self.journey_confusion.macro_f1()
        );
        s.push_str("window_confusion\n");
        s.push_str(&self.window_confusion.render(&names));
        s.push_str("journey_confusion\n");
        s.push_str(&self.journey_confusion.render(&names));
        s
    }
}

/// Splits, trains and scores held-out windows. Journeys are labelled by
/// their `awp_label`.
pub fn run_profiling(journeys: &[Journey], cfg: &ProfileConfig) -> Result<ProfileReport, ProfileError> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(ProfileError::Config("train fraction must lie in (0, 1)".into()));
    }
    let mut windows: Vec<(usize, Window)> = Vec::new();
    let mut truth = Vec::with_capacity(journeys.len());
    for (i, j) in journeys.iter().enumerate() {
        truth.push(j.awp_label.ok_or_else(|| ProfileError::Unlabelled(j.journey_id.clone()))?);
        windows.extend(raw_windows(j, cfg.window_len)?.into_iter().map(|w| (i, w)));
    }
    if windows.is_empty() {
        return Err(ProfileError::NoWindows);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let is_train: Vec<bool> = match cfg.split {
        SplitMode::Window => {
            let mut order: Vec<usize> = (0..windows.len()).collect();
            order.shuffle(&mut rng);
            let n_train = (windows.len() as f64 * cfg.train_fraction).round() as usize;
            let mut flag = vec![false; windows.len()];
            order[..n_train].iter().for_each(|&i| flag[i] = true);
            flag
        }
        SplitMode::Journey => {
            let mut train_journey = vec![false; journeys.len()];
            for class in AwpClass::ALL {
                let mut members: Vec<usize> = (0..journeys.len()).filter(|&i| truth[i] == class).collect();
                members.shuffle(&mut rng);
                let n_train = (members.len() as f64 * cfg.train_fraction).round() as usize;
                members[..n_train].iter().for_each(|&i| train_journey[i] = true);
            }
            windows.iter().map(|(i, _)| train_journey[*i]).collect()
        }
    };

    let train: Vec<&Window> = windows.iter().zip(&is_train).filter(|(_, t)| **t).map(|((_, w), _)| w).collect();
    let train_labels: Vec<AwpClass> =
        windows.iter().zip(&is_train).filter(|(_, t)| **t).map(|((i, _), _)| truth[*i]).collect();
    let model = ProfileModel::fit(&train, &train_labels, cfg.seed, cfg.n_features)?;

    let mut per_journey: Vec<Vec<ScoreVector>> = vec![Vec::new(); journeys.len()];
    for ((i, w), train) in windows.iter().zip(&is_train) {
        if !train {
            per_journey[*i].push(model.score(w)?);
        }
    }
    let mut window_confusion = ConfusionMatrix::new(3);
    let mut journey_confusion = ConfusionMatrix::new(3);
    let mut profiles = Vec::new();
    for (i, scores) in per_journey.into_iter().enumerate() {
        if scores.is_empty() {
            continue;
        }
        let window_decisions: Vec<AwpClass> = scores.iter().map(decide_awp).collect();
        for d in &window_decisions {
            window_confusion.add(truth[i].index(), d.index());
        }
        let filtered = sequence_filter(&scores)?;
        let decision = decide_awp(&filtered);
        journey_confusion.add(truth[i].index(), decision.index());
        profiles.push(JourneyProfile {
            journey_id: journeys[i].journey_id.clone(),
            truth: truth[i],
            window_scores: scores,
            window_decisions,
            filtered,
            decision,
        });
    }
    Ok(ProfileReport {
        journeys: profiles,
        window_confusion,
        journey_confusion,
        n_train_windows: train.len(),
        alpha: model.ridge.alpha(),
    })
}
