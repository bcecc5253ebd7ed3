//! Synthetic journeys with known latent workload.
//!
//! A two-state Markov chain ticks at 20 Hz under the matrix of the active
//! scripted context (or the driver's own matrix outside any context). Each
//! channel samples independently at jittered times, drawing from the
//! Gaussian mixture of the current state, clamped to the channel range.
//! Prompts recur every 5 to 10 s and are answered with a press only when the
//! latent state is Low.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::filter::TransitionMatrix;
use crate::labeling::{awp_from_lwr, label_prompts, lwr, AwpClass, Workload};
use crate::stream::{
    can_schema, ChannelSample, ChannelSchema, ContextAnnotation, ContextTag, Journey, PromptEvent, RoadType,
};

/// Latent state update rate.
pub const TICK_HZ: f64 = 20.0;

/// State separation of the default emission model, in pooled standard
/// deviations.
pub const DEFAULT_SEPARATION: f64 = 1.0;

/// Relative emission spread difference between neighbouring profile styles.
pub const DEFAULT_STYLE_OFFSET: f64 = 0.15;

#[derive(Error, Debug)]
pub enum SimError {
    #[error("invalid mixture: {0}")]
    Mixture(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("truth file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self, SimError> {
        let n = weights.len();
        if n == 0 || means.len() != n || stds.len() != n {
            return Err(SimError::Mixture("component vectors must be non-empty and equally long".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SimError::Mixture("weights must lie on the simplex".into()));
        }
        if stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) || means.iter().any(|m| !m.is_finite()) {
            return Err(SimError::Mixture("stds must be positive and means finite".into()));
        }
        Ok(Self { weights, means, stds })
    }

    pub fn gaussian(mean: f64, std: f64) -> Result<Self, SimError> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn std(&self) -> f64 {
        let mu = self.mean();
        let second: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * (s * s + (m - mu).powi(2)))
            .sum();
        second.sqrt()
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self { means: self.means.iter().map(|m| m + delta).collect(), ..self.clone() }
    }

    /// Scales the whole distribution about its mean.
    pub fn scaled(&self, factor: f64) -> Self {
        let mu = self.mean();
        Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| mu + factor * (m - mu)).collect(),
            stds: self.stds.iter().map(|s| s * factor).collect(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let mut u: f64 = rng.random();
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                k = i;
                break;
            }
            u -= w;
        }
        let n = Normal::new(self.means[k], self.stds[k]).expect("validated std");
        n.sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEmission {
    pub schema: ChannelSchema,
    /// Low-state distribution.
    pub low: GaussianMixture,
    /// Sign of the High-state mean shift.
    pub direction: f64,
}

/// Per-channel state-conditional emission distributions. The High mixture is
/// the Low mixture shifted by `separation` pooled standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionModel {
    pub channels: Vec<ChannelEmission>,
    pub separation: f64,
}

impl EmissionModel {
    /// CAN-like channels with mildly heavy-tailed mixtures.
    pub fn can_default(separation: f64) -> Self {
        let mix = |w: &[f64], m: &[f64], s: &[f64]| {
            GaussianMixture::new(w.to_vec(), m.to_vec(), s.to_vec()).expect("static mixture")
        };
        let lows = [
            (mix(&[0.5, 0.5], &[35.0, 55.0], &[8.0, 8.0]), -1.0),
            (mix(&[0.8, 0.2], &[0.0, 0.0], &[15.0, 60.0]), 1.0),
            (mix(&[0.7, 0.3], &[20.0, 60.0], &[10.0, 25.0]), 1.0),
            (mix(&[0.6, 0.4], &[25.0, 45.0], &[10.0, 10.0]), -1.0),
            (mix(&[0.7, 0.3], &[8.0, 25.0], &[3.0, 10.0]), 1.0),
            (mix(&[0.8, 0.2], &[0.0, 0.0], &[1.0, 2.5]), 1.0),
            (mix(&[0.8, 0.2], &[0.0, 0.0], &[4.0, 12.0]), 1.0),
        ];
        let channels = can_schema()
            .into_iter()
            .zip(lows)
            .map(|(schema, (low, direction))| ChannelEmission { schema, low, direction })
            .collect();
        Self { channels, separation }
    }

    pub fn schema(&self) -> Vec<ChannelSchema> {
        self.channels.iter().map(|c| c.schema.clone()).collect()
    }

    pub fn mixture(&self, channel: usize, state: Workload) -> GaussianMixture {
        let c = &self.channels[channel];
        match state {
            Workload::Low => c.low.clone(),
            Workload::High => c.low.shifted(c.direction * self.separation * c.low.std()),
        }
    }

    /// Scales every channel's spread by `factor` (driver style).
    pub fn styled(&self, factor: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| ChannelEmission { low: c.low.scaled(factor), ..c.clone() })
                .collect(),
            separation: self.separation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverStyle {
    pub awp: AwpClass,
    /// Latent matrix per 20 Hz tick outside scripted contexts.
    pub transition: TransitionMatrix,
    /// Probability that a prompt during Low workload is answered.
    pub press_reliability: f64,
}

impl DriverStyle {
    pub fn new(awp: AwpClass, transition: TransitionMatrix, press_reliability: f64) -> Result<Self, SimError> {
        if !(press_reliability > 0.9 && press_reliability <= 1.0) {
            return Err(SimError::Config(format!("press reliability {press_reliability} outside (0.9, 1]")));
        }
        let pi_low = transition.stationary_low();
        if awp_from_lwr(pi_low).ok() != Some(awp) {
            return Err(SimError::Config(format!(
                "stationary low probability {pi_low:.3} of {} is outside the {awp} band",
                transition.name()
            )));
        }
        Ok(Self { awp, transition, press_reliability })
    }

    /// Stationary Low probability about 0.95, 0.73 and 0.40 for L, M and H.
    pub fn for_class(awp: AwpClass) -> Self {
        let (rho_ll, rho_hh) = match awp {
            AwpClass::L => (0.9995, 0.99),
            AwpClass::M => (0.997, 0.992),
            AwpClass::H => (0.9925, 0.995),
        };
        let m = TransitionMatrix::new(&format!("style-{awp}"), rho_ll, rho_hh).expect("static matrix");
        Self::new(awp, m, 0.99).expect("static style")
    }
}

/// A context interval together with the latent matrix in force during it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedContext {
    pub annotation: ContextAnnotation,
    pub transition: TransitionMatrix,
}

/// Latent matrix per road type: junctions mostly High, motorways mostly Low.
pub fn road_matrix(road: RoadType) -> TransitionMatrix {
    let (ll, hh) = match road {
        RoadType::Junction => (0.98, 0.998),
        RoadType::Urban => (0.995, 0.995),
        RoadType::Country => (0.9975, 0.9925),
        RoadType::Motorway => (0.9995, 0.99),
    };
    TransitionMatrix::new(&format!("sim-{}", road.as_str()), ll, hh).expect("static matrix")
}

/// Random route of road segments covering `[0, duration_s)`.
pub fn random_road_script(duration_s: f64, seed: u64) -> Vec<ScriptedContext> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0x0520));
    let mut out = Vec::new();
    let mut t = 0.0;
    while t < duration_s {
        let road = RoadType::ALL[rng.random_range(0..4)];
        let len = match road {
            RoadType::Junction => rng.random_range(10.0..30.0),
            _ => rng.random_range(40.0..120.0),
        };
        let end = (t + len).min(duration_s);
        out.push(ScriptedContext {
            annotation: ContextAnnotation { t_start: t, t_end: end, tag: ContextTag::Road(road) },
            transition: road_matrix(road),
        });
        t = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub duration_s: f64,
    /// Mean arrival rate per channel, aligned with the emission model.
    pub rate_hz: Vec<f64>,
    /// Relative jitter of inter-arrival gaps, in [0, 1).
    pub jitter: f64,
    pub prompt_min_s: f64,
    pub prompt_max_s: f64,
    pub context_script: Vec<ScriptedContext>,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(duration_s: f64, seed: u64) -> Self {
        Self {
            duration_s,
            rate_hz: vec![10.0, 20.0, 20.0, 20.0, 20.0, 25.0, 25.0],
            jitter: 0.3,
            prompt_min_s: 5.0,
            prompt_max_s: 10.0,
            context_script: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self, em: &EmissionModel) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration_s));
        }
        if self.rate_hz.len() != em.channels.len() {
            return bad(format!("{} rates for {} channels", self.rate_hz.len(), em.channels.len()));
        }
        if self.rate_hz.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("channel rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 1)", self.jitter));
        }
        if !(self.prompt_min_s > 0.0 && self.prompt_min_s <= self.prompt_max_s) {
            return bad("prompt interval bounds must satisfy 0 < min <= max".into());
        }
        if self.prompt_min_s < 1.6 {
            return bad("prompt interval must leave room for the press delay".into());
        }
        Ok(())
    }
}

/// Latent state per 20 Hz tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub states: Vec<Workload>,
}

impl StateTrace {
    pub fn state_at(&self, t: f64) -> Workload {
        let k = ((t * TICK_HZ).floor().max(0.0) as usize).min(self.states.len() - 1);
        self.states[k]
    }

    pub fn fraction_low(&self) -> f64 {
        self.states.iter().filter(|s| **s == Workload::Low).count() as f64 / self.states.len() as f64
    }
}

/// Writes `<t> <state>` per tick.
pub fn format_truth(trace: &StateTrace, w: &mut impl Write) -> io::Result<()> {
    for (k, s) in trace.states.iter().enumerate() {
        writeln!(w, "{} {s}", k as f64 / TICK_HZ)?;
    }
    Ok(())
}

/// Reads `<t> <state>` records (any spacing of times); `#` lines are skipped.
pub fn parse_truth(reader: impl BufRead) -> Result<Vec<(f64, Workload)>, SimError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| SimError::Parse { line: n + 1, msg };
        let [t, s] = line.split_whitespace().collect::<Vec<_>>()[..] else {
            return Err(err("expected `<t> <state>`".into()));
        };
        let t: f64 = t.parse().map_err(|_| err(format!("invalid time {t:?}")))?;
        if out.last().is_some_and(|(p, _): &(f64, Workload)| t <= *p) {
            return Err(err("times must increase".into()));
        }
        out.push((t, s.parse().map_err(err)?));
    }
    Ok(out)
}

fn round_to(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

fn draw_state(rng: &mut impl Rng, pi_low: f64) -> Workload {
    if rng.random::<f64>() < pi_low {
        Workload::Low
    } else {
        Workload::High
    }
}

/// Generates one journey and its latent state trace.
pub fn simulate_journey(
    journey_id: &str,
    cfg: &SimConfig,
    style: &DriverStyle,
    em: &EmissionModel,
) -> Result<(Journey, StateTrace), SimError> {
    cfg.validate(em)?;
    let n_ticks = (cfg.duration_s * TICK_HZ).ceil() as usize;
    let matrix_at = |t: f64| {
        cfg.context_script.iter().find(|c| c.annotation.covers(t)).map_or(&style.transition, |c| &c.transition)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 1));
    let mut states = Vec::with_capacity(n_ticks);
    states.push(draw_state(&mut rng, matrix_at(0.0).stationary_low()));
    for k in 1..n_ticks {
        let prev = states[k - 1];
        let stay = matrix_at(k as f64 / TICK_HZ).persistence(prev);
        let next = if rng.random::<f64>() < stay {
            prev
        } else {
            match prev {
                Workload::Low => Workload::High,
                Workload::High => Workload::Low,
            }
        };
        states.push(next);
    }
    let trace = StateTrace { states };

    let mut journey = Journey::new(journey_id, em.schema());
    for (c, rate) in cfg.rate_hz.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 100 + c as u64));
        let mixtures = [em.mixture(c, Workload::Low), em.mixture(c, Workload::High)];
        let schema = &em.channels[c].schema;
        let gap = 1.0 / rate;
        let mut t = rng.random::<f64>() * gap;
        loop {
            let ts = round_to(t, 1e6);
            if ts > cfg.duration_s {
                break;
            }
            let v = mixtures[trace.state_at(ts) as usize].sample(&mut rng);
            journey.samples.push(ChannelSample { channel: c, t: ts, value: schema.clamp(round_to(v, 1e4)) });
            t += gap * (1.0 + cfg.jitter * rng.random_range(-1.0..=1.0));
        }
    }
    journey.samples.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.channel.cmp(&b.channel)));

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2));
    let mut t = round_to(rng.random_range(cfg.prompt_min_s..=cfg.prompt_max_s), 1e3);
    while t < cfg.duration_s {
        let low = trace.state_at(t) == Workload::Low;
        let pressed = low && rng.random::<f64>() < style.press_reliability;
        let delay = rng.random_range(0.3..1.5);
        journey.prompts.push(PromptEvent { t_prompt: t, t_press: pressed.then(|| round_to(t + delay, 1e3)) });
        t = round_to(t + rng.random_range(cfg.prompt_min_s..=cfg.prompt_max_s), 1e3);
    }

    journey.contexts = cfg.context_script.iter().map(|c| c.annotation).collect();
    let labels = label_prompts(&journey).labels;
    journey.awp_label = lwr(&labels).ok().map(|r| awp_from_lwr(r).expect("ratio in [0, 1]"));
    Ok((journey, trace))
}

/// One simulated driver.
#[derive(Debug, Clone)]
pub struct SimulatedDriver {
    pub journey: Journey,
    pub truth: StateTrace,
    /// Style the driver was generated with; the journey's label comes from
    /// the realized ratio instead.
    pub intended: AwpClass,
}

/// `n_per_class` drivers of each profile. Spread scale of the emissions is
/// `1 - style_offset`, `1`, `1 + style_offset` for L, M and H drivers.
pub fn simulate_population(
    n_per_class: usize,
    cfg: &SimConfig,
    em: &EmissionModel,
    style_offset: f64,
) -> Result<Vec<SimulatedDriver>, SimError> {
    if n_per_class == 0 {
        return Err(SimError::Config("n_per_class must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&style_offset) {
        return Err(SimError::Config(format!("style offset {style_offset} outside [0, 1)")));
    }
    let mut out = Vec::with_capacity(3 * n_per_class);
    for (ci, awp) in AwpClass::ALL.iter().enumerate() {
        let style = DriverStyle::for_class(*awp);
        let factor = 1.0 + style_offset * (ci as f64 - 1.0);
        let styled = em.styled(factor);
        for k in 0..n_per_class {
            let idx = ci * n_per_class + k;
            let driver_cfg = SimConfig { seed: sub_seed(cfg.seed, 1000 + idx as u64), ..cfg.clone() };
            let (journey, truth) = simulate_journey(&format!("d{idx:03}"), &driver_cfg, &style, &styled)?;
            out.push(SimulatedDriver { journey, truth, intended: *awp });
        }
    }
    Ok(out)
}
