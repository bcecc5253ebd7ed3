//! Two-state Markov Bayesian filter for the instantaneous workload level.
//!
//! Each observation instant applies one prediction through the active
//! transition matrix, weights by the observation likelihoods and normalizes:
//!
//! ```text
//! a = l_low  * (rho_ll * pi_low + (1 - rho_hh) * pi_high)
//! b = l_high * ((1 - rho_ll) * pi_low + rho_hh * pi_high)
//! pi = (a, b) / (a + b)
//! ```
//!
//! The transition matrix may be switched at any step by a context tag
//! (road type or profile) through a [`ContextPolicy`].

use std::fmt;

use thiserror::Error;

use crate::labeling::{AwpClass, Workload};
use crate::likelihood::{LikelihoodError, LikelihoodSet};
use crate::stream::{ContextKind, ContextTag, Journey, RoadType};

#[derive(Error, Debug)]
pub enum FilterError {
    #[error("transition probabilities must lie in (0, 1), got rho_ll={rho_ll} rho_hh={rho_hh}")]
    BadMatrix { rho_ll: f64, rho_hh: f64 },
    #[error("prior must lie in [0, 1], got {0}")]
    BadPrior(f64),
    #[error("observation time {t} does not follow previous step at {previous}")]
    NonIncreasingTime { t: f64, previous: f64 },
    #[error("likelihoods must be positive and finite, got ({low}, {high})")]
    BadLikelihood { low: f64, high: f64 },
    #[error("unknown transition matrix {0:?}")]
    UnknownMatrix(String),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// 2x2 row-stochastic matrix given by its two persistence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    name: String,
    rho_ll: f64,
    rho_hh: f64,
}

impl TransitionMatrix {
    pub fn new(name: &str, rho_ll: f64, rho_hh: f64) -> Result<Self, FilterError> {
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !(open(rho_ll) && open(rho_hh)) {
            return Err(FilterError::BadMatrix { rho_ll, rho_hh });
        }
        Ok(Self { name: name.to_owned(), rho_ll, rho_hh })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// P(Low -> Low).
    pub fn rho_ll(&self) -> f64 {
        self.rho_ll
    }

    /// P(High -> High).
    pub fn rho_hh(&self) -> f64 {
        self.rho_hh
    }

    /// Stationary probability of Low.
    pub fn stationary_low(&self) -> f64 {
        let to_high = 1.0 - self.rho_ll;
        let to_low = 1.0 - self.rho_hh;
        to_low / (to_low + to_high)
    }

    /// One-step prediction of `(pi_low, pi_high)`.
    pub fn predict(&self, pi_low: f64, pi_high: f64) -> (f64, f64) {
        (self.rho_ll * pi_low + (1.0 - self.rho_hh) * pi_high, (1.0 - self.rho_ll) * pi_low + self.rho_hh * pi_high)
    }

    /// Probability of staying in `state` for one step.
    pub fn persistence(&self, state: Workload) -> f64 {
        match state {
            Workload::Low => self.rho_ll,
            Workload::High => self.rho_hh,
        }
    }
}

impl fmt::Display for TransitionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(rho_ll={}, rho_hh={})", self.name, self.rho_ll, self.rho_hh)
    }
}

/// The five hand-tuned matrices: Standard, H, Ha, La and L.
pub fn builtin_matrices() -> Vec<TransitionMatrix> {
    [("Standard", 0.8, 0.92), ("H", 0.4, 0.98), ("Ha", 0.7, 0.92), ("La", 0.75, 0.8), ("L", 0.9, 0.8)]
        .into_iter()
        .map(|(n, ll, hh)| TransitionMatrix { name: n.to_owned(), rho_ll: ll, rho_hh: hh })
        .collect()
}

pub fn builtin_matrix(name: &str) -> Result<TransitionMatrix, FilterError> {
    builtin_matrices().into_iter().find(|m| m.name == name).ok_or_else(|| FilterError::UnknownMatrix(name.to_owned()))
}

/// Chooses the transition matrix from the current context tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPolicy {
    name: String,
    default: TransitionMatrix,
    by_tag: Vec<(ContextTag, TransitionMatrix)>,
}

impl ContextPolicy {
    pub fn fixed(m: TransitionMatrix) -> Self {
        Self { name: format!("fixed:{}", m.name), default: m, by_tag: Vec::new() }
    }

    /// Builds a policy; all tags must be of one context kind.
    pub fn new(name: &str, default: TransitionMatrix, by_tag: Vec<(ContextTag, TransitionMatrix)>) -> Self {
        debug_assert!(by_tag.windows(2).all(|w| w[0].0.kind() == w[1].0.kind()));
        Self { name: name.to_owned(), default, by_tag }
    }

    /// Junction -> H, urban -> Ha, country -> La, motorway -> L.
    pub fn from_road_types() -> Self {
        let m = |n: &str| builtin_matrix(n).expect("builtin");
        Self::new(
            "road",
            m("Standard"),
            vec![
                (ContextTag::Road(RoadType::Junction), m("H")),
                (ContextTag::Road(RoadType::Urban), m("Ha")),
                (ContextTag::Road(RoadType::Country), m("La")),
                (ContextTag::Road(RoadType::Motorway), m("L")),
            ],
        )
    }

    /// Low profile -> L, medium -> Standard, high -> H, as a constant matrix.
    pub fn from_awp(a: AwpClass) -> Self {
        let name = match a {
            AwpClass::L => "L",
            AwpClass::M => "Standard",
            AwpClass::H => "H",
        };
        Self { name: format!("awp:{a}"), default: builtin_matrix(name).expect("builtin"), by_tag: Vec::new() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn default_matrix(&self) -> &TransitionMatrix {
        &self.default
    }

    /// Context kind the policy reacts to, if any.
    pub fn kind(&self) -> Option<ContextKind> {
        self.by_tag.first().map(|(t, _)| t.kind())
    }

    pub fn matrix_for(&self, ctx: Option<ContextTag>) -> &TransitionMatrix {
        ctx.and_then(|c| self.by_tag.iter().find(|(t, _)| *t == c).map(|(_, m)| m)).unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadPosterior {
    pub t: f64,
    pub pi_low: f64,
    pub pi_high: f64,
}

impl WorkloadPosterior {
    /// Most probable state; ties go to High.
    pub fn map_state(&self) -> Workload {
        decide(self, 0.5)
    }
}

/// High iff `pi_high >= threshold`.
pub fn decide(p: &WorkloadPosterior, threshold: f64) -> Workload {
    if p.pi_high >= threshold {
        Workload::High
    } else {
        Workload::Low
    }
}

/// Recursion carrier: current posterior plus the model it is filtered under.
#[derive(Debug, Clone)]
pub struct FilterState<'a> {
    posterior: WorkloadPosterior,
    policy: &'a ContextPolicy,
    likelihoods: &'a LikelihoodSet,
    stepped: bool,
}

/// Starts a filter at `t = 0`. Without an explicit prior the stationary
/// distribution of the policy's default matrix is used.
pub fn init_filter<'a>(
    policy: &'a ContextPolicy,
    likelihoods: &'a LikelihoodSet,
    prior_low: Option<f64>,
) -> Result<FilterState<'a>, FilterError> {
    let pi_low = prior_low.unwrap_or_else(|| policy.default.stationary_low());
    if !(0.0..=1.0).contains(&pi_low) {
        return Err(FilterError::BadPrior(pi_low));
    }
    Ok(FilterState {
        posterior: WorkloadPosterior { t: 0.0, pi_low, pi_high: 1.0 - pi_low },
        policy,
        likelihoods,
        stepped: false,
    })
}

impl<'a> FilterState<'a> {
    pub fn posterior(&self) -> WorkloadPosterior {
        self.posterior
    }

    pub fn policy(&self) -> &'a ContextPolicy {
        self.policy
    }

    pub fn likelihoods(&self) -> &'a LikelihoodSet {
        self.likelihoods
    }

    /// Filters one instant of readings given as `(channel, value)`.
    pub fn step(
        &mut self,
        t: f64,
        obs: &[(&str, f64)],
        ctx: Option<ContextTag>,
    ) -> Result<WorkloadPosterior, FilterError> {
        self.check_time(t)?;
        let l_low = self.likelihoods.eval(obs, Workload::Low)?;
        let l_high = self.likelihoods.eval(obs, Workload::High)?;
        self.update(t, l_low, l_high, ctx)
    }

    /// Predict/update with externally computed likelihoods.
    pub fn update(
        &mut self,
        t: f64,
        l_low: f64,
        l_high: f64,
        ctx: Option<ContextTag>,
    ) -> Result<WorkloadPosterior, FilterError> {
        self.check_time(t)?;
        if !(l_low > 0.0 && l_high > 0.0 && l_low.is_finite() && l_high.is_finite()) {
            return Err(FilterError::BadLikelihood { low: l_low, high: l_high });
        }
        let m = self.policy.matrix_for(ctx);
        let (pred_low, pred_high) = m.predict(self.posterior.pi_low, self.posterior.pi_high);
        let a = l_low * pred_low;
        let b = l_high * pred_high;
        let z = a + b;
        if !(z > 0.0 && z.is_finite()) {
            return Err(FilterError::BadLikelihood { low: l_low, high: l_high });
        }
        self.posterior = WorkloadPosterior { t, pi_low: a / z, pi_high: b / z };
        self.stepped = true;
        Ok(self.posterior)
    }

    fn check_time(&self, t: f64) -> Result<(), FilterError> {
        let ok = if self.stepped { t > self.posterior.t } else { t >= self.posterior.t };
        if !ok || !t.is_finite() {
            return Err(FilterError::NonIncreasingTime { t, previous: self.posterior.t });
        }
        Ok(())
    }
}

/// Runs the filter over a journey, one step per distinct sample timestamp.
/// Samples sharing a timestamp are fused into a single observation.
pub fn run_filter(j: &Journey, mut s: FilterState<'_>) -> Result<Vec<WorkloadPosterior>, FilterError> {
    let bound = s.likelihoods.bind(&j.schema)?;
    let contexts = s.policy.kind().map(|k| j.contexts_of(k)).unwrap_or_default();
    let mut ctx_cursor = 0;
    let mut out = Vec::new();
    let mut i = 0;
    while i < j.samples.len() {
        let t = j.samples[i].t;
        let mut end = i + 1;
        while end < j.samples.len() && j.samples[end].t == t {
            end += 1;
        }
        while ctx_cursor < contexts.len() && contexts[ctx_cursor].t_end <= t {
            ctx_cursor += 1;
        }
        let ctx = contexts.get(ctx_cursor).filter(|c| c.covers(t)).map(|c| c.tag);
        let (l_low, l_high) = bound.eval_pair(j.samples[i..end].iter().map(|s| (s.channel, s.value)));
        out.push(s.update(t, l_low, l_high, ctx)?);
        i = end;
    }
    Ok(out)
}
