//! Prompt/press labelling, Low Workload Ratio, and average workload profiles.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::stream::{ChannelSample, Journey};

#[derive(Error, Debug, PartialEq)]
pub enum LabelError {
    #[error("cannot compute a workload ratio from zero labels")]
    Empty,
    #[error("low workload ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("label window needs non-negative extents with positive total, got pre {pre} post {post}")]
    BadWindow { pre: f64, post: f64 },
}

/// Instantaneous workload level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Workload {
    Low,
    High,
}

impl Workload {
    pub fn is_high(self) -> bool {
        self == Workload::High
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Workload::Low => "Low",
            Workload::High => "High",
        })
    }
}

impl FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Low" | "low" => Ok(Workload::Low),
            "High" | "high" => Ok(Workload::High),
            other => Err(format!("unknown workload level {other:?}")),
        }
    }
}

/// Average workload profile. Ordered by low workload ratio: `H < M < L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AwpClass {
    /// High average workload (LWR <= 0.55).
    H,
    /// Medium average workload.
    M,
    /// Low average workload (LWR > 0.85).
    L,
}

impl AwpClass {
    /// Classes in score-vector order.
    pub const ALL: [AwpClass; 3] = [AwpClass::L, AwpClass::M, AwpClass::H];

    /// Position in score vectors (L, M, H).
    pub fn index(self) -> usize {
        match self {
            AwpClass::L => 0,
            AwpClass::M => 1,
            AwpClass::H => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

impl fmt::Display for AwpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AwpClass::H => "H",
            AwpClass::M => "M",
            AwpClass::L => "L",
        })
    }
}

impl FromStr for AwpClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "H" => Ok(AwpClass::H),
            "M" => Ok(AwpClass::M),
            "L" => Ok(AwpClass::L),
            other => Err(format!("unknown profile {other:?}, expected L, M or H")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledInstant {
    pub t: f64,
    pub label: Workload,
}

/// Interval `[t_prompt - pre_s, t_prompt + post_s]` whose samples inherit a
/// prompt's label, truncated at midpoints between adjacent prompts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelWindow {
    pub pre_s: f64,
    pub post_s: f64,
}

impl LabelWindow {
    pub fn new(pre_s: f64, post_s: f64) -> Result<Self, LabelError> {
        if !(pre_s >= 0.0 && post_s >= 0.0 && pre_s + post_s > 0.0) || !(pre_s + post_s).is_finite() {
            return Err(LabelError::BadWindow { pre: pre_s, post: post_s });
        }
        Ok(Self { pre_s, post_s })
    }
}

impl Default for LabelWindow {
    fn default() -> Self {
        Self { pre_s: 2.0, post_s: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptLabels {
    pub labels: Vec<LabeledInstant>,
    /// Presses that fell outside their prompt's interval and were ignored.
    pub ignored_presses: usize,
}

/// Labels each prompt Low if answered by a press before the next prompt,
/// otherwise High.
pub fn label_prompts(j: &Journey) -> PromptLabels {
    let mut ignored = 0;
    let labels = j
        .prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let next = j.prompts.get(i + 1).map_or(f64::INFINITY, |n| n.t_prompt);
            let label = match p.t_press {
                Some(press) if press >= p.t_prompt && press < next => Workload::Low,
                Some(_) => {
                    ignored += 1;
                    Workload::High
                }
                None => Workload::High,
            };
            LabeledInstant { t: p.t_prompt, label }
        })
        .collect();
    PromptLabels { labels, ignored_presses: ignored }
}

/// Low Workload Ratio: `#Low / (#Low + #High)`.
pub fn lwr(labels: &[LabeledInstant]) -> Result<f64, LabelError> {
    if labels.is_empty() {
        return Err(LabelError::Empty);
    }
    let low = labels.iter().filter(|l| l.label == Workload::Low).count();
    Ok(low as f64 / labels.len() as f64)
}

pub fn awp_from_lwr(lwr: f64) -> Result<AwpClass, LabelError> {
    if !(0.0..=1.0).contains(&lwr) {
        return Err(LabelError::RatioOutOfRange(lwr));
    }
    Ok(if lwr <= 0.55 {
        AwpClass::H
    } else if lwr <= 0.85 {
        AwpClass::M
    } else {
        AwpClass::L
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub sample: ChannelSample,
    pub label: Option<Workload>,
}

/// Propagates prompt labels to the samples inside each prompt's window.
///
/// Windows of neighbouring prompts are cut at their midpoint; a sample lying
/// exactly on a midpoint belongs to the later prompt. `labels` must be sorted
/// by time.
pub fn expand_labels(j: &Journey, labels: &[LabeledInstant], w: LabelWindow) -> Vec<LabeledSample> {
    let mut next = 0; // first label with t > sample time
    j.samples
        .iter()
        .map(|s| {
            while next < labels.len() && labels[next].t <= s.t {
                next += 1;
            }
            let before = next.checked_sub(1).map(|i| &labels[i]);
            let after = labels.get(next);
            let nearest = match (before, after) {
                (Some(b), Some(a)) => {
                    if s.t - b.t < a.t - s.t {
                        Some(b)
                    } else {
                        Some(a)
                    }
                }
                (b, a) => b.or(a),
            };
            let label = nearest.filter(|l| s.t >= l.t - w.pre_s && s.t <= l.t + w.post_s).map(|l| l.label);
            LabeledSample { sample: *s, label }
        })
        .collect()
}
