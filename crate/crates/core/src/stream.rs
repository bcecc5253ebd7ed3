//! Journey data model and the line-delimited journey log.
//!
//! A journey log is UTF-8 text with one record per line:
//!
//! ```text
//! J <journey_id> [awp L|M|H]
//! H <channel> <unit> <min> <max> <derive_rate 0|1>
//! C <kind> <t_start> <t_end> <tag>
//! P <t_prompt> [t_press]
//! S <channel> <t> <value>
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Channels must be
//! declared by an `H` line before any `S` line refers to them.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::labeling::AwpClass;

#[derive(Error, Debug)]
pub enum JourneyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invariant `{rule}` violated: {detail}")]
    Invariant { rule: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl JourneyError {
    fn invariant(rule: &'static str, detail: impl Into<String>) -> Self {
        JourneyError::Invariant { rule, detail: detail.into() }
    }
}

/// Declared physical channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSchema {
    pub channel_id: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    /// A rate-of-change companion `<channel_id>_rate` is derived for this channel.
    pub derive_rate: bool,
}

impl ChannelSchema {
    pub fn new(channel_id: &str, unit: &str, min: f64, max: f64, derive_rate: bool) -> Self {
        Self { channel_id: channel_id.to_owned(), unit: unit.to_owned(), min, max, derive_rate }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

/// The seven CAN-bus channels used for workload estimation. Rates are
/// derived for all but the two steering-wheel signals.
pub fn can_schema() -> Vec<ChannelSchema> {
    vec![
        // No range is published for speed; 160 mph bounds any road car.
        ChannelSchema::new("VehicleSpeed", "mph", 0.0, 160.0, true),
        ChannelSchema::new("SteeringWheelAngle", "deg", -780.0, 780.0, false),
        ChannelSchema::new("SteeringWheelAngleSpeed", "deg/s", 0.0, 1016.0, false),
        ChannelSchema::new("PedalPos", "%", 0.0, 100.0, true),
        ChannelSchema::new("BrakePressure", "bar", 0.0, 204.6, true),
        ChannelSchema::new("LateralAcceleration", "m/s^2", -11.0, 11.0, true),
        ChannelSchema::new("YawRate", "deg/s", -100.0, 100.0, true),
    ]
}

/// One timestamped reading. `channel` indexes the owning journey's schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub channel: usize,
    pub t: f64,
    pub value: f64,
}

/// A visual prompt and the optional button press answering it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptEvent {
    pub t_prompt: f64,
    pub t_press: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoadType {
    Junction,
    Urban,
    Country,
    Motorway,
}

impl RoadType {
    pub const ALL: [RoadType; 4] = [RoadType::Junction, RoadType::Urban, RoadType::Country, RoadType::Motorway];

    pub fn as_str(self) -> &'static str {
        match self {
            RoadType::Junction => "junction",
            RoadType::Urban => "urban",
            RoadType::Country => "country",
            RoadType::Motorway => "motorway",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextKind {
    Road,
    Profile,
}

impl ContextKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::Road => "road",
            ContextKind::Profile => "awp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextTag {
    Road(RoadType),
    Profile(AwpClass),
}

impl ContextTag {
    pub fn kind(self) -> ContextKind {
        match self {
            ContextTag::Road(_) => ContextKind::Road,
            ContextTag::Profile(_) => ContextKind::Profile,
        }
    }
}

impl fmt::Display for ContextTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextTag::Road(r) => f.write_str(r.as_str()),
            ContextTag::Profile(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for ContextTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(r) = RoadType::ALL.iter().find(|r| r.as_str() == s) {
            return Ok(ContextTag::Road(*r));
        }
        s.parse::<AwpClass>().map(ContextTag::Profile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextAnnotation {
    pub t_start: f64,
    pub t_end: f64,
    pub tag: ContextTag,
}

impl ContextAnnotation {
    pub fn covers(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

/// A recorded drive: interleaved channel samples plus prompt and context logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Journey {
    pub journey_id: String,
    pub schema: Vec<ChannelSchema>,
    pub samples: Vec<ChannelSample>,
    pub prompts: Vec<PromptEvent>,
    pub contexts: Vec<ContextAnnotation>,
    pub awp_label: Option<AwpClass>,
}

impl Journey {
    pub fn new(journey_id: &str, schema: Vec<ChannelSchema>) -> Self {
        Self {
            journey_id: journey_id.to_owned(),
            schema,
            samples: Vec::new(),
            prompts: Vec::new(),
            contexts: Vec::new(),
            awp_label: None,
        }
    }

    pub fn channel_index(&self, channel_id: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.channel_id == channel_id)
    }

    pub fn channel_name(&self, channel: usize) -> &str {
        &self.schema[channel].channel_id
    }

    /// Samples of one channel, in time order.
    pub fn channel_samples(&self, channel: usize) -> impl Iterator<Item = &ChannelSample> + '_ {
        self.samples.iter().filter(move |s| s.channel == channel)
    }

    /// Timestamp of the last recorded event of any kind.
    pub fn end_time(&self) -> f64 {
        let s = self.samples.last().map_or(0.0, |s| s.t);
        let p = self.prompts.last().map_or(0.0, |p| p.t_press.unwrap_or(p.t_prompt));
        let c = self.contexts.iter().map(|c| c.t_end).fold(0.0, f64::max);
        s.max(p).max(c)
    }

    /// Context annotations of one kind, sorted by start time.
    pub fn contexts_of(&self, kind: ContextKind) -> Vec<ContextAnnotation> {
        let mut out: Vec<_> = self.contexts.iter().copied().filter(|c| c.tag.kind() == kind).collect();
        out.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        out
    }

    /// Checks every type invariant of the journey and its parts.
    pub fn validate(&self) -> Result<(), JourneyError> {
        check_token("journey_id", &self.journey_id)?;
        for (i, c) in self.schema.iter().enumerate() {
            check_token("channel_id", &c.channel_id)?;
            check_token("unit", &c.unit)?;
            if c.min.is_nan() || c.max.is_nan() || c.min >= c.max {
                return Err(JourneyError::invariant(
                    "schema_range",
                    format!("channel {} has min {} >= max {}", c.channel_id, c.min, c.max),
                ));
            }
            if self.schema[..i].iter().any(|o| o.channel_id == c.channel_id) {
                return Err(JourneyError::invariant(
                    "unique_channel",
                    format!("channel {} declared twice", c.channel_id),
                ));
            }
        }

        let mut last_t = vec![f64::NEG_INFINITY; self.schema.len()];
        let mut prev_global = 0.0;
        for s in &self.samples {
            let Some(schema) = self.schema.get(s.channel) else {
                return Err(JourneyError::invariant(
                    "known_channel",
                    format!("sample refers to channel index {}", s.channel),
                ));
            };
            check_sample(schema, s)?;
            if s.t < prev_global {
                return Err(JourneyError::invariant(
                    "time_ordered",
                    format!("sample at t={} follows t={}", s.t, prev_global),
                ));
            }
            if s.t <= last_t[s.channel] {
                return Err(JourneyError::invariant(
                    "channel_time_increasing",
                    format!("channel {} repeats or reverses time at t={}", schema.channel_id, s.t),
                ));
            }
            last_t[s.channel] = s.t;
            prev_global = s.t;
        }

        for (i, p) in self.prompts.iter().enumerate() {
            if !(p.t_prompt.is_finite() && p.t_prompt >= 0.0) {
                return Err(JourneyError::invariant("time_nonnegative", format!("prompt at {}", p.t_prompt)));
            }
            let next = self.prompts.get(i + 1).map(|n| n.t_prompt);
            if let Some(next) = next {
                if next <= p.t_prompt {
                    return Err(JourneyError::invariant(
                        "prompts_ordered",
                        format!("prompt at {next} follows prompt at {}", p.t_prompt),
                    ));
                }
            }
            if let Some(press) = p.t_press {
                if !(press >= p.t_prompt) || next.is_some_and(|n| press >= n) {
                    return Err(JourneyError::invariant(
                        "press_within_prompt",
                        format!("press at {press} not in [{}, next prompt)", p.t_prompt),
                    ));
                }
            }
        }

        for kind in [ContextKind::Road, ContextKind::Profile] {
            let ctx = self.contexts_of(kind);
            for c in &ctx {
                if !(c.t_start.is_finite() && c.t_end.is_finite() && c.t_start < c.t_end) {
                    return Err(JourneyError::invariant(
                        "context_interval",
                        format!("context {} has t_start {} >= t_end {}", c.tag, c.t_start, c.t_end),
                    ));
                }
            }
            for w in ctx.windows(2) {
                if w[1].t_start < w[0].t_end {
                    return Err(JourneyError::invariant(
                        "context_disjoint",
                        format!("{} contexts overlap at t={}", kind.as_str(), w[1].t_start),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_token(what: &'static str, s: &str) -> Result<(), JourneyError> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(JourneyError::invariant("token", format!("{what} {s:?} must be non-empty without whitespace")));
    }
    Ok(())
}

fn check_sample(schema: &ChannelSchema, s: &ChannelSample) -> Result<(), JourneyError> {
    if !(s.t.is_finite() && s.t >= 0.0) {
        return Err(JourneyError::invariant("time_nonnegative", format!("sample time {}", s.t)));
    }
    if !schema.contains(s.value) {
        return Err(JourneyError::invariant(
            "value_in_range",
            format!("{} = {} at t={} outside [{}, {}]", schema.channel_id, s.value, s.t, schema.min, schema.max),
        ));
    }
    Ok(())
}

/// Appends a backward-difference rate channel `<id>_rate` for every channel
/// marked `derive_rate` that has no companion yet.
pub fn derive_rate_channels(j: &Journey) -> Result<Journey, JourneyError> {
    let mut out = j.clone();
    let mut rate_samples = Vec::new();
    for (idx, ch) in j.schema.iter().enumerate() {
        if !ch.derive_rate {
            continue;
        }
        let rate_id = format!("{}_rate", ch.channel_id);
        if j.channel_index(&rate_id).is_some() {
            continue;
        }
        let rate_idx = out.schema.len();
        out.schema.push(ChannelSchema {
            channel_id: rate_id,
            unit: format!("{}/s", ch.unit),
            min: f64::NEG_INFINITY,
            max: f64::INFINITY,
            derive_rate: false,
        });
        let mut prev: Option<&ChannelSample> = None;
        for s in j.channel_samples(idx) {
            if let Some(p) = prev {
                let dt = s.t - p.t;
                if dt <= 0.0 {
                    return Err(JourneyError::invariant(
                        "channel_time_increasing",
                        format!("channel {} has duplicate timestamp {}", ch.channel_id, s.t),
                    ));
                }
                rate_samples.push(ChannelSample { channel: rate_idx, t: s.t, value: (s.value - p.value) / dt });
            }
            prev = Some(s);
        }
    }
    if !rate_samples.is_empty() {
        out.samples.extend(rate_samples);
        out.samples.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    Ok(out)
}

pub fn read_journey(path: impl AsRef<Path>) -> Result<Journey, JourneyError> {
    let file = fs::File::open(path)?;
    parse_journey(BufReader::new(file))
}

pub fn parse_journey(reader: impl BufRead) -> Result<Journey, JourneyError> {
    let mut journey: Option<Journey> = None;
    let mut schema: Vec<ChannelSchema> = Vec::new();
    let mut samples = Vec::new();
    let mut prompts = Vec::new();
    let mut contexts = Vec::new();

    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| JourneyError::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "J" => {
                if journey.is_some() {
                    return Err(err("duplicate J record".into()));
                }
                let (id, awp) = match fields[1..] {
                    [id] => (id, None),
                    [id, "awp", a] | [id, a] => (id, Some(a.parse::<AwpClass>().map_err(err)?)),
                    _ => return Err(err("expected `J <journey_id> [awp L|M|H]`".into())),
                };
                let mut j = Journey::new(id, Vec::new());
                j.awp_label = awp;
                journey = Some(j);
            }
            "H" => {
                let [_, id, unit, min, max, flag] = fields[..] else {
                    return Err(err("expected `H <channel> <unit> <min> <max> <0|1>`".into()));
                };
                let derive_rate = match flag {
                    "0" => false,
                    "1" => true,
                    other => return Err(err(format!("derive_rate flag must be 0 or 1, got {other}"))),
                };
                schema.push(ChannelSchema {
                    channel_id: id.to_owned(),
                    unit: unit.to_owned(),
                    min: parse_num(min).map_err(err)?,
                    max: parse_num(max).map_err(err)?,
                    derive_rate,
                });
            }
            "S" => {
                let [_, id, t, v] = fields[..] else {
                    return Err(err("expected `S <channel> <t> <value>`".into()));
                };
                let channel = schema
                    .iter()
                    .position(|c| c.channel_id == id)
                    .ok_or_else(|| err(format!("undeclared channel {id}")))?;
                let s = ChannelSample { channel, t: parse_num(t).map_err(err)?, value: parse_num(v).map_err(err)? };
                check_sample(&schema[channel], &s).map_err(|e| at_line(e, line_no))?;
                samples.push(s);
            }
            "P" => {
                let (t, press) = match fields[1..] {
                    [t] => (t, None),
                    [t, p] => (t, Some(parse_num(p).map_err(err)?)),
                    _ => return Err(err("expected `P <t_prompt> [t_press]`".into())),
                };
                prompts.push(PromptEvent { t_prompt: parse_num(t).map_err(err)?, t_press: press });
            }
            "C" => {
                let [_, kind, t0, t1, tag] = fields[..] else {
                    return Err(err("expected `C <kind> <t_start> <t_end> <tag>`".into()));
                };
                let tag: ContextTag = tag.parse().map_err(err)?;
                if tag.kind().as_str() != kind {
                    return Err(err(format!("tag {tag} does not belong to context kind {kind}")));
                }
                contexts.push(ContextAnnotation {
                    t_start: parse_num(t0).map_err(err)?,
                    t_end: parse_num(t1).map_err(err)?,
                    tag,
                });
            }
            other => return Err(err(format!("unknown record tag {other:?}"))),
        }
    }

    let mut j = journey.ok_or(JourneyError::Parse { line: 0, msg: "missing J record".into() })?;
    j.schema = schema;
    j.samples = samples;
    j.prompts = prompts;
    j.contexts = contexts;
    j.validate()?;
    Ok(j)
}

fn at_line(e: JourneyError, line: usize) -> JourneyError {
    match e {
        JourneyError::Invariant { rule, detail } => {
            JourneyError::Invariant { rule, detail: format!("line {line}: {detail}") }
        }
        other => other,
    }
}

fn parse_num(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("invalid number {s:?}"))?;
    if v.is_nan() {
        return Err("NaN is not a valid value".into());
    }
    Ok(v)
}

pub fn write_journey(j: &Journey, path: impl AsRef<Path>) -> Result<(), JourneyError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    format_journey(j, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Serializes the journey records (no comment lines).
pub fn format_journey(j: &Journey, w: &mut impl Write) -> io::Result<()> {
    match j.awp_label {
        Some(a) => writeln!(w, "J {} awp {a}", j.journey_id)?,
        None => writeln!(w, "J {}", j.journey_id)?,
    }
    for c in &j.schema {
        writeln!(w, "H {} {} {} {} {}", c.channel_id, c.unit, c.min, c.max, u8::from(c.derive_rate))?;
    }
    for c in &j.contexts {
        writeln!(w, "C {} {} {} {}", c.tag.kind().as_str(), c.t_start, c.t_end, c.tag)?;
    }
    for p in &j.prompts {
        match p.t_press {
            Some(press) => writeln!(w, "P {} {press}", p.t_prompt)?,
            None => writeln!(w, "P {}", p.t_prompt)?,
        }
    }
    for s in &j.samples {
        writeln!(w, "S {} {} {}", j.schema[s.channel].channel_id, s.t, s.value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speed_schema() -> Vec<ChannelSchema> {
        vec![ChannelSchema::new("speed", "mph", 0.0, 160.0, true)]
    }

    fn parse(s: &str) -> Result<Journey, JourneyError> {
        parse_journey(s.as_bytes())
    }

    #[test]
    fn reads_minimal_journey() {
        let j = parse("J j1\nH speed mph 0 160 1\nS speed 0.0 10\nS speed 0.1 11\nS speed 0.2 12\n").unwrap();
        assert_eq!(j.samples.len(), 3);
        assert!(j.prompts.is_empty());
        assert_eq!(j.samples[2], ChannelSample { channel: 0, t: 0.2, value: 12.0 });
    }

    #[test]
    fn rejects_value_below_range() {
        let e = parse("J j1\nH speed mph 0 160 1\nS speed 0.0 -5\n").unwrap_err();
        match e {
            JourneyError::Invariant { rule, detail } => {
                assert_eq!(rule, "value_in_range");
                assert!(detail.contains("line 3"), "{detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let e = parse("J j1\nH speed mph 0 160 1\nS speed zero 1\n").unwrap_err();
        assert!(matches!(e, JourneyError::Parse { line: 3, .. }), "{e:?}");
        let e = parse("J j1\nS speed 0 1\n").unwrap_err();
        assert!(matches!(e, JourneyError::Parse { line: 2, .. }), "{e:?}");
        let e = parse("J j1\nX what\n").unwrap_err();
        assert!(matches!(e, JourneyError::Parse { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn rejects_structural_violations() {
        let cases = [
            ("J j\nH s u 0 1 0\nS s 1 0.5\nS s 1 0.5\n", "channel_time_increasing"),
            ("J j\nH s u 0 1 0\nH t u 0 1 0\nS s 2 0.5\nS t 1 0.5\n", "time_ordered"),
            ("J j\nP 10 11\nP 9\n", "prompts_ordered"),
            ("J j\nP 10 17\nP 17\n", "press_within_prompt"),
            ("J j\nP 10 9\n", "press_within_prompt"),
            ("J j\nC road 0 10 urban\nC road 5 20 junction\n", "context_disjoint"),
            ("J j\nC road 10 10 urban\n", "context_interval"),
            ("J j\nH s u 1 1 0\n", "schema_range"),
            ("J j\nH s u 0 1 0\nH s u 0 2 0\n", "unique_channel"),
        ];
        for (text, rule) in cases {
            match parse(text) {
                Err(JourneyError::Invariant { rule: r, .. }) => assert_eq!(r, rule, "{text}"),
                other => panic!("{text}: expected {rule}, got {other:?}"),
            }
        }
    }

    #[test]
    fn contexts_of_different_kinds_may_overlap() {
        let j = parse("J j awp M\nC road 0 10 urban\nC awp 0 100 M\n").unwrap();
        assert_eq!(j.contexts.len(), 2);
        assert_eq!(j.awp_label, Some(AwpClass::M));
        let e = parse("J j\nC road 0 10 M\n").unwrap_err();
        assert!(matches!(e, JourneyError::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_journey_writes_header_only() {
        let j = Journey::new("empty", speed_schema());
        let mut buf = Vec::new();
        format_journey(&j, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "J empty\nH speed mph 0 160 1\n");
    }

    #[test]
    fn single_sample_writes_one_record() {
        let mut j = Journey::new("one", speed_schema());
        j.samples.push(ChannelSample { channel: 0, t: 0.125, value: 33.3 });
        let mut buf = Vec::new();
        format_journey(&j, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("S ")).count(), 1);
        assert!(text.ends_with("S speed 0.125 33.3\n"));
    }

    #[test]
    fn rate_of_first_difference() {
        let mut j = Journey::new("r", speed_schema());
        j.samples.push(ChannelSample { channel: 0, t: 0.0, value: 10.0 });
        j.samples.push(ChannelSample { channel: 0, t: 1.0, value: 12.0 });
        let d = derive_rate_channels(&j).unwrap();
        assert_eq!(d.schema.len(), 2);
        assert_eq!(d.schema[1].channel_id, "speed_rate");
        let rates: Vec<_> = d.channel_samples(1).copied().collect();
        assert_eq!(rates, vec![ChannelSample { channel: 1, t: 1.0, value: 2.0 }]);
        d.validate().unwrap();
    }

    #[test]
    fn constant_channel_has_zero_rate() {
        let mut j = Journey::new("c", speed_schema());
        for i in 0..20 {
            j.samples.push(ChannelSample { channel: 0, t: i as f64 * 0.1, value: 42.0 });
        }
        let d = derive_rate_channels(&j).unwrap();
        let rates: Vec<_> = d.channel_samples(1).collect();
        assert_eq!(rates.len(), 19);
        assert!(rates.iter().all(|s| s.value == 0.0));
    }

    #[test]
    fn can_schema_yields_twelve_channels() {
        let j = Journey::new("can", can_schema());
        assert_eq!(j.schema.len(), 7);
        let d = derive_rate_channels(&j).unwrap();
        assert_eq!(d.schema.len(), 12);
        assert!(d.channel_index("SteeringWheelAngle_rate").is_none());
        assert!(d.channel_index("YawRate_rate").is_some());
        // idempotent once companions exist
        assert_eq!(derive_rate_channels(&d).unwrap(), d);
    }

    #[test]
    fn duplicate_timestamp_is_rejected_by_rate_derivation() {
        let mut j = Journey::new("d", speed_schema());
        j.samples.push(ChannelSample { channel: 0, t: 1.0, value: 1.0 });
        j.samples.push(ChannelSample { channel: 0, t: 1.0, value: 2.0 });
        assert!(derive_rate_channels(&j).is_err());
    }
}
