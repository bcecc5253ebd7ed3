//! Per-channel, per-state observation densities learned by Gaussian KDE and
//! stored as lookup tables on a uniform grid.
//!
//! The observation likelihood of a set of simultaneous readings is the product
//! of the per-channel table values (conditional independence given the
//! workload state).

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::labeling::{expand_labels, label_prompts, LabelWindow, Workload};
use crate::stream::{ChannelSchema, Journey};

#[derive(Error, Debug)]
pub enum LikelihoodError {
    #[error("KDE needs at least one value")]
    NoData,
    #[error("data has zero spread (std and IQR are 0); use a fixed bandwidth")]
    ZeroSpread,
    #[error("invalid KDE configuration: {0}")]
    Config(String),
    #[error("channel {channel} has {count} labelled {state} samples, need at least 2")]
    InsufficientSamples { channel: String, state: Workload, count: usize },
    #[error("no likelihood table for channel {channel} in state {state}")]
    UnknownChannel { channel: String, state: Workload },
    #[error("journeys disagree on channel set: {0}")]
    SchemaMismatch(String),
    #[error("table file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `h = 0.9 * min(std, IQR / 1.34) * n^(-1/5)`.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdeConfig {
    pub bandwidth: BandwidthRule,
    pub grid_points: usize,
    /// Grid extends this many bandwidths beyond the data range on each side.
    pub grid_margin: f64,
    pub density_floor: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self { bandwidth: BandwidthRule::Silverman, grid_points: 512, grid_margin: 4.0, density_floor: 1e-9 }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<(), LikelihoodError> {
        let bad = |m: &str| Err(LikelihoodError::Config(m.to_owned()));
        if self.grid_points < 64 {
            return bad("grid_points must be at least 64");
        }
        if !(self.grid_margin >= 0.0 && self.grid_margin.is_finite()) {
            return bad("grid_margin must be a finite non-negative multiple of the bandwidth");
        }
        if !(self.density_floor > 0.0 && self.density_floor < 1.0) {
            return bad("density_floor must lie in (0, 1)");
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad("fixed bandwidth must be positive");
            }
        }
        Ok(())
    }
}

/// Density sampled on a strictly increasing grid, already floored.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    grid: Vec<f64>,
    density: Vec<f64>,
    bandwidth: f64,
}

impl DensityTable {
    pub fn new(grid: Vec<f64>, density: Vec<f64>, bandwidth: f64) -> Result<Self, String> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(format!(
                "need >= 2 grid points and matching densities, got {} / {}",
                grid.len(),
                density.len()
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|x| !x.is_finite()) {
            return Err("grid must be finite and strictly increasing".into());
        }
        if density.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err("densities must be positive and finite".into());
        }
        Ok(Self { grid, density, bandwidth })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Linear interpolation on the grid; clamps to the edge values outside it.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.grid.len();
        let (lo, hi) = (self.grid[0], self.grid[n - 1]);
        if x <= lo {
            return self.density[0];
        }
        if x >= hi {
            return self.density[n - 1];
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut i = (((x - lo) / step) as usize).min(n - 2);
        while i > 0 && x < self.grid[i] {
            i -= 1;
        }
        while i + 2 < n && x > self.grid[i + 1] {
            i += 1;
        }
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let f = (x - x0) / (x1 - x0);
        self.density[i] * (1.0 - f) + self.density[i + 1] * f
    }

    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid.windows(2).zip(self.density.windows(2)).map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1])).sum()
    }

    /// Grid abscissa of the largest density.
    pub fn mode(&self) -> f64 {
        let i = self.density.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
        self.grid[i]
    }
}

/// Linear-interpolated quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + (sorted[i + 1] - sorted[i]) * frac
    } else {
        sorted[i]
    }
}

fn silverman_bandwidth(sorted: &[f64]) -> Result<f64, LikelihoodError> {
    let n = sorted.len() as f64;
    if sorted.len() < 2 {
        return Err(LikelihoodError::ZeroSpread);
    }
    let mean = sorted.iter().sum::<f64>() / n;
    let std = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let mut spread = std.min(iqr / 1.34);
    if spread <= 0.0 {
        // Heavily tied data (e.g. a point mass at zero brake pressure) has IQR 0.
        spread = std;
    }
    if !(spread > 0.0) {
        return Err(LikelihoodError::ZeroSpread);
    }
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian-kernel density estimate tabulated on a uniform grid spanning
/// `[min - margin*h, max + margin*h]`.
pub fn fit_kde(values: &[f64], cfg: &KdeConfig) -> Result<DensityTable, LikelihoodError> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(LikelihoodError::NoData);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LikelihoodError::Config("non-finite value in KDE input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = match cfg.bandwidth {
        BandwidthRule::Silverman => silverman_bandwidth(&sorted)?,
        BandwidthRule::Fixed(h) => h,
    };

    let n_grid = cfg.grid_points;
    let lo = sorted[0] - cfg.grid_margin * h;
    let hi = sorted[sorted.len() - 1] + cfg.grid_margin * h;
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - h, hi + h) };
    let span = hi - lo;
    let grid: Vec<f64> = (0..n_grid).map(|i| lo + span * i as f64 / (n_grid - 1) as f64).collect();
    let step = span / (n_grid - 1) as f64;

    // Scatter each value onto the grid points within 9 bandwidths; the
    // remaining kernel mass is below 1e-17.
    let cutoff = 9.0 * h;
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * PI).sqrt());
    let mut density = vec![0.0; n_grid];
    for &v in &sorted {
        let first = (((v - cutoff - lo) / step).floor().max(0.0)) as usize;
        let last = (((v + cutoff - lo) / step).ceil() as usize).min(n_grid - 1);
        for (g, d) in grid[first..=last].iter().zip(&mut density[first..=last]) {
            let z = (g - v) / h;
            *d += (-0.5 * z * z).exp();
        }
    }
    for d in &mut density {
        *d = (*d * norm).max(cfg.density_floor);
    }
    Ok(DensityTable { grid, density, bandwidth: h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    pub channel: String,
    pub state: Workload,
    pub table: DensityTable,
}

/// Likelihood tables for a set of channels, both states each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LikelihoodSet {
    tables: Vec<LikelihoodTable>,
}

impl LikelihoodSet {
    pub fn new(mut tables: Vec<LikelihoodTable>) -> Self {
        tables.sort_by(|a, b| a.channel.cmp(&b.channel).then(a.state.cmp(&b.state)));
        Self { tables }
    }

    pub fn tables(&self) -> &[LikelihoodTable] {
        &self.tables
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, channel: &str, state: Workload) -> Option<&DensityTable> {
        self.tables.iter().find(|t| t.channel == channel && t.state == state).map(|t| &t.table)
    }

    fn require(&self, channel: &str, state: Workload) -> Result<&DensityTable, LikelihoodError> {
        self.get(channel, state).ok_or_else(|| LikelihoodError::UnknownChannel { channel: channel.to_owned(), state })
    }

    /// Product of per-channel densities for simultaneous readings.
    pub fn eval(&self, obs: &[(&str, f64)], state: Workload) -> Result<f64, LikelihoodError> {
        obs.iter().try_fold(1.0, |acc, &(ch, v)| Ok(acc * self.require(ch, state)?.value_at(v)))
    }

    /// Resolves a journey schema to table pairs, indexed like the schema.
    pub fn bind(&self, schema: &[ChannelSchema]) -> Result<BoundLikelihoods<'_>, LikelihoodError> {
        let pairs = schema
            .iter()
            .map(|c| Ok([self.require(&c.channel_id, Workload::Low)?, self.require(&c.channel_id, Workload::High)?]))
            .collect::<Result<_, LikelihoodError>>()?;
        Ok(BoundLikelihoods { pairs })
    }
}

/// Tables resolved against one schema for fast per-sample lookup.
#[derive(Debug, Clone)]
pub struct BoundLikelihoods<'a> {
    pairs: Vec<[&'a DensityTable; 2]>,
}

impl BoundLikelihoods<'_> {
    /// `(l_low, l_high)` for readings given as `(schema index, value)`.
    pub fn eval_pair(&self, obs: impl IntoIterator<Item = (usize, f64)>) -> (f64, f64) {
        obs.into_iter().fold((1.0, 1.0), |(l, h), (ch, v)| {
            let [low, high] = self.pairs[ch];
            (l * low.value_at(v), h * high.value_at(v))
        })
    }
}

/// Fits one table per (channel, state) from prompt-window labelled samples.
/// Journeys whose id is in `exclude` are left out (leave-one-driver-out).
pub fn train_likelihoods(
    journeys: &[Journey],
    window: LabelWindow,
    cfg: &KdeConfig,
    exclude: &HashSet<String>,
) -> Result<LikelihoodSet, LikelihoodError> {
    cfg.validate()?;
    let used: Vec<&Journey> = journeys.iter().filter(|j| !exclude.contains(&j.journey_id)).collect();
    let Some(first) = used.first() else {
        return Err(LikelihoodError::SchemaMismatch("no journeys left after exclusion".into()));
    };
    let channels: Vec<&str> = first.schema.iter().map(|c| c.channel_id.as_str()).collect();
    let mut values = vec![[Vec::new(), Vec::new()]; channels.len()];
    for j in &used {
        let names: Vec<&str> = j.schema.iter().map(|c| c.channel_id.as_str()).collect();
        if names != channels {
            return Err(LikelihoodError::SchemaMismatch(format!(
                "journey {} has channels {names:?}, expected {channels:?}",
                j.journey_id
            )));
        }
        let labels = label_prompts(j).labels;
        for ls in expand_labels(j, &labels, window) {
            if let Some(state) = ls.label {
                values[ls.sample.channel][state as usize].push(ls.sample.value);
            }
        }
    }

    let mut tables = Vec::with_capacity(2 * channels.len());
    for (ch, per_state) in channels.iter().zip(&values) {
        for state in [Workload::Low, Workload::High] {
            let v = &per_state[state as usize];
            if v.len() < 2 {
                return Err(LikelihoodError::InsufficientSamples { channel: (*ch).to_owned(), state, count: v.len() });
            }
            tables.push(LikelihoodTable { channel: (*ch).to_owned(), state, table: fit_kde(v, cfg)? });
        }
    }
    Ok(LikelihoodSet::new(tables))
}

/// Writes `T <channel> <state> <bandwidth> <n_grid>` followed by `<x> <density>` lines.
pub fn format_table(t: &LikelihoodTable, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "T {} {} {} {}", t.channel, t.state, t.table.bandwidth, t.table.grid.len())?;
    for (x, d) in t.table.grid.iter().zip(&t.table.density) {
        writeln!(w, "{x} {d}")?;
    }
    Ok(())
}

/// Header fields and rows of the table being read.
type PartialTable = (String, Workload, f64, usize, Vec<f64>, Vec<f64>);

/// Parses every table in a stream; `#` lines are skipped.
pub fn parse_tables(reader: impl BufRead) -> Result<Vec<LikelihoodTable>, LikelihoodError> {
    let mut out = Vec::new();
    let mut current: Option<PartialTable> = None;
    let mut last_line = 0;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        last_line = line_no;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| LikelihoodError::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("invalid number {s:?}")));
        if fields[0] == "T" {
            if let Some((ch, _, _, want, grid, _)) = &current {
                if grid.len() != *want {
                    return Err(err(format!("table {ch} has {} rows, header said {want}", grid.len())));
                }
            }
            if let Some(done) = current.take() {
                out.push(finish_table(done).map_err(err)?);
            }
            let [_, ch, state, bw, n_grid] = fields[..] else {
                return Err(err("expected `T <channel> <state> <bandwidth> <n_grid>`".into()));
            };
            let n_grid: usize = n_grid.parse().map_err(|_| err(format!("invalid grid size {n_grid:?}")))?;
            current = Some((ch.to_owned(), state.parse().map_err(err)?, num(bw)?, n_grid, Vec::new(), Vec::new()));
        } else {
            let Some((_, _, _, want, grid, dens)) = current.as_mut() else {
                return Err(err("row before any T header".into()));
            };
            let [x, d] = fields[..] else {
                return Err(err("expected `<x> <density>`".into()));
            };
            if grid.len() == *want {
                return Err(err("more rows than the header declared".into()));
            }
            grid.push(num(x)?);
            dens.push(num(d)?);
        }
    }
    if let Some(done) = current.take() {
        if done.4.len() != done.3 {
            return Err(LikelihoodError::Parse {
                line: last_line,
                msg: format!("table {} has {} rows, header said {}", done.0, done.4.len(), done.3),
            });
        }
        out.push(finish_table(done).map_err(|msg| LikelihoodError::Parse { line: last_line, msg })?);
    }
    Ok(out)
}

fn finish_table(
    (channel, state, bw, _, grid, density): (String, Workload, f64, usize, Vec<f64>, Vec<f64>),
) -> Result<LikelihoodTable, String> {
    Ok(LikelihoodTable { channel, state, table: DensityTable::new(grid, density, bw)? })
}

/// File name used for a table inside a table directory.
pub fn table_file_name(t: &LikelihoodTable) -> String {
    format!("{}.{}.tbl", t.channel, t.state.to_string().to_lowercase())
}

/// Reads all `*.tbl` files of a directory, in file-name order.
pub fn read_table_dir(dir: impl AsRef<Path>) -> Result<LikelihoodSet, LikelihoodError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "tbl"))
        .collect();
    paths.sort();
    let mut tables = Vec::new();
    for p in paths {
        tables.extend(parse_tables(BufReader::new(fs::File::open(p)?))?);
    }
    Ok(LikelihoodSet::new(tables))
}
