use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use workload_core::eval::{best_f1_threshold, binary_metrics, compare_policies, render_comparison, roc, PolicyChoice};
use workload_core::filter::{builtin_matrix, init_filter, run_filter, ContextPolicy};
use workload_core::labeling::{awp_from_lwr, expand_labels, label_prompts, lwr, AwpClass, LabelWindow, Workload};
use workload_core::likelihood::{
    format_table, read_table_dir, table_file_name, train_likelihoods, BandwidthRule, KdeConfig,
};
use workload_core::profiler::{
    raw_windows, run_profiling, ProfileConfig, SplitMode, DEFAULT_FEATURES, DEFAULT_WINDOW_LEN,
};
use workload_core::simulator::{
    format_truth, random_road_script, simulate_population, EmissionModel, SimConfig, DEFAULT_SEPARATION,
    DEFAULT_STYLE_OFFSET,
};
use workload_core::stream::{format_journey, read_journey, Journey};

use crate::config::{Provenance, RunConfig};
use crate::Common;

/// Misuse of the command line, reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn seed(common: &Common, cfg: &RunConfig) -> Result<u64> {
    cfg.resolve(common.seed, "seed", 0)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().ok_or_else(|| usage("--out <dir> (or WORKLOAD_OUT_DIR) is required"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes `header` plus `body` to `--out` (a directory receives
/// `default_name`), or to stdout when no output is configured.
fn emit(common: &Common, default_name: &str, header: &str, body: &[u8]) -> Result<()> {
    match &common.out {
        Some(p) => {
            let path = if p.is_dir() { p.join(default_name) } else { p.clone() };
            write_file(&path, header, body)
        }
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{header}")?;
            out.write_all(body)?;
            Ok(())
        }
    }
}

fn write_file(path: &Path, header: &str, body: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(header.len() + 1 + body.len());
    bytes.extend_from_slice(header.as_bytes());
    bytes.push(b'\n');
    bytes.extend_from_slice(body);
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_journey(path: &Path) -> Result<Journey> {
    read_journey(path).with_context(|| format!("reading journey {}", path.display()))
}

/// All `*.journey` files of a directory, in file-name order.
fn load_journeys(dir: &Path) -> Result<Vec<Journey>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "journey"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .journey files in {}", dir.display());
    }
    paths.iter().map(|p| load_journey(p)).collect()
}

fn label_window(cfg: &RunConfig, pre: Option<f64>, post: Option<f64>) -> Result<LabelWindow> {
    let d = LabelWindow::default();
    Ok(LabelWindow::new(cfg.resolve(pre, "pre", d.pre_s)?, cfg.resolve(post, "post", d.post_s)?)?)
}

pub fn simulate(common: &Common) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let duration: f64 = cfg.resolve(None, "duration_s", 600.0)?;
    let n_per_class: usize = cfg.resolve(None, "n_per_class", 1)?;
    let separation: f64 = cfg.resolve(None, "separation", DEFAULT_SEPARATION)?;
    let style_offset: f64 = cfg.resolve(None, "style_offset", DEFAULT_STYLE_OFFSET)?;
    let road: bool = cfg.resolve(None, "road_contexts", false)?;
    let mut sim = SimConfig::new(duration, seed);
    sim.jitter = cfg.resolve(None, "jitter", sim.jitter)?;
    sim.prompt_min_s = cfg.resolve(None, "prompt_min_s", sim.prompt_min_s)?;
    sim.prompt_max_s = cfg.resolve(None, "prompt_max_s", sim.prompt_max_s)?;
    if let Some(rates) = cfg.get::<String>("rate_hz")? {
        sim.rate_hz = rates
            .split(',')
            .map(|r| r.trim().parse::<f64>().with_context(|| format!("config key rate_hz: invalid rate {r:?}")))
            .collect::<Result<_>>()?;
    }
    if road {
        sim.context_script = random_road_script(duration, seed);
    }
    let rates = sim.rate_hz.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let prov = Provenance::new(
        "simulate",
        seed,
        &[
            ("duration_s", duration.to_string()),
            ("n_per_class", n_per_class.to_string()),
            ("separation", separation.to_string()),
            ("style_offset", style_offset.to_string()),
            ("road_contexts", road.to_string()),
            ("jitter", sim.jitter.to_string()),
            ("prompt_min_s", sim.prompt_min_s.to_string()),
            ("prompt_max_s", sim.prompt_max_s.to_string()),
            ("rate_hz", rates),
        ],
    );

    let dir = out_dir(common)?;
    let em = EmissionModel::can_default(separation);
    let drivers = simulate_population(n_per_class, &sim, &em, style_offset)?;
    for d in &drivers {
        let id = &d.journey.journey_id;
        let mut body = Vec::new();
        format_journey(&d.journey, &mut body)?;
        write_file(&dir.join(format!("{id}.journey")), &prov.header(), &body)?;
        let mut truth = Vec::new();
        format_truth(&d.truth, &mut truth)?;
        write_file(&dir.join(format!("{id}.truth")), &prov.header(), &truth)?;
    }
    eprintln!("wrote {} journeys to {}", drivers.len(), dir.display());
    Ok(())
}

pub fn label(common: &Common, journey: &Path, pre: Option<f64>, post: Option<f64>) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let w = label_window(&cfg, pre, post)?;
    let j = load_journey(journey)?;
    let out = label_prompts(&j);
    if out.ignored_presses > 0 {
        eprintln!("warning: {} presses fell outside their prompt interval and were ignored", out.ignored_presses);
    }
    let ratio = lwr(&out.labels).with_context(|| format!("journey {} has no prompts", j.journey_id))?;
    let awp = awp_from_lwr(ratio)?;
    let labelled = expand_labels(&j, &out.labels, w).iter().filter(|s| s.label.is_some()).count();
    let low = out.labels.iter().filter(|l| l.label == Workload::Low).count();

    let mut body = String::new();
    for l in &out.labels {
        let _ = writeln!(body, "{} {}", l.t, l.label);
    }
    let _ = writeln!(
        body,
        "# summary journey={} lwr={ratio} awp={awp} prompts={} low={low} high={} ignored_presses={} labelled_samples={labelled}",
        j.journey_id,
        out.labels.len(),
        out.labels.len() - low,
        out.ignored_presses,
    );
    let prov = Provenance::new("label", seed, &[("pre", w.pre_s.to_string()), ("post", w.post_s.to_string())]);
    emit(common, &format!("{}.labels", j.journey_id), &prov.header(), body.as_bytes())
}

pub struct KdeFlags {
    pub pre: Option<f64>,
    pub post: Option<f64>,
    pub bandwidth: Option<String>,
    pub grid_points: Option<usize>,
    pub grid_margin: Option<f64>,
    pub density_floor: Option<f64>,
}

fn kde_config(cfg: &RunConfig, f: &KdeFlags) -> Result<(KdeConfig, Vec<(&'static str, String)>)> {
    let d = KdeConfig::default();
    let bw: String = cfg.resolve(f.bandwidth.clone(), "bandwidth", "silverman".into())?;
    let bandwidth = if bw == "silverman" {
        BandwidthRule::Silverman
    } else {
        match bw.parse::<f64>() {
            Ok(h) if h > 0.0 && h.is_finite() => BandwidthRule::Fixed(h),
            _ => bail!("bandwidth must be `silverman` or a positive number, got {bw:?}"),
        }
    };
    let kde = KdeConfig {
        bandwidth,
        grid_points: cfg.resolve(f.grid_points, "grid_points", d.grid_points)?,
        grid_margin: cfg.resolve(f.grid_margin, "grid_margin", d.grid_margin)?,
        density_floor: cfg.resolve(f.density_floor, "density_floor", d.density_floor)?,
    };
    kde.validate()?;
    let params = vec![
        ("bandwidth", bw),
        ("grid_points", kde.grid_points.to_string()),
        ("grid_margin", kde.grid_margin.to_string()),
        ("density_floor", kde.density_floor.to_string()),
    ];
    Ok((kde, params))
}

pub fn train(common: &Common, journeys: &Path, exclude: &[String], flags: KdeFlags) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let w = label_window(&cfg, flags.pre, flags.post)?;
    let (kde, mut params) = kde_config(&cfg, &flags)?;
    let dir = out_dir(common)?;
    let all = load_journeys(journeys)?;
    let excluded: HashSet<String> = exclude.iter().cloned().collect();
    if let Some(id) = excluded.iter().find(|id| !all.iter().any(|j| &j.journey_id == *id)) {
        bail!("excluded journey {id} is not in {}", journeys.display());
    }
    let set = train_likelihoods(&all, w, &kde, &excluded)?;

    let mut ex: Vec<&String> = excluded.iter().collect();
    ex.sort();
    params.extend([
        ("pre", w.pre_s.to_string()),
        ("post", w.post_s.to_string()),
        ("exclude", ex.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",")),
    ]);
    let prov = Provenance::new("train", seed, &params);
    for t in set.tables() {
        let mut body = Vec::new();
        format_table(t, &mut body)?;
        write_file(&dir.join(table_file_name(t)), &prov.header(), &body)?;
    }
    eprintln!("wrote {} tables to {}", set.len(), dir.display());
    Ok(())
}

fn parse_policy(text: &str, j: Option<&Journey>) -> Result<PolicyChoice> {
    let matrix = |name: &str| builtin_matrix(name).map_err(|e| usage(e.to_string()));
    Ok(match text.split_once(':') {
        None if text == "road" => PolicyChoice::Fixed(ContextPolicy::from_road_types()),
        None if text == "awp" => match j {
            None => PolicyChoice::ByProfile,
            Some(j) => match j.awp_label {
                Some(a) => PolicyChoice::Fixed(ContextPolicy::from_awp(a)),
                None => bail!("policy awp needs a profile label, journey {} has none", j.journey_id),
            },
        },
        Some(("fixed", name)) => PolicyChoice::Fixed(ContextPolicy::fixed(matrix(name)?)),
        Some(("awp", class)) => {
            let a: AwpClass = class.parse().map_err(usage)?;
            PolicyChoice::Fixed(ContextPolicy::from_awp(a))
        }
        _ => return Err(usage(format!("unknown policy {text:?}, expected fixed:<name>, road, awp or awp:<L|M|H>"))),
    })
}

pub fn filter(
    common: &Common,
    journey: &Path,
    tables: &Path,
    policy: Option<String>,
    threshold: Option<f64>,
    prior: Option<f64>,
) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let policy_text: String = cfg.resolve(policy, "policy", "fixed:Standard".into())?;
    let threshold: Option<f64> = threshold.map_or_else(|| cfg.get("threshold"), |t| Ok(Some(t)))?;
    let prior: Option<f64> = prior.map_or_else(|| cfg.get("prior"), |p| Ok(Some(p)))?;
    if let Some(t) = threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(usage(format!("threshold must lie in (0, 1), got {t}")));
        }
    }

    let j = load_journey(journey)?;
    let set = read_table_dir(tables).with_context(|| format!("reading tables from {}", tables.display()))?;
    let PolicyChoice::Fixed(policy) = parse_policy(&policy_text, Some(&j))? else { unreachable!("journey given") };
    let posts = run_filter(&j, init_filter(&policy, &set, prior)?)?;

    let mut body = String::new();
    for p in &posts {
        let _ = write!(body, "{} {} {}", p.t, p.pi_low, p.pi_high);
        if let Some(t) = threshold {
            let _ = write!(body, " {}", workload_core::filter::decide(p, t));
        }
        body.push('\n');
    }
    let prov = Provenance::new(
        "filter",
        seed,
        &[
            ("policy", policy_text),
            ("threshold", threshold.map_or("none".into(), |t| t.to_string())),
            ("prior", prior.map_or("stationary".into(), |p| p.to_string())),
        ],
    );
    emit(common, &format!("{}.filter", j.journey_id), &prov.header(), body.as_bytes())
}

pub fn profile(
    common: &Common,
    journeys: &Path,
    length: Option<usize>,
    split: Option<SplitMode>,
    features: Option<usize>,
    train_fraction: Option<f64>,
) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let split = match split {
        Some(s) => s,
        None => cfg.get::<String>("split")?.map_or(Ok(SplitMode::Window), |s| s.parse().map_err(anyhow::Error::msg))?,
    };
    let pc = ProfileConfig {
        window_len: cfg.resolve(length, "length", DEFAULT_WINDOW_LEN)?,
        n_features: cfg.resolve(features, "features", DEFAULT_FEATURES)?,
        train_fraction: cfg.resolve(train_fraction, "train_fraction", 0.8)?,
        split,
        seed,
    };
    let all = load_journeys(journeys)?;
    for j in &all {
        if raw_windows(j, pc.window_len)?.is_empty() {
            eprintln!("warning: journey {} is shorter than one window of {} samples", j.journey_id, pc.window_len);
        }
    }
    let report = run_profiling(&all, &pc)?;
    let prov = Provenance::new(
        "profile",
        seed,
        &[
            ("length", pc.window_len.to_string()),
            ("features", pc.n_features.to_string()),
            ("train_fraction", pc.train_fraction.to_string()),
            ("split", format!("{:?}", pc.split).to_lowercase()),
        ],
    );
    emit(common, "profile.report", &prov.header(), report.render().as_bytes())
}

struct PredRow {
    t: f64,
    pi_high: Option<f64>,
    decision: Option<Workload>,
}

fn data_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push((n + 1, line.split_whitespace().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn num(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse().with_context(|| format!("{}:{line}: invalid number {s:?}", path.display()))
}

fn read_rows(path: &Path) -> Result<Vec<PredRow>> {
    let mut rows: Vec<PredRow> = Vec::new();
    for (n, f) in data_lines(path)? {
        let bad =
            || anyhow::anyhow!("{}:{n}: expected `<t> <pi_low> <pi_high> [decision]` or `<t> <value>`", path.display());
        let t = num(path, n, &f[0])?;
        let row = match f.len() {
            2 => match f[1].parse::<Workload>() {
                Ok(d) => PredRow { t, pi_high: None, decision: Some(d) },
                Err(_) => PredRow { t, pi_high: Some(num(path, n, &f[1])?), decision: None },
            },
            3 | 4 => PredRow {
                t,
                pi_high: Some(num(path, n, &f[2])?),
                decision: f
                    .get(3)
                    .map(|d| d.parse::<Workload>().map_err(|e| anyhow::anyhow!("{}:{n}: {e}", path.display())))
                    .transpose()?,
            },
            _ => return Err(bad()),
        };
        if rows.last().is_some_and(|p| row.t <= p.t) {
            bail!("{}:{n}: times must increase", path.display());
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_truth(path: &Path) -> Result<Vec<(f64, Workload)>> {
    let mut out: Vec<(f64, Workload)> = Vec::new();
    for (n, f) in data_lines(path)? {
        let [t, s] = &f[..] else {
            bail!("{}:{n}: expected `<t> <state>`", path.display());
        };
        let t = num(path, n, t)?;
        let s: Workload = s.parse().map_err(|e| anyhow::anyhow!("{}:{n}: {e}", path.display()))?;
        if out.last().is_some_and(|(p, _)| t <= *p) {
            bail!("{}:{n}: times must increase", path.display());
        }
        out.push((t, s));
    }
    Ok(out)
}

/// Index of the last row at or before `t`.
fn latest_at<T>(rows: &[T], time: impl Fn(&T) -> f64, t: f64) -> Option<usize> {
    rows.partition_point(|r| time(r) <= t).checked_sub(1)
}

pub fn evaluate(
    common: &Common,
    pred: &Path,
    truth: &Path,
    scores: Option<&Path>,
    threshold: Option<f64>,
    roc_out: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let threshold: Option<f64> = threshold.map_or_else(|| cfg.get("threshold"), |t| Ok(Some(t)))?;
    let preds = read_rows(pred)?;
    let truth_rows = read_truth(truth)?;
    let score_rows = match scores {
        Some(p) => read_rows(p)?,
        None => Vec::new(),
    };
    let score_src = if scores.is_some() { &score_rows } else { &preds };

    // each truth instant is judged by the latest prediction available then
    let (mut y, mut yhat, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for &(t, state) in &truth_rows {
        let Some(i) = latest_at(&preds, |r| r.t, t) else { continue };
        let p = &preds[i];
        let decision = match (threshold, p.pi_high, p.decision) {
            (Some(thr), Some(ph), _) => {
                if ph >= thr {
                    Workload::High
                } else {
                    Workload::Low
                }
            }
            (_, _, Some(d)) => d,
            (_, Some(ph), None) => {
                if ph >= 0.5 {
                    Workload::High
                } else {
                    Workload::Low
                }
            }
            (_, None, None) => unreachable!("rows carry a score or a decision"),
        };
        y.push(state);
        yhat.push(decision);
        if let Some(k) = latest_at(score_src, |r| r.t, t) {
            if let Some(v) = score_src[k].pi_high {
                s.push((state, v));
            }
        }
    }
    if y.is_empty() {
        bail!("no truth instant falls after the first prediction");
    }
    let m = binary_metrics(&y, &yhat)?;
    let n_high = y.iter().filter(|t| t.is_high()).count();

    let mut body = String::new();
    let _ = writeln!(body, "instances {} high {} low {}", y.len(), n_high, y.len() - n_high);
    let _ = writeln!(body, "accuracy {:.6}", m.accuracy);
    let _ = writeln!(body, "precision {:.6}{}", m.precision, if m.precision_undefined { " undefined" } else { "" });
    let _ = writeln!(body, "recall {:.6}{}", m.recall, if m.recall_undefined { " undefined" } else { "" });
    let _ = writeln!(body, "f1 {:.6}", m.f1);
    let [[tn, fp], [fn_, tp]] = m.confusion;
    let _ = writeln!(body, "confusion truth\\pred Low High");
    let _ = writeln!(body, "Low {tn} {fp}");
    let _ = writeln!(body, "High {fn_} {tp}");
    let (st, sv): (Vec<Workload>, Vec<f64>) = s.into_iter().unzip();
    let curve = if st.len() == y.len() && n_high > 0 && n_high < y.len() {
        let c = roc(&st, &sv)?;
        let (thr, f1) = best_f1_threshold(&st, &sv)?;
        let _ = writeln!(body, "auc {:.6}", c.auc);
        let _ = writeln!(body, "best_f1_threshold {thr} best_f1 {f1:.6}");
        Some(c)
    } else {
        let _ = writeln!(body, "auc unavailable");
        None
    };

    let prov = Provenance::new(
        "evaluate",
        seed,
        &[("threshold", threshold.map_or("file".into(), |t| t.to_string())), ("scores", scores.is_some().to_string())],
    );
    if let Some(path) = roc_out {
        let Some(c) = &curve else {
            bail!("no ROC curve: scores are missing or the truth holds one class");
        };
        let mut csv = String::from("fpr,tpr\n");
        for (x, yv) in &c.points {
            let _ = writeln!(csv, "{x},{yv}");
        }
        write_file(path, &prov.header(), csv.as_bytes())?;
    }
    emit(common, "evaluation.report", &prov.header(), body.as_bytes())
}

pub fn compare(
    common: &Common,
    journeys: &Path,
    policies: &str,
    tables: Option<&Path>,
    pre: Option<f64>,
    post: Option<f64>,
) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let seed = seed(common, &cfg)?;
    let w = label_window(&cfg, pre, post)?;
    let choices = policies.split(',').map(|p| parse_policy(p.trim(), None)).collect::<Result<Vec<_>>>()?;
    if choices.len() < 2 {
        return Err(usage("--policies needs at least two entries"));
    }
    let all = load_journeys(journeys)?;
    let sets = match tables {
        Some(dir) => {
            let set = read_table_dir(dir).with_context(|| format!("reading tables from {}", dir.display()))?;
            vec![set; all.len()]
        }
        None => all
            .iter()
            .map(|j| {
                let ex: HashSet<String> = [j.journey_id.clone()].into();
                train_likelihoods(&all, w, &KdeConfig::default(), &ex)
                    .with_context(|| format!("training tables without journey {}", j.journey_id))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let reports = compare_policies(&all, &sets, &choices, w)?;
    let prov = Provenance::new(
        "compare",
        seed,
        &[
            ("policies", policies.to_owned()),
            ("tables", if tables.is_some() { "shared" } else { "leave-one-out" }.to_owned()),
            ("pre", w.pre_s.to_string()),
            ("post", w.post_s.to_string()),
        ],
    );
    emit(common, "compare.report", &prov.header(), render_comparison(&reports).as_bytes())
}
