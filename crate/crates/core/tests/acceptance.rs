//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use workload_core::eval::{compare_policies, JourneyScore, PolicyChoice};
use workload_core::filter::{builtin_matrix, init_filter, run_filter, ContextPolicy, TransitionMatrix};
use workload_core::labeling::{
    awp_from_lwr, expand_labels, label_prompts, lwr, AwpClass, LabelWindow, LabeledInstant, Workload,
};
use workload_core::likelihood::{fit_kde, train_likelihoods, DensityTable, KdeConfig, LikelihoodSet, LikelihoodTable};
use workload_core::profiler::rocket::{build_kernel_bank, kernel_weights, KernelBank, KERNEL_LEN};
use workload_core::profiler::{run_profiling, ProfileConfig, Window};
use workload_core::simulator::{
    random_road_script, simulate_journey, simulate_population, sub_seed, DriverStyle, EmissionModel, SimConfig,
    StateTrace, DEFAULT_SEPARATION, DEFAULT_STYLE_OFFSET,
};
use workload_core::stream::{format_journey, ChannelSample, ChannelSchema, ContextTag, Journey, PromptEvent, RoadType};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- oracles

/// Independent table lookup: binary search plus linear interpolation,
/// clamped to the edge values.
fn table_lookup(grid: &[f64], density: &[f64], x: f64) -> f64 {
    let n = grid.len();
    if x <= grid[0] {
        return density[0];
    }
    if x >= grid[n - 1] {
        return density[n - 1];
    }
    let hi = grid.partition_point(|&g| g <= x).min(n - 1);
    let lo = hi - 1;
    let w = (x - grid[lo]) / (grid[hi] - grid[lo]);
    density[lo] + w * (density[hi] - density[lo])
}

/// Textbook HMM forward pass with per-step normalization.
fn forward_oracle(j: &Journey, tables: &LikelihoodSet, policy: &ContextPolicy) -> Vec<[f64; 2]> {
    let kind = policy.kind();
    let matrix_at = |t: f64| -> &TransitionMatrix {
        let tag = kind.and_then(|k| {
            j.contexts.iter().find(|c| c.tag.kind() == k && c.t_start <= t && t < c.t_end).map(|c| c.tag)
        });
        policy.matrix_for(tag)
    };
    let pi0 = policy.default_matrix().stationary_low();
    let mut alpha = [pi0, 1.0 - pi0];
    let mut out = Vec::new();
    let mut i = 0;
    while i < j.samples.len() {
        let t = j.samples[i].t;
        let m = matrix_at(t);
        let a = [[m.rho_ll(), 1.0 - m.rho_ll()], [1.0 - m.rho_hh(), m.rho_hh()]];
        let mut next = [0.0; 2];
        for (to, slot) in next.iter_mut().enumerate() {
            *slot = (0..2).map(|from| alpha[from] * a[from][to]).sum();
        }
        while i < j.samples.len() && j.samples[i].t == t {
            let s = j.samples[i];
            for (st, state) in [Workload::Low, Workload::High].into_iter().enumerate() {
                let tab = tables.get(j.channel_name(s.channel), state).unwrap();
                next[st] *= table_lookup(tab.grid(), tab.density(), s.value);
            }
            i += 1;
        }
        let z = next[0] + next[1];
        alpha = [next[0] / z, next[1] / z];
        out.push(alpha);
    }
    out
}

fn random_matrix(rng: &mut impl Rng, name: &str) -> TransitionMatrix {
    TransitionMatrix::new(name, rng.random_range(0.02..0.995), rng.random_range(0.02..0.995)).unwrap()
}

fn random_tables(rng: &mut impl Rng, schema: &[ChannelSchema]) -> LikelihoodSet {
    let mut tables = Vec::new();
    for c in schema {
        let span = if c.max.is_finite() { c.max - c.min } else { 100.0 };
        let center = if c.min.is_finite() { c.min + span / 2.0 } else { 0.0 };
        for state in [Workload::Low, Workload::High] {
            let n =
                Normal::new(center + rng.random_range(-0.2..0.2) * span, span * rng.random_range(0.05..0.3)).unwrap();
            let v: Vec<f64> = (0..200).map(|_| n.sample(rng)).collect();
            let table = fit_kde(&v, &KdeConfig::default()).unwrap();
            tables.push(LikelihoodTable { channel: c.channel_id.clone(), state, table });
        }
    }
    LikelihoodSet::new(tables)
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut max_instants = 0;
    for k in 0..50 {
        let em = EmissionModel::can_default(rng.random_range(0.0..3.0));
        let duration = rng.random_range(20.0..60.0);
        let mut cfg = SimConfig::new(duration, 1000 + k);
        let road_policy = k % 2 == 0;
        if road_policy {
            cfg.context_script = random_road_script(duration, k);
        }
        let style = DriverStyle::for_class(AwpClass::ALL[k as usize % 3]);
        let (j, _) = simulate_journey(&format!("a{k}"), &cfg, &style, &em).unwrap();
        let tables = random_tables(&mut rng, &j.schema);
        let policy = if road_policy {
            ContextPolicy::new(
                "random-road",
                random_matrix(&mut rng, "d"),
                RoadType::ALL.iter().map(|r| (ContextTag::Road(*r), random_matrix(&mut rng, r.as_str()))).collect(),
            )
        } else {
            ContextPolicy::fixed(random_matrix(&mut rng, "fixed"))
        };
        let got = run_filter(&j, init_filter(&policy, &tables, None).unwrap()).unwrap();
        let want = forward_oracle(&j, &tables, &policy);
        if got.len() != want.len() {
            return outcome(false, format!("journey {k}: {} posteriors vs {} oracle steps", got.len(), want.len()));
        }
        max_instants = max_instants.max(got.len());
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g.pi_low - w[0]).abs()).max((g.pi_high - w[1]).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 5.0 && max_instants <= 10_000,
        format!("max abs diff {worst:.2e}, max instants {max_instants}, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let empty = LikelihoodSet::default();
    let mut worst_norm: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    let mut positive = true;
    let mut steps = 0;
    while steps < 100_000 {
        let policy = ContextPolicy::fixed(random_matrix(&mut rng, "r"));
        let prior = rng.random_range(0.0..=1.0);
        let mut a = init_filter(&policy, &empty, Some(prior)).unwrap();
        let mut b = init_filter(&policy, &empty, Some(prior)).unwrap();
        for k in 0..100 {
            let l_low = 10f64.powf(rng.random_range(-6.0..6.0));
            let l_high = 10f64.powf(rng.random_range(-6.0..6.0));
            let c = 10f64.powf(rng.random_range(-100.0..100.0));
            let t = k as f64 * 0.05;
            let pa = a.update(t, l_low, l_high, None).unwrap();
            let pb = b.update(t, l_low * c, l_high * c, None).unwrap();
            worst_norm = worst_norm.max((pa.pi_low + pa.pi_high - 1.0).abs());
            worst_scale = worst_scale.max((pa.pi_low - pb.pi_low).abs()).max((pa.pi_high - pb.pi_high).abs());
            positive &= pa.pi_low > 0.0 && pa.pi_high > 0.0;
            steps += 1;
        }
    }
    outcome(
        worst_norm <= 1e-12 && worst_scale <= 1e-12 && positive,
        format!(
            "{steps} steps, normalization error {worst_norm:.1e}, scale error {worst_scale:.1e}, positive {positive}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let m = builtin_matrix("Standard").unwrap();
    let builtin_ok = (m.rho_ll(), m.rho_hh()) == (0.8, 0.92);
    // left eigenvector of A for eigenvalue 1, from the 2x2 null space of A^T - I
    let a = nalgebra::Matrix2::new(m.rho_ll(), 1.0 - m.rho_ll(), 1.0 - m.rho_hh(), m.rho_hh());
    let eig = (a.transpose() - nalgebra::Matrix2::identity()).svd(false, true);
    let v_t = eig.v_t.unwrap();
    let null = v_t.row(1);
    let target = [null[0] / (null[0] + null[1]), null[1] / (null[0] + null[1])];
    let exact = ((target[0] - 2.0 / 7.0).abs() < 1e-12, (target[1] - 5.0 / 7.0).abs() < 1e-12);

    let policy = ContextPolicy::fixed(m);
    let empty = LikelihoodSet::default();
    let mut worst_steps = 0;
    for prior in [0.0, 0.5, 1.0, 0.999] {
        let mut s = init_filter(&policy, &empty, Some(prior)).unwrap();
        let mut reached = None;
        for k in 1..=200 {
            let p = s.update(k as f64, 1.0, 1.0, None).unwrap();
            if (p.pi_low - target[0]).abs() <= 1e-6 && (p.pi_high - target[1]).abs() <= 1e-6 {
                reached = Some(k);
                break;
            }
        }
        match reached {
            Some(k) => worst_steps = worst_steps.max(k),
            None => return outcome(false, format!("prior {prior} not within 1e-6 after 200 steps")),
        }
    }
    outcome(
        builtin_ok && exact.0 && exact.1,
        format!("eigenvector ({:.9}, {:.9}), converged within {worst_steps} steps", target[0], target[1]),
    )
}

// ---------------------------------------------------------------- 4

/// MAP accuracy against the latent state and the majority-class share, for
/// an H-style driver filtered with the Standard matrix.
fn state_recovery(separation: f64, seed: u64) -> (f64, f64) {
    let em = EmissionModel::can_default(separation);
    let style = DriverStyle::for_class(AwpClass::H);
    let sim = |id: &str, k: u64| simulate_journey(id, &SimConfig::new(600.0, sub_seed(seed, k)), &style, &em).unwrap();
    let train: Vec<Journey> = (0..4).map(|k| sim(&format!("tr{k}"), k).0).collect();
    let tables = train_likelihoods(&train, LabelWindow::default(), &KdeConfig::default(), &HashSet::new()).unwrap();
    let policy = ContextPolicy::fixed(builtin_matrix("Standard").unwrap());
    let (mut correct, mut high, mut total) = (0usize, 0usize, 0usize);
    for k in 10..14 {
        let (j, truth): (Journey, StateTrace) = sim(&format!("te{k}"), k);
        for p in run_filter(&j, init_filter(&policy, &tables, None).unwrap()).unwrap() {
            let s = truth.state_at(p.t);
            correct += usize::from(p.map_state() == s);
            high += usize::from(s == Workload::High);
            total += 1;
        }
    }
    let acc = correct as f64 / total as f64;
    let prior = high.max(total - high) as f64 / total as f64;
    (acc, prior)
}

fn criterion_4() -> Outcome {
    let (acc3, _) = state_recovery(3.0, 41);
    let (acc0, prior0) = state_recovery(0.0, 42);
    outcome(
        acc3 >= 0.85 && (acc0 - prior0).abs() <= 0.03,
        format!("separation 3: accuracy {acc3:.4}; separation 0: accuracy {acc0:.4} vs max prior {prior0:.4}"),
    )
}

// ---------------------------------------------------------------- 5

// Weak enough that context carries information the emissions do not.
const FILTER_SEPARATION: f64 = 0.4;

fn road_gain(seed: u64) -> f64 {
    let em = EmissionModel::can_default(FILTER_SEPARATION);
    let style = DriverStyle::for_class(AwpClass::M);
    let sim = |k: u64| {
        let mut cfg = SimConfig::new(600.0, sub_seed(seed, k));
        cfg.context_script = random_road_script(600.0, sub_seed(seed, 500 + k));
        simulate_journey(&format!("r{k}"), &cfg, &style, &em).unwrap().0
    };
    let train: Vec<Journey> = (0..4).map(sim).collect();
    let test: Vec<Journey> = (10..14).map(sim).collect();
    let tables = train_likelihoods(&train, LabelWindow::default(), &KdeConfig::default(), &HashSet::new()).unwrap();
    let policies = [
        PolicyChoice::Fixed(ContextPolicy::fixed(builtin_matrix("Standard").unwrap())),
        PolicyChoice::Fixed(ContextPolicy::from_road_types()),
    ];
    let r = compare_policies(&test, &vec![tables; test.len()], &policies, LabelWindow::default()).unwrap();
    r[1].pooled_auc - r[0].pooled_auc
}

/// Mean per-driver F1 gain of the profile-matched policy over Standard on
/// the L-labelled test drivers, for the MAP decision and for the pooled
/// best-F1 threshold; None if no test driver is labelled L.
fn awp_gain(seed: u64) -> Option<(f64, f64)> {
    let em = EmissionModel::can_default(FILTER_SEPARATION);
    let train = simulate_population(2, &SimConfig::new(600.0, sub_seed(seed, 1)), &em, 0.0).unwrap();
    let test = simulate_population(3, &SimConfig::new(600.0, sub_seed(seed, 2)), &em, 0.0).unwrap();
    let train: Vec<Journey> = train.into_iter().map(|d| d.journey).collect();
    let test: Vec<Journey> = test.into_iter().map(|d| d.journey).collect();
    let tables = train_likelihoods(&train, LabelWindow::default(), &KdeConfig::default(), &HashSet::new()).unwrap();
    let policies =
        [PolicyChoice::Fixed(ContextPolicy::fixed(builtin_matrix("Standard").unwrap())), PolicyChoice::ByProfile];
    let r = compare_policies(&test, &vec![tables; test.len()], &policies, LabelWindow::default()).unwrap();
    let low: Vec<&str> =
        test.iter().filter(|j| j.awp_label == Some(AwpClass::L)).map(|j| j.journey_id.as_str()).collect();
    if low.is_empty() {
        return None;
    }
    let gain = |f: fn(&JourneyScore) -> f64| {
        low.iter().map(|id| f(r[1].journey(id).unwrap()) - f(r[0].journey(id).unwrap())).sum::<f64>() / low.len() as f64
    };
    Some((gain(|j| j.map_f1), gain(|j| j.f1)))
}

fn criterion_5() -> Outcome {
    let (mut road_ok, mut awp_ok) = (0, 0);
    let (mut road_min, mut awp_min) = (f64::INFINITY, f64::INFINITY);
    let mut pooled_threshold_gain = 0.0;
    for seed in 0..20 {
        let g = road_gain(5000 + seed);
        road_min = road_min.min(g);
        road_ok += usize::from(g >= 0.03);
        let (map, pooled) = awp_gain(6000 + seed).unwrap_or((f64::NEG_INFINITY, f64::NEG_INFINITY));
        awp_min = awp_min.min(map);
        awp_ok += usize::from(map >= 0.05);
        pooled_threshold_gain += pooled / 20.0;
    }
    outcome(
        road_ok >= 16 && awp_ok >= 16,
        format!(
            "road AUC gain >= 0.03 in {road_ok}/20 seeds (min {road_min:.4}); \
             L-driver MAP F1 gain >= 0.05 in {awp_ok}/20 seeds (min {awp_min:.4}); \
             mean L-driver gain at the pooled best-F1 threshold {pooled_threshold_gain:.4}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn sup_error_vs_normal(t: &DensityTable) -> f64 {
    (0..=4000)
        .map(|i| -2.0 + 4.0 * i as f64 / 4000.0)
        .map(|x| (t.value_at(x) - (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs())
        .fold(0.0, f64::max)
}

fn normal_sup_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..10_000).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
    sup_error_vs_normal(&fit_kde(&draws, &KdeConfig::default()).unwrap())
}

fn criterion_6() -> Outcome {
    let mut worst_integral: f64 = 0.0;
    let mut n_tables = 0;
    for sep in [0.0, 1.0, 3.0] {
        let em = EmissionModel::can_default(sep);
        let style = DriverStyle::for_class(AwpClass::M);
        let train: Vec<Journey> = (0..2)
            .map(|k| simulate_journey(&format!("k{k}"), &SimConfig::new(300.0, 60 + k), &style, &em).unwrap().0)
            .collect();
        let tables = train_likelihoods(&train, LabelWindow::default(), &KdeConfig::default(), &HashSet::new()).unwrap();
        for t in tables.tables() {
            worst_integral = worst_integral.max((t.table.integral() - 1.0).abs());
            n_tables += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let draws: Vec<f64> = (0..10_000).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
    let t = fit_kde(&draws, &KdeConfig::default()).unwrap();
    worst_integral = worst_integral.max((t.integral() - 1.0).abs());
    let sup = sup_error_vs_normal(&t);
    // Sampling noise alone puts the sup-norm near 0.02 at this sample size,
    // so report how often other seeds stay within it.
    let other_ok = (0..200u64).filter(|&s| normal_sup_error(7000 + s) <= 0.02).count();
    outcome(
        worst_integral <= 1e-3 && sup <= 0.02,
        format!(
            "{} tables, worst integral error {worst_integral:.2e}, normal sup-norm error {sup:.4}; \
             within 0.02 on {other_ok}/200 other seeds",
            n_tables + 1
        ),
    )
}

// ---------------------------------------------------------------- 7

/// Direct convolution of every channel separately, summed, followed by PPV.
fn ppv_oracle(w: &Window, bank: &KernelBank) -> Vec<f64> {
    let len = w.len() as isize;
    let mut out = Vec::new();
    for c in &bank.combinations {
        let weights = kernel_weights(c.kernel);
        let d = c.dilation as isize;
        let half = (KERNEL_LEN as isize - 1) * d / 2;
        let positions: Vec<isize> = if c.padded { (0..len).collect() } else { (half..len - half).collect() };
        let conv: Vec<f64> = positions
            .iter()
            .map(|&t| {
                let mut total = 0.0;
                for &ch in &c.channels {
                    let row = w.row(ch);
                    for (k, wk) in weights.iter().enumerate() {
                        let idx = (t + (k as isize - 4) * d).clamp(0, len - 1);
                        total += wk * row[idx as usize];
                    }
                }
                total
            })
            .collect();
        let conv = if conv.is_empty() { vec![0.0] } else { conv };
        for &b in &c.biases {
            out.push(conv.iter().filter(|&&v| v > b).count() as f64 / conv.len() as f64);
        }
    }
    out
}

fn random_window(rng: &mut impl Rng, q: usize, l: usize, dyadic: bool) -> Window {
    let rows =
        (0..q)
            .map(|_| {
                (0..l)
                    .map(|_| {
                        if dyadic {
                            rng.random_range(-256i32..=256) as f64 / 64.0
                        } else {
                            rng.random_range(-3.0..3.0)
                        }
                    })
                    .collect()
            })
            .collect();
    Window::new("w", 0.0, rows).unwrap()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut worst, mut in_range, mut shift_exact) = (0.0f64, true, true);
    for k in 0..100 {
        let q = rng.random_range(1..=6);
        let l = rng.random_range(32..=80);
        let mut bank = build_kernel_bank(k, q, l, 84 * rng.random_range(1..=6)).unwrap();
        let dyadic = k % 2 == 0;
        let fit: Vec<Window> = (0..3).map(|_| random_window(&mut rng, q, l, dyadic)).collect();
        bank.fit_biases(&fit.iter().collect::<Vec<_>>()).unwrap();
        let w = random_window(&mut rng, q, l, dyadic);
        let got = bank.transform(&w).unwrap();
        let want = ppv_oracle(&w, &bank);
        if got.len() != want.len() {
            return outcome(false, format!("window {k}: {} features vs {} from the oracle", got.len(), want.len()));
        }
        for (g, o) in got.iter().zip(&want) {
            worst = worst.max((g - o).abs());
            in_range &= (0.0..=1.0).contains(g);
        }
        if dyadic {
            let c = rng.random_range(-50i32..=50) as f64;
            let shifted =
                Window::new("w", 0.0, w.rows().iter().map(|r| r.iter().map(|v| v + c).collect()).collect()).unwrap();
            shift_exact &= bank.transform(&shifted).unwrap() == got;
        }
    }
    outcome(
        worst <= 1e-9 && in_range && shift_exact,
        format!("max oracle diff {worst:.1e}, all in [0, 1] {in_range}, shift invariant {shift_exact}"),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let em = EmissionModel::can_default(DEFAULT_SEPARATION);
    let (mut sma_ok_all, mut good) = (true, 0);
    let mut details = Vec::new();
    for seed in 0..20 {
        let pop = simulate_population(8, &SimConfig::new(600.0, 8000 + seed), &em, DEFAULT_STYLE_OFFSET).unwrap();
        let journeys: Vec<Journey> = pop.into_iter().map(|d| d.journey).collect();
        let cfg = ProfileConfig { window_len: 400, seed, ..Default::default() };
        let r = run_profiling(&journeys, &cfg).unwrap();
        let (wa, ja) = (r.window_accuracy(), r.journey_accuracy());
        sma_ok_all &= ja >= wa;
        good += usize::from(ja >= 0.85);
        details.push(format!("{ja:.2}/{wa:.2}"));
    }
    outcome(
        sma_ok_all && good >= 16,
        format!(
            "SMA >= per-window on every seed {sma_ok_all}; SMA accuracy >= 0.85 in {good}/20 seeds \
             [journey/window per seed: {}]",
            details.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 9

fn brute_force_labels(j: &Journey, labels: &[LabeledInstant], w: LabelWindow) -> Vec<Option<Workload>> {
    j.samples
        .iter()
        .map(|s| {
            let mut owner: Option<&LabeledInstant> = None;
            for (i, l) in labels.iter().enumerate() {
                let lo = if i == 0 { f64::NEG_INFINITY } else { (labels[i - 1].t + l.t) / 2.0 };
                let hi = labels.get(i + 1).map_or(f64::INFINITY, |n| (l.t + n.t) / 2.0);
                if s.t >= lo && s.t < hi {
                    owner = Some(l);
                }
            }
            owner.filter(|l| s.t >= l.t - w.pre_s && s.t <= l.t + w.post_s).map(|l| l.label)
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let low = |n| (0..n).map(|i| LabeledInstant { t: i as f64, label: Workload::Low });
    let high = |n: usize| (0..n).map(|i| LabeledInstant { t: 100.0 + i as f64, label: Workload::High });
    let seven_three: Vec<LabeledInstant> = low(7).chain(high(3)).collect();
    let r = lwr(&seven_three).unwrap();
    let examples = r == 0.7
        && awp_from_lwr(r) == Ok(AwpClass::M)
        && awp_from_lwr(0.55) == Ok(AwpClass::H)
        && awp_from_lwr(0.85) == Ok(AwpClass::M)
        && awp_from_lwr(0.55 + 1e-12) == Ok(AwpClass::M)
        && awp_from_lwr(0.85 + 1e-12) == Ok(AwpClass::L)
        && awp_from_lwr(0.40) == Ok(AwpClass::H)
        && awp_from_lwr(0.90) == Ok(AwpClass::L);

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut mismatches = 0;
    let mut checked = 0;
    for _ in 0..300 {
        let mut j = Journey::new("x", vec![ChannelSchema::new("c", "u", -1.0, 1.0, false)]);
        let mut t = rng.random_range(0.0..3.0);
        while t < 60.0 {
            let press = rng.random_bool(0.6).then(|| t + rng.random_range(0.1..1.0));
            j.prompts.push(PromptEvent { t_prompt: t, t_press: press });
            // integer tenths so midpoints land on sample times sometimes
            t += (rng.random_range(10..=80) as f64) / 10.0;
        }
        let n = rng.random_range(1..400);
        let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0..=700) as f64 / 10.0).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        j.samples = times.iter().map(|&t| ChannelSample { channel: 0, t, value: 0.0 }).collect();
        let w = LabelWindow::new(rng.random_range(0..40) as f64 / 10.0, rng.random_range(0..40) as f64 / 10.0 + 0.1)
            .unwrap();
        let labels = label_prompts(&j).labels;
        let fast: Vec<Option<Workload>> = expand_labels(&j, &labels, w).iter().map(|s| s.label).collect();
        let slow = brute_force_labels(&j, &labels, w);
        mismatches += fast.iter().zip(&slow).filter(|(a, b)| a != b).count();
        checked += fast.len();
    }
    outcome(
        examples && mismatches == 0,
        format!("ratio examples exact {examples}; {mismatches} mismatches over {checked} expanded samples"),
    )
}

// ---------------------------------------------------------------- 10

fn pipeline_bytes(seed: u64) -> Vec<u8> {
    let em = EmissionModel::can_default(DEFAULT_SEPARATION);
    let mut cfg = SimConfig::new(120.0, seed);
    cfg.context_script = random_road_script(120.0, seed);
    let (j, _) = simulate_journey("det", &cfg, &DriverStyle::for_class(AwpClass::M), &em).unwrap();
    let mut out = Vec::new();
    format_journey(&j, &mut out).unwrap();
    let tables =
        train_likelihoods(std::slice::from_ref(&j), LabelWindow::default(), &KdeConfig::default(), &HashSet::new())
            .unwrap();
    for t in tables.tables() {
        out.extend(t.table.density().iter().flat_map(|d| d.to_le_bytes()));
    }
    let policy = ContextPolicy::from_road_types();
    for p in run_filter(&j, init_filter(&policy, &tables, None).unwrap()).unwrap() {
        out.extend(p.pi_high.to_le_bytes());
    }
    let pop = simulate_population(2, &SimConfig::new(200.0, seed), &em, DEFAULT_STYLE_OFFSET).unwrap();
    let journeys: Vec<Journey> = pop.into_iter().map(|d| d.journey).collect();
    let cfg = ProfileConfig { window_len: 100, n_features: 420, seed, ..Default::default() };
    out.extend(run_profiling(&journeys, &cfg).unwrap().render().into_bytes());
    out
}

fn criterion_10() -> Outcome {
    let a = pipeline_bytes(10);
    let b = pipeline_bytes(10);
    let c = pipeline_bytes(11);
    outcome(a == b && a != c, format!("{} bytes, rerun identical {}, other seed differs {}", a.len(), a == b, a != c))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("forward-oracle equivalence", criterion_1),
        ("recursion invariants", criterion_2),
        ("stationary convergence", criterion_3),
        ("state recovery", criterion_4),
        ("adaptation benefit", criterion_5),
        ("KDE correctness", criterion_6),
        ("transform oracle", criterion_7),
        ("profiling sequence filter", criterion_8),
        ("labeling exactness", criterion_9),
        ("determinism", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {}: {name} ({}) [{:.1} s]", i + 1, o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
