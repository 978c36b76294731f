//! End-to-end acceptance checks on the synthetic benchmark.
//!
//! Runs with the oracle teacher only and prints one PASS/FAIL line per
//! criterion. Exits non-zero when any criterion fails.
//!
//! Seeds 0-9 are used throughout; defaults were tuned on seeds 100-109.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use askdagger_core::novice::Example;
use askdagger_core::pier::{build_table, priority, priority_exponent, PriorityTable};
use askdagger_core::rng::{stream, Stream};
use askdagger_core::sag::{fit_logistic, linear_fit, set_threshold, sigmoid, NEVER};
use askdagger_core::simbench::{parse_phases, run_experiment, SegmentStats};
use askdagger_core::{
    DemoDataset, DemoKind, DemoTuple, ExperimentConfig, FeedbackRecord, GatingMode, GoalId,
    NoviceConfig, NoviceModel, Observation, PierConfig, Reward,
};
use rand::Rng;
use rayon::prelude::*;

const SEEDS: u64 = 10;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Per-run numbers kept from a full experiment.
#[derive(Debug, Clone)]
struct RunStats {
    first_third: SegmentStats,
    final_two_thirds: SegmentStats,
    final_third: SegmentStats,
    /// Annotation count at the first evaluation with seen success >= 0.7.
    annotations_at_07: Option<usize>,
    final_unseen: Option<f64>,
    /// Novice success over the first 200 decisions of phase 2.
    after_second_shift: Option<f64>,
}

fn runs(cfg: &ExperimentConfig) -> Vec<RunStats> {
    (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let r = run_experiment(cfg, seed).expect("run");
            let s = &r.summary;
            let after: Vec<_> = r.steps.iter().filter(|row| row.phase == 2).take(200).cloned().collect();
            RunStats {
                first_third: s.first_third,
                final_two_thirds: s.final_two_thirds,
                final_third: s.final_third,
                annotations_at_07: s.evals.iter().find(|e| e.seen_success >= 0.7).map(|e| e.annotations),
                final_unseen: s.evals.last().and_then(|e| e.unseen_success),
                after_second_shift: (!after.is_empty()).then(|| SegmentStats::of(&after).novice_success.unwrap()),
            }
        })
        .collect()
}

fn base(mode: GatingMode, sigma: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.gating.mode = mode;
    cfg.gating.sigma_des = sigma;
    cfg.gating.p_rand = 0.1;
    cfg.gating.n_min = 15;
    cfg.gating.n_rep = 25;
    cfg.run.episodes = 3000;
    cfg.output.dataset = false;
    cfg.output.model = false;
    cfg
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let mut choose = 1.0f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += choose;
        }
        choose = choose * (n - k) as f64 / (k + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

fn tracking(id: u32, name: &'static str, mode: GatingMode, cache: &mut Vec<(f64, Vec<RunStats>)>) -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for sigma in [0.3, 0.6, 0.9] {
        let stats = runs(&base(mode, sigma));
        let achieved: Vec<f64> = stats
            .iter()
            .map(|s| match mode {
                GatingMode::Specificity => s.final_two_thirds.specificity.unwrap(),
                _ => s.final_two_thirds.sensitivity.unwrap(),
            })
            .collect();
        let m = mean(&achieved);
        let in_band = achieved.iter().filter(|a| (*a - sigma).abs() <= 0.07).count();
        pass &= (m - sigma).abs() <= 0.07;
        detail.push(format!("σ={sigma}: mean {m:.3}, {in_band}/{SEEDS} runs in band"));
        if mode == GatingMode::Sensitivity {
            cache.push((sigma, stats));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 900.0;
    detail.push(format!("{secs:.0}s"));
    Verdict { id, name, pass, detail: detail.join("; ") }
}

fn success_floor() -> Verdict {
    let stats = runs(&base(GatingMode::Success, 0.8));
    let system: Vec<f64> = stats.iter().map(|s| s.final_two_thirds.system_success.unwrap()).collect();
    let floor_ok = system.iter().all(|&x| x >= 0.75);
    let qualifying: Vec<&RunStats> = stats
        .iter()
        .filter(|s| s.final_third.novice_success.unwrap() > 0.8)
        .collect();
    let pressure_ok = qualifying
        .iter()
        .filter(|s| s.final_third.query_rate.unwrap() <= s.first_third.query_rate.unwrap())
        .count();
    Verdict {
        id: 3,
        name: "success-mode floor",
        pass: floor_ok && pressure_ok == qualifying.len(),
        detail: format!(
            "system success [{}] (min {:.3}); query rate fell in {pressure_ok}/{} runs whose novice success exceeded 0.8",
            fmt_list(&system),
            system.iter().cloned().fold(f64::INFINITY, f64::min),
            qualifying.len()
        ),
    }
}

fn p_rand_floor() -> Verdict {
    let sens = |p: f64| -> Vec<f64> {
        let mut cfg = base(GatingMode::Sensitivity, 0.1);
        cfg.gating.p_rand = p;
        runs(&cfg).iter().map(|s| s.final_two_thirds.sensitivity.unwrap()).collect()
    };
    let high = sens(0.2);
    let low = sens(0.05);
    let (mh, ml) = (mean(&high), mean(&low));
    Verdict {
        id: 4,
        name: "p_rand floor",
        pass: mh >= 0.15 && (ml - 0.1).abs() <= 0.07,
        detail: format!(
            "p_rand=0.2: mean {mh:.3} (min {:.3}); p_rand=0.05: mean {ml:.3} ({}/{SEEDS} runs within ±0.07)",
            high.iter().cloned().fold(f64::INFINITY, f64::min),
            low.iter().filter(|x| (*x - 0.1).abs() <= 0.07).count()
        ),
    }
}

fn ablation_direction(sag: &[RunStats]) -> Verdict {
    let ablate = |f: fn(&mut ExperimentConfig)| {
        let mut cfg = base(GatingMode::Sensitivity, 0.9);
        f(&mut cfg);
        runs(&cfg)
    };
    let no_imp = ablate(|c| c.ablations.no_sag_imputation = true);
    let no_norm = ablate(|c| c.ablations.no_sag_normalization = true);
    let tail = |v: &[RunStats]| mean(&v.iter().map(|s| s.final_two_thirds.sensitivity.unwrap()).collect::<Vec<_>>());
    let head = |v: &[RunStats]| mean(&v.iter().map(|s| s.first_third.sensitivity.unwrap()).collect::<Vec<_>>());
    let (sag_tail, imp_tail) = (tail(sag), tail(&no_imp));
    let (sag_head, norm_head) = (head(sag), head(&no_norm));
    Verdict {
        id: 5,
        name: "ablation directionality",
        pass: sag_tail - imp_tail >= 0.05 && norm_head < sag_head,
        detail: format!(
            "final 2/3: SAG {sag_tail:.3} vs no-imputation {imp_tail:.3}; first 1/3: SAG {sag_head:.3} vs no-normalization {norm_head:.3}"
        ),
    }
}

/// Metric at `gamma` by direct counting, queries being `u >= gamma`.
fn direct_metric(u: &[f64], f: &[bool], gamma: f64, mode: GatingMode) -> f64 {
    let n = u.len() as f64;
    let failures = f.iter().filter(|&&x| x).count() as f64;
    let successes = n - failures;
    let caught = u.iter().zip(f).filter(|(&u, &f)| f && u >= gamma).count() as f64;
    let passed = u.iter().zip(f).filter(|(&u, &f)| !f && u < gamma).count() as f64;
    match mode {
        GatingMode::Sensitivity => caught / failures,
        GatingMode::Specificity => passed / successes,
        GatingMode::Success => 1.0 - (failures - caught) / n,
    }
}

fn threshold_oracle() -> Verdict {
    let mut rng = stream(6, Stream::Eval);
    let modes = [GatingMode::Sensitivity, GatingMode::Specificity, GatingMode::Success];
    let mut violations = Vec::new();
    let (mut degenerate, mut unreachable) = (0, 0);
    for case in 0..500 {
        let mode = modes[case % 3];
        let n = rng.random_range(1..=64);
        // Coarse grid so ties occur.
        let u: Vec<f64> = (0..n).map(|_| (rng.random_range(0..40) as f64) / 40.0).collect();
        let f: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        let p = rng.random_range(0.0..0.3);
        let sigma = rng.random_range(0.05..0.99);
        let gamma = set_threshold(&u, &f, sigma, p, mode);
        let target = match mode {
            GatingMode::Specificity => sigma / (1.0 - p),
            _ => (sigma - p) / (1.0 - p),
        };
        let n_fail = f.iter().filter(|&&x| x).count();
        let mut cands: Vec<f64> = u.clone();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let min_u = cands[0];
        cands.push(NEVER);
        let expected_degenerate = match mode {
            GatingMode::Sensitivity if n_fail == 0 => Some(NEVER),
            GatingMode::Specificity if n_fail == n => Some(min_u),
            GatingMode::Sensitivity | GatingMode::Success if target <= 0.0 => Some(NEVER),
            _ => None,
        };
        if let Some(g) = expected_degenerate {
            degenerate += 1;
            if gamma != g {
                violations.push(format!("case {case}: degenerate window returned {gamma}, expected {g}"));
            }
            continue;
        }
        let m: Vec<f64> = cands.iter().map(|&c| direct_metric(&u, &f, c, mode)).collect();
        let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if target > hi || target < lo {
            // Unreachable: the extreme candidate on the side of the target.
            unreachable += 1;
            let best = if (target > hi) == (m[0] >= m[m.len() - 1]) { min_u } else { NEVER };
            if gamma != best {
                violations.push(format!("case {case}: unreachable target {target:.3} gave {gamma}, expected {best}"));
            }
            continue;
        }
        let straddle = (0..cands.len() - 1).find(|&j| {
            let (a, b) = (m[j], m[j + 1]);
            a.min(b) <= target && target <= a.max(b)
        });
        let Some(j) = straddle else {
            violations.push(format!("case {case}: no straddle found for reachable target"));
            continue;
        };
        let upper = if cands[j + 1].is_infinite() { NEVER } else { cands[j + 1] };
        let inside = gamma >= cands[j] && (gamma <= upper || upper.is_infinite());
        let achieved = direct_metric(&u, &f, gamma, mode);
        let matches = achieved == m[j] || achieved == m[j + 1];
        if !inside || !matches {
            violations.push(format!(
                "case {case}: gamma {gamma} outside [{}, {upper}] or metric {achieved} off the straddle",
                cands[j]
            ));
        }
    }
    Verdict {
        id: 6,
        name: "threshold oracle equivalence",
        pass: violations.is_empty(),
        detail: if violations.is_empty() {
            format!(
                "500/500 windows agree ({} straddles, {unreachable} unreachable, {degenerate} degenerate)",
                500 - unreachable - degenerate
            )
        } else {
            format!("{} violations, first: {}", violations.len(), violations[0])
        },
    }
}

fn pier_fidelity() -> Verdict {
    let mut rng = stream(7, Stream::Eval);
    let mut worst_tv: f64 = 0.0;
    for _ in 0..5 {
        let p: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..2.0)).collect();
        let alpha = rng.random_range(0.0..2.0);
        let table = PriorityTable::from_priorities(p, alpha, 1.0).unwrap();
        let draws = 1_000_000;
        let mut counts = vec![0usize; 100];
        for i in table.sample(draws, &mut rng) {
            counts[i] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(table.probs())
            .map(|(&c, &p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        worst_tv = worst_tv.max(tv);
    }
    // Hand evaluation of the 3-tuple example: p = [2, 1, 1], alpha = beta = 1.
    // P = [0.5, 0.25, 0.25]; raw w = (3P)^-1 = [2/3, 4/3, 4/3]; max-normalised [0.5, 1, 1].
    let t = PriorityTable::from_priorities(vec![2.0, 1.0, 1.0], 1.0, 1.0).unwrap();
    let probs_ok = t.probs().iter().zip([0.5, 0.25, 0.25]).all(|(a, b)| (a - b).abs() < 1e-15);
    let weights_ok = t.weights().iter().zip([0.5, 1.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-15);
    Verdict {
        id: 7,
        name: "PIER distribution fidelity",
        pass: worst_tv < 0.005 && probs_ok && weights_ok,
        detail: format!("worst TV over 5 tables x 1e6 draws {worst_tv:.5}; worked example P/w {probs_ok}/{weights_ok}"),
    }
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn pier_ordering() -> Verdict {
    let mut rng = stream(8, Stream::Eval);
    let mut violations = 0usize;
    let cases = 100_000;
    for _ in 0..cases {
        let b = rng.random_range(1.5..100.0);
        let lambda = rng.random::<f64>();
        let big_k = rng.random_range(0..1000u64);
        let c_of = |rng: &mut _| {
            let u: f64 = Rng::random(rng);
            let k = if big_k == 0 { 0 } else { Rng::random_range(rng, 0..=big_k) };
            priority_exponent(u, k, big_k, lambda)
        };
        let c1 = c_of(&mut rng);
        let c2 = c_of(&mut rng);
        let (f1, n1, s1) = (
            priority(Reward::Failure, c1, b),
            priority(Reward::Neutral, c1, b),
            priority(Reward::Success, c1, b),
        );
        if !(0.0..=1.0).contains(&c1) {
            violations += 1;
        }
        // Class order, strict below c = 1 where all three meet at 1.
        if c1 < 1.0 && !(f1 > n1 && n1 > s1) {
            violations += 1;
        }
        if c1 == 1.0 && !(f1 == 1.0 && n1 == 1.0 && s1 == 1.0) {
            violations += 1;
        }
        // Within a class: failures fall and successes rise with c.
        if (c1 - c2).abs() > 1e-9 {
            let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
            if !(priority(Reward::Failure, lo, b) > priority(Reward::Failure, hi, b)) {
                violations += 1;
            }
            if !(priority(Reward::Success, lo, b) < priority(Reward::Success, hi, b)) {
                violations += 1;
            }
            if priority(Reward::Neutral, lo, b) != priority(Reward::Neutral, hi, b) {
                violations += 1;
            }
        }
    }
    Verdict {
        id: 8,
        name: "PIER ordering property",
        pass: violations == 0,
        detail: format!("{violations} violations in {cases} cases"),
    }
}

fn fier_annotation_reduction() -> Verdict {
    let make = |annotations_only: bool| {
        let mut cfg = base(GatingMode::Sensitivity, 0.9);
        cfg.run.episodes = 1500;
        cfg.eval.every = 10;
        cfg.eval.episodes = 200;
        if annotations_only {
            cfg.ablations.no_fier_validate = true;
            cfg.ablations.no_fier_relabel = true;
        }
        runs(&cfg)
    };
    let fier = make(false);
    let only = make(true);
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    let mut pairs = Vec::new();
    for (a, b) in fier.iter().zip(&only) {
        // A run that never reaches 0.7 counts as needing more annotations
        // than any run that does.
        match (a.annotations_at_07, b.annotations_at_07) {
            (Some(x), Some(y)) if x < y => wins += 1,
            (Some(x), Some(y)) if x > y => losses += 1,
            (Some(_), None) => wins += 1,
            (None, Some(_)) => losses += 1,
            _ => ties += 1,
        }
        pairs.push(format!(
            "{}/{}",
            a.annotations_at_07.map_or("-".into(), |v| v.to_string()),
            b.annotations_at_07.map_or("-".into(), |v| v.to_string())
        ));
    }
    let p = sign_test(wins, losses);
    Verdict {
        id: 9,
        name: "FIER annotation reduction",
        pass: p < 0.05 && wins > losses,
        detail: format!("annotations at 0.7 (FIER/annotation-only) [{}]; {wins} wins, {losses} losses, {ties} ties; sign test p={p:.4}", pairs.join(" ")),
    }
}

fn fier_generalization() -> Verdict {
    let make = |relabel: bool| {
        let mut cfg = base(GatingMode::Sensitivity, 0.9);
        cfg.teacher.relabel_probability = 1.0;
        cfg.ablations.no_fier_relabel = !relabel;
        cfg.eval.episodes = 400;
        runs(&cfg).iter().map(|s| s.final_unseen.unwrap()).collect::<Vec<_>>()
    };
    let with = make(true);
    let without = make(false);
    let gap = mean(&with) - mean(&without);
    Verdict {
        id: 10,
        name: "FIER generalization",
        pass: gap >= 0.1,
        detail: format!(
            "final unseen success relabel {:.3} vs no-relabel {:.3} (gap {gap:.3})",
            mean(&with),
            mean(&without)
        ),
    }
}

fn pier_domain_shift() -> Verdict {
    let make = |pier: bool| {
        let mut cfg = base(GatingMode::Sensitivity, 0.9);
        cfg.phases = parse_phases("seen:1000,unseen:1000:0.3:0,all:1000:0.3:1").unwrap();
        cfg.ablations.no_pier = !pier;
        runs(&cfg).iter().map(|s| s.after_second_shift.unwrap()).collect::<Vec<_>>()
    };
    let with = make(true);
    let without = make(false);
    let wins = with.iter().zip(&without).filter(|(a, b)| a > b).count();
    let losses = with.iter().zip(&without).filter(|(a, b)| a < b).count();
    let p = sign_test(wins, losses);
    Verdict {
        id: 11,
        name: "PIER under domain shift",
        pass: p < 0.05 && wins > losses,
        detail: format!(
            "novice success, 200 episodes after 2nd shift: PIER {:.3} vs uniform {:.3}; {wins} wins, {losses} losses; sign test p={p:.4}",
            mean(&with),
            mean(&without)
        ),
    }
}

fn numerical_oracles() -> Verdict {
    let mut rng = stream(9, Stream::Eval);
    // Gradient against central differences, with dropout scales.
    let mut config = NoviceConfig::new(3, 4);
    config.hidden = 8;
    let model = NoviceModel::new(config.clone(), 5);
    let obs: Vec<Observation> = (0..5)
        .map(|_| Observation::new(4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let batch: Vec<Example<'_>> = obs
        .iter()
        .enumerate()
        .map(|(i, o)| Example { observation: o, goal: GoalId(i % 4), action: i % 4, weight: 0.3 + 0.2 * i as f64 })
        .collect();
    let keep = 1.0 / (1.0 - config.dropout);
    let scales: Vec<Vec<f64>> = (0..batch.len())
        .map(|_| (0..config.hidden).map(|_| if rng.random::<f64>() < config.dropout { 0.0 } else { keep }).collect())
        .collect();
    let (_, grad) = model.loss_and_gradient(&batch, Some(&scales));
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let mut plus = model.params().to_vec();
        plus[i] += eps;
        let mut minus = model.params().to_vec();
        minus[i] -= eps;
        let mut mp = model.clone();
        mp.set_params(plus);
        let mut mm = model.clone();
        mm.set_params(minus);
        let fd = (mp.loss(&batch, Some(&scales)) - mm.loss(&batch, Some(&scales))) / (2.0 * eps);
        let denom = fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max((fd - grad[i]).abs() / denom);
    }

    // Least squares against the closed form on exact data and on noisy data.
    let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let y: Vec<f64> = x.iter().map(|&v| 0.7 - 0.013 * v + 0.05 * (v * 1.3).sin()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let (slope, intercept) = linear_fit(&x, &y);
    let ls_err = (slope - sxy / sxx).abs().max((intercept - (my - sxy / sxx * mx)).abs());

    // Planted logistic model sigmoid(10u - 5).
    let u: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
    let f: Vec<bool> = u.iter().map(|&v| rng.random::<f64>() < sigmoid(10.0 * v - 5.0)).collect();
    let fit = fit_logistic(&u, &f);

    let pass = worst < 1e-4 && ls_err < 1e-10 && (8.0..=12.0).contains(&fit.w) && (-6.0..=-4.0).contains(&fit.b);
    Verdict {
        id: 12,
        name: "numerical oracles",
        pass,
        detail: format!(
            "gradient max rel err {worst:.2e}; least squares err {ls_err:.1e}; logistic w={:.2} b={:.2}",
            fit.w, fit.b
        ),
    }
}

fn determinism() -> Verdict {
    let mut configs: Vec<(String, ExperimentConfig)> = Vec::new();
    let mut cfg = base(GatingMode::Sensitivity, 0.9);
    cfg.run.episodes = 400;
    cfg.eval.every = 50;
    cfg.output.dataset = true;
    cfg.output.model = true;
    configs.push(("none".into(), cfg.clone()));
    for name in askdagger_core::config::Ablations::NAMES {
        let mut c = cfg.clone();
        c.ablations.set(name).unwrap();
        configs.push((name.to_string(), c));
    }
    let mut c = cfg.clone();
    c.phases = parse_phases("seen:150,unseen:150:0.3:0,all:100:0.3:1").unwrap();
    configs.push(("domain shift".into(), c));
    let mut mismatched = Vec::new();
    for (name, c) in &configs {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            run_experiment(c, 3).unwrap().write(d.path()).unwrap();
        }
        for file in ["steps.csv", "evals.csv", "summary.json", "dataset.jsonl", "model.json"] {
            let a = fs::read(dirs[0].path().join(file)).unwrap();
            let b = fs::read(dirs[1].path().join(file)).unwrap();
            if a != b || a.is_empty() {
                mismatched.push(format!("{name}/{file}"));
            }
        }
    }
    Verdict {
        id: 13,
        name: "determinism",
        pass: mismatched.is_empty(),
        detail: format!(
            "{} configurations, 5 artifacts each; mismatches: {}",
            configs.len(),
            if mismatched.is_empty() { "none".to_string() } else { mismatched.join(", ") }
        ),
    }
}

/// Cheap sanity checks of the replay table on a real dataset, run before the
/// long experiments.
fn replay_table_smoke() -> bool {
    let obs = Observation::new(2, vec![0.0; 4]).unwrap();
    let tuples = vec![DemoTuple::new(obs, 0, GoalId(0), DemoKind::Annotation).unwrap()];
    let records = vec![FeedbackRecord { u: 0.5, r: Reward::Failure, k: 0, queried: true, episode: 0, step: 0 }];
    let mut ds = DemoDataset::new();
    ds.append_trajectory(tuples, records).unwrap();
    build_table(&ds, 0, &PierConfig::default()).map(|t| t.probs() == [1.0]).unwrap_or(false)
}

fn main() -> ExitCode {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |id: u32| filter.as_deref().is_none_or(|f| f.split(',').any(|x| x == id.to_string()));
    if !replay_table_smoke() {
        println!("FAIL replay table smoke check");
        return ExitCode::FAILURE;
    }
    let started = Instant::now();
    let mut verdicts = Vec::new();
    let mut sensitivity_runs = Vec::new();
    if wanted(1) || wanted(5) {
        let v = tracking(1, "sensitivity tracking", GatingMode::Sensitivity, &mut sensitivity_runs);
        if wanted(1) {
            verdicts.push(v);
        }
    }
    if wanted(2) {
        verdicts.push(tracking(2, "specificity tracking", GatingMode::Specificity, &mut Vec::new()));
    }
    if wanted(3) {
        verdicts.push(success_floor());
    }
    if wanted(4) {
        verdicts.push(p_rand_floor());
    }
    if wanted(5) {
        let sag = &sensitivity_runs.iter().find(|(s, _)| *s == 0.9).unwrap().1;
        verdicts.push(ablation_direction(sag));
    }
    let quick: [(u32, fn() -> Verdict); 8] = [
        (6, threshold_oracle),
        (7, pier_fidelity),
        (8, pier_ordering),
        (9, fier_annotation_reduction),
        (10, fier_generalization),
        (11, pier_domain_shift),
        (12, numerical_oracles),
        (13, determinism),
    ];
    for (id, f) in quick {
        if wanted(id) {
            verdicts.push(f());
        }
    }
    verdicts.sort_by_key(|v| v.id);
    let mut failed = 0;
    for v in &verdicts {
        println!("{} criterion {:>2} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        verdicts.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
