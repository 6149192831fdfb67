//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use bstar::controller::{self, ConfigGrid, ConfigPoint, GridRange};
use bstar::experiment::config::{CheckpointPolicy, CompareSection, ControllerSection};
use bstar::experiment::{self, RunConfig, RunOutput, Setup};
use bstar::metrics::{self, BalanceInputs, Candidate, CandidatePool};
use bstar::optim::Schedule;
use bstar::policy::{Example, PolicyParams};
use bstar::rewarding::{filter, RewardMode, RewardScore};
use bstar::task::{Op, OpToken, Query, Response, Task};
use bstar::trainer::{improve, LoopVariant, Trainer};
use bstar::{seed, Policy};
use rand::Rng;

use common::*;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Runs produced once and shared between criteria.
#[derive(Default)]
struct Shared {
    answer_only: Vec<RunOutput>,
    answer_only_times: Vec<Duration>,
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let mut shared = Shared::default();
    let criteria: Vec<(&str, Box<dyn FnMut(&mut Shared, &Path) -> Outcome>)> = vec![
        ("metric-oracle equivalence", Box::new(|_, _| metric_oracles())),
        ("published constants", Box::new(|_, _| constants())),
        ("variant semantics", Box::new(|_, _| variant_semantics())),
        ("controller correctness", Box::new(|_, _| controller_correctness())),
        ("gradient check", Box::new(|_, _| gradient_check())),
        ("end-to-end improvement", Box::new(|s, _| improvement(s))),
        ("diversity dynamics", Box::new(|s, _| diversity_dynamics(s))),
        ("b_star against fixed configurations", Box::new(|_, d| b_star_superiority(d))),
        ("determinism", Box::new(|_, d| determinism(d))),
    ];
    let mut failures = 0;
    for (i, (name, mut check)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(|| check(&mut shared, scratch.path())));
        let elapsed = started.elapsed().as_secs_f64();
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {} ({name}): {} [{elapsed:.1}s] {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}

fn metric_oracles() -> Outcome {
    let started = Instant::now();
    let mut rng = seed::rng(2024);
    let pools: Vec<CandidatePool> = (0..500)
        .map(|i| {
            let k = rng.gen_range(1..=64);
            random_pool(&mut rng, i, k)
        })
        .collect();
    let mut mismatches = Vec::new();
    let mut checks = 0usize;
    for pool in &pools {
        for s in 1..=pool.k() {
            checks += 2;
            if metrics::pass_at_k_s(pool, s).unwrap() != ref_pass_at_k_s(pool, s) {
                mismatches.push(format!("pass_at_k_s pool {} s {s}", pool.query_id));
            }
            if metrics::reward_at_k_s(pool, s).unwrap() != ref_reward_at_k_s(pool, s) {
                mismatches.push(format!("reward_at_k_s pool {} s {s}", pool.query_id));
            }
        }
        checks += 1;
        if (metrics::diversity::<f64>(pool) - ref_diversity(pool)).abs() > 1e-12 {
            mismatches.push(format!("diversity pool {}", pool.query_id));
        }
        for &tau in &[-1.0, -0.5, 0.0, 0.25, 0.5, 1.0, 1.5] {
            for n_star in [1, 6, 32] {
                checks += 1;
                let got = metrics::balance_score::<f64>(&BalanceInputs::from_pool(pool, tau, n_star).unwrap());
                if (got - ref_balance(pool, tau, n_star)).abs() > 1e-12 {
                    mismatches.push(format!("balance pool {} tau {tau}", pool.query_id));
                }
            }
        }
    }
    for &tau in &[-1.0, 0.0, 0.5, 1.0] {
        checks += 1;
        let got = metrics::average_balance_score::<f64>(&pools, tau, 6).unwrap();
        if (got - ref_average_balance(&pools, tau, 6)).abs() > 1e-12 {
            mismatches.push(format!("average balance tau {tau}"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        mismatches.is_empty() && secs < 10.0,
        format!("{checks} checks on 500 pools, {} mismatches, first {}, {secs:.2}s", mismatches.len(), mismatches.first().map_or("none", String::as_str)),
    )
}

fn constants() -> Outcome {
    let mut failed = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failed.push(what.to_string());
        }
    };
    check(metrics::n_star(67_500, 11_500).unwrap() == 6, "n_star(67500, 11500) = 6");
    check(metrics::n_star(13_500, 2_627).unwrap() == 6, "n_star(13500, 2627) = 6");
    let worked = metrics::balance_score::<f64>(&BalanceInputs::new(64, 16, 6).unwrap());
    check(worked == 0.25, "n' = 16, n = 64 gives 0.25");
    let grid = ConfigGrid::default();
    let temps: Vec<f64> = (0..8).map(|i| (5 + i) as f64 / 10.0).collect();
    let taus: Vec<f64> = (-10..=10).map(|i| i as f64 / 10.0).collect();
    check(grid.temperatures() == temps.as_slice(), "temperatures 0.5..=1.2 by 0.1");
    check(grid.thresholds() == taus.as_slice(), "thresholds -1.0..=1.0 by 0.1");
    let fine = ConfigGrid::fine();
    let fine_temps: Vec<f64> = (0..15).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
    let fine_taus: Vec<f64> = (-100..=100).map(|i| i as f64 / 100.0).collect();
    check(fine.temperatures() == fine_temps.as_slice(), "fine temperatures by 0.05");
    check(fine.thresholds() == fine_taus.as_slice(), "fine thresholds by 0.01");
    let defaults = RunConfig::default();
    check(defaults.sampling.threshold == 0.0, "default tau = 0");
    check(defaults.sampling.k == 32 && defaults.sampling.temperature == 1.0, "k = 32 at temperature 1.0");
    check(defaults.iterations == 9, "9 iterations");
    check(defaults.probe.size == 600, "probe size 600");
    check(ControllerSection::default().temperatures == controller::TEMPERATURES, "controller default grid");

    let at = |total: f64, correct: bool| Candidate {
        response: Response {
            steps: vec![OpToken(0)],
            final_answer: 0,
            logprob: 0.0,
        },
        reward: RewardScore {
            total,
            answer_part: u8::from(correct),
            prm_part: None,
        },
        correct,
    };
    let pool = [at(0.0, false), at(0.3, true), at(f64::from_bits(0.3f64.to_bits() + 1), true)];
    check(filter(&pool, 0.0).len() == 2, "r = tau = 0 is dropped");
    check(filter(&pool, 0.3).len() == 1, "r = tau = 0.3 is dropped, next float kept");
    let answer_only = [Candidate { reward: RewardScore::answer_only(false), ..at(0.0, false) }, Candidate {
        reward: RewardScore::answer_only(true),
        ..at(0.0, true)
    }];
    check(filter(&answer_only, 0.0).iter().all(|c| c.correct), "tau = 0 keeps exactly the correct answers");
    outcome(failed.is_empty(), if failed.is_empty() { "all constants match".into() } else { format!("failed: {failed:?}") })
}

fn semantics_config() -> RunConfig {
    let mut c = tiny_config(17);
    c.training.schedule = Schedule::Linear {
        total_steps: 400,
        final_fraction: 0.1,
    };
    c.probe.measure_fixed = false;
    c.controller = Some(ControllerSection {
        temperatures: GridRange {
            start: 0.6,
            stop: 1.0,
            step: 0.2,
        },
        thresholds: GridRange {
            start: -0.5,
            stop: 0.5,
            step: 0.5,
        },
        fine: false,
    });
    c
}

fn replay(
    setup: &Setup,
    draw: &[Query],
    selected: &[(u64, Response)],
    policy: &mut Policy,
    opt: &mut bstar::Optimizer,
    c: &RunConfig,
    minibatch_seed: u64,
) {
    let by_id: HashMap<u64, &Query> = draw.iter().map(|q| (q.id, q)).collect();
    let examples: Vec<(&Query, &Response)> = selected.iter().map(|(id, r)| (by_id[id], r)).collect();
    improve(&setup.task, policy, opt, &examples, c.training.steps_per_iteration, c.training.batch_size, minibatch_seed)
        .unwrap();
}

fn variant_semantics() -> Outcome {
    let started = Instant::now();
    let mut problems = Vec::new();
    for variant in [LoopVariant::RestEm, LoopVariant::IterativeRft, LoopVariant::OnlineRft, LoopVariant::BStar] {
        let mut c = semantics_config();
        c.variant = variant;
        let setup = Setup::new(&c).unwrap();
        let initial = setup.warm_up(&c).unwrap();
        let steps = c.training.steps_per_iteration as u64;
        let mut t = Trainer::new(
            &setup.task,
            setup.reward.clone(),
            c.loop_settings().unwrap(),
            &setup.train,
            setup.probe.clone(),
            &setup.eval,
            c.seeds(),
            initial.clone(),
        )
        .unwrap();
        for iteration in 1..=3u64 {
            let (prev_policy, prev_opt) = (t.policy().clone(), t.optimizer().clone());
            let draw = t.draw(c.sampling.queries_per_iteration);
            let out = t.run_iteration(&draw).unwrap();
            let (mut policy, mut opt) = match variant {
                LoopVariant::RestEm => {
                    let p = t.initial().params().clone();
                    let o = p.new_optimizer(*prev_opt.config());
                    (p, o)
                }
                LoopVariant::IterativeRft => {
                    let o = prev_policy.new_optimizer(*prev_opt.config());
                    (prev_policy.clone(), o)
                }
                _ => (prev_policy.clone(), prev_opt.clone()),
            };
            let rate_before = opt.current_rate();
            replay(&setup, &draw, &out.selected, &mut policy, &mut opt, &c, out.stats.seeds.minibatch);
            if policy.logits() != t.policy().logits() {
                problems.push(format!("{} iteration {iteration}: params not reproduced", variant.as_str()));
            }
            if &opt != t.optimizer() {
                problems.push(format!("{} iteration {iteration}: optimizer not reproduced", variant.as_str()));
            }
            let expected_steps = if variant.carries_optimizer() { steps * iteration } else { steps };
            if t.optimizer().step() != expected_steps {
                problems.push(format!("{} iteration {iteration}: schedule position {}", variant.as_str(), t.optimizer().step()));
            }
            let expected_rate = if variant.carries_optimizer() {
                prev_opt.current_rate()
            } else {
                c.training.learning_rate
            };
            if rate_before != expected_rate {
                problems.push(format!("{} iteration {iteration}: learning rate restarted", variant.as_str()));
            }
            if variant == LoopVariant::RestEm && t.initial().params().logits() != initial.logits() {
                problems.push("rest_em: initial snapshot changed".into());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        problems.is_empty() && secs < 30.0,
        format!("4 variants x 3 iterations replayed from inspected state, {secs:.1}s {problems:?}"),
    )
}

fn constructed_pool(id: u64, keys: &[Vec<u8>], totals: &[f64], temperature: f64) -> CandidatePool {
    let candidates = keys
        .iter()
        .zip(totals)
        .map(|(k, &total)| Candidate {
            response: Response {
                steps: k.iter().map(|&s| OpToken(s)).collect(),
                final_answer: 0,
                logprob: 0.0,
            },
            correct: total >= 1.0,
            reward: RewardScore {
                total,
                answer_part: u8::from(total >= 1.0),
                prm_part: None,
            },
        })
        .collect();
    CandidatePool::new(id, candidates, ConfigPoint::new(temperature, 0.0)).unwrap()
}

fn controller_correctness() -> Outcome {
    let started = Instant::now();
    let mut problems = Vec::new();
    // Low temperature: one repeated correct response among wrong ones.
    // Middle temperature: six distinct correct responses with rewards 1.5
    // and wrong ones at 0.6, so threshold 0.6 drops exactly the wrong ones.
    // High temperature: mostly wrong.
    let low: Vec<_> = (0..5)
        .map(|i| constructed_pool(i, &vec![vec![0]; 8], &[1.5, 1.5, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2], 0.5))
        .collect();
    let mid_keys: Vec<Vec<u8>> = (0..8).map(|j| vec![j as u8 % 6, j as u8 / 6]).collect();
    let mid: Vec<_> = (0..5)
        .map(|i| constructed_pool(i, &mid_keys, &[1.5, 1.5, 1.5, 1.5, 1.5, 1.5, 0.6, 0.6], 0.8))
        .collect();
    let high: Vec<_> = (0..5)
        .map(|i| constructed_pool(i, &mid_keys, &[1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.1))
        .collect();
    let thresholds = [0.0, 0.6, 1.0];
    let r = controller::search_on_pools::<f64>(&[(0.5, low), (0.8, mid), (1.1, high)], &thresholds, 6).unwrap();
    // At (0.8, 0.6): n' = 6, n = 6, bs = 1. Threshold 1.0 also scores 1
    // and wins the tie as the higher threshold.
    if r.best != ConfigPoint::new(0.8, 1.0) || r.score != 1.0 {
        problems.push(format!("constructed argmax: got {:?} score {}", r.best, r.score));
    }
    let tie: Vec<_> = (0..3).map(|i| constructed_pool(i, &mid_keys[..2], &[1.5, 1.5], 0.5)).collect();
    let r = controller::search_on_pools::<f64>(&[(0.5, tie.clone()), (0.9, tie)], &[-1.0, 0.0, 0.5], 2).unwrap();
    if r.best != ConfigPoint::new(0.5, 0.5) {
        problems.push(format!("tie-break: got {:?}", r.best));
    }

    let mut c = tiny_config(31);
    c.variant = LoopVariant::BStar;
    c.reward.mode = RewardMode::AnswerPlusPrm;
    c.controller = Some(ControllerSection::default());
    c.iterations = 3;
    let a = experiment::run_experiment(&c, None).unwrap();
    let b = experiment::run_experiment(&c, None).unwrap();
    for (x, y) in a.iterations.iter().zip(&b.iterations) {
        let s = x.search.as_ref().unwrap();
        let max = s.table.iter().map(|g| g.score).fold(f64::NEG_INFINITY, f64::max);
        if s.score != max {
            problems.push(format!("iteration {}: score {} != table max {max}", x.stats.iteration, s.score));
        }
        let first_max = s.table.iter().find(|g| g.score == max).unwrap();
        let chosen = s
            .table
            .iter()
            .filter(|g| g.score == max && g.temperature == first_max.temperature)
            .map(|g| g.threshold)
            .fold(f64::NEG_INFINITY, f64::max);
        if s.best != ConfigPoint::new(first_max.temperature, chosen) {
            problems.push(format!("iteration {}: tie-break rule violated", x.stats.iteration));
        }
        if x.search != y.search {
            problems.push(format!("iteration {}: repeated search differs", x.stats.iteration));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(problems.is_empty() && secs < 60.0, format!("constructed, tie and 3 live searches checked, {secs:.1}s {problems:?}"))
}

fn gradient_check() -> Outcome {
    let task = Task::new(7, vec![Op::Add(1), Op::Mul(2), Op::Add(3)], 3).unwrap();
    let mut policy = PolicyParams::<f64>::zeros(&task);
    let mut rng = seed::rng(5);
    let queries: Vec<Query> = (0..6).map(|i| task.query(i, rng.gen_range(0..7), rng.gen_range(0..7), 3)).collect();
    for t in 0..7 {
        for v in 0..7 {
            for left in 1..=3 {
                for l in policy.state_logits_mut(t, v, left) {
                    *l = rng.gen_range(-2.0..2.0);
                }
            }
        }
    }
    let responses: Vec<Response> = queries
        .iter()
        .map(|q| {
            let len = rng.gen_range(1..=3);
            let steps = (0..len).map(|_| OpToken(rng.gen_range(0..3))).collect();
            task.response(q.start, steps, 0.0).unwrap()
        })
        .collect();
    let weights: Vec<f64> = (0..queries.len()).map(|_| rng.gen_range(0.2..2.0)).collect();
    let batch: Vec<Example> = queries
        .iter()
        .zip(&responses)
        .zip(&weights)
        .map(|((query, response), &weight)| Example { query, response, weight })
        .collect();
    let analytic = policy.nll_gradient(&task, &batch).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    for (t, v, left) in (0..7).flat_map(|t| (0..7).flat_map(move |v| (1..=3).map(move |l| (t, v, l)))) {
        for j in 0..3 {
            let offset = {
                let base = policy.logits().as_ptr() as usize;
                let row = policy.state_logits(t, v, left).as_ptr() as usize;
                (row - base) / std::mem::size_of::<f64>() + j
            };
            let orig = policy.state_logits(t, v, left)[j];
            policy.state_logits_mut(t, v, left)[j] = orig + h;
            let up = policy.nll(&task, &batch).unwrap();
            policy.state_logits_mut(t, v, left)[j] = orig - h;
            let down = policy.nll(&task, &batch).unwrap();
            policy.state_logits_mut(t, v, left)[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[offset];
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-7 {
                nonzero += 1;
                worst = worst.max((a - numeric).abs() / scale);
            } else if (a - numeric).abs() > 1e-9 {
                worst = f64::INFINITY;
            }
        }
    }
    outcome(
        worst <= 1e-5 && nonzero > 0,
        format!("{nonzero} nonzero partials, worst relative error {worst:.2e}"),
    )
}

fn answer_only_config(seed: u64) -> RunConfig {
    let mut c = RunConfig {
        seed,
        ..RunConfig::default()
    };
    c.variant = LoopVariant::OnlineRft;
    c.reward.mode = RewardMode::AnswerOnly;
    c.output.checkpoints = CheckpointPolicy::Final;
    c
}

fn improvement(shared: &mut Shared) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for s in SEEDS {
        let c = answer_only_config(s);
        assert_eq!((c.iterations, c.sampling.queries_per_iteration, c.sampling.k), (9, 500, 32));
        let started = Instant::now();
        let out = experiment::run_experiment(&c, None).unwrap();
        let took = started.elapsed();
        let (w, f) = (out.warmup_eval.pass_at_1, out.final_eval().pass_at_1);
        ok &= f > w && took < Duration::from_secs(300);
        lines.push(format!("seed {s}: {w:.3}->{f:.3} ({:.1}s)", took.as_secs_f64()));
        shared.answer_only.push(out);
        shared.answer_only_times.push(took);
    }
    outcome(ok, lines.join(", "))
}

fn mean_curve(runs: &[RunOutput]) -> Vec<f64> {
    let len = runs[0].iterations.len() + 1;
    (0..len)
        .map(|i| {
            runs.iter()
                .map(|r| if i == 0 { r.warmup_eval.diversity } else { r.iterations[i - 1].stats.eval.diversity })
                .sum::<f64>()
                / runs.len() as f64
        })
        .collect()
}

fn diversity_dynamics(shared: &mut Shared) -> Outcome {
    if shared.answer_only.len() != SEEDS.len() {
        shared.answer_only = SEEDS
            .iter()
            .map(|&s| experiment::run_experiment(&answer_only_config(s), None).unwrap())
            .collect();
    }
    let curve = mean_curve(&shared.answer_only);
    let x: Vec<f64> = (0..curve.len()).map(|i| i as f64).collect();
    let rho = spearman(&x, &curve);
    let prm: Vec<RunOutput> = SEEDS
        .iter()
        .map(|&s| {
            let mut c = answer_only_config(s);
            c.reward.mode = RewardMode::AnswerPlusPrm;
            c.reward.prm_noise = 0.1;
            experiment::run_experiment(&c, None).unwrap()
        })
        .collect();
    let final_mean = |runs: &[RunOutput]| runs.iter().map(|r| r.final_eval().diversity).sum::<f64>() / runs.len() as f64;
    let (d_answer, d_prm) = (final_mean(&shared.answer_only), final_mean(&prm));
    outcome(
        rho <= 0.0 && d_prm >= d_answer,
        format!(
            "answer-only mean diversity {:.4}->{:.4}, spearman {rho:.3}; final diversity answer+prm {d_prm:.4} vs answer-only {d_answer:.4}",
            curve[0],
            curve[curve.len() - 1]
        ),
    )
}

fn b_star_superiority(dir: &Path) -> Outcome {
    let mut base = RunConfig::default();
    base.reward.mode = RewardMode::AnswerPlusPrm;
    base.reward.prm_noise = 0.1;
    base.controller = Some(ControllerSection::default());
    let section = CompareSection {
        seeds: SEEDS.to_vec(),
        ..CompareSection::default()
    };
    let points = section.points();
    let result = experiment::compare(&base, &section, Some(&dir.join("compare"))).unwrap();
    if result.rows.len() != (points.len() + 1) * SEEDS.len() {
        return outcome(false, format!("{} comparison rows", result.rows.len()));
    }
    let mean = |f: &dyn Fn(&experiment::CompareRow) -> bool, g: &dyn Fn(&experiment::CompareRow) -> f64| {
        let v: Vec<f64> = result.rows.iter().filter(|r| f(r)).map(g).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let is_b = |r: &experiment::CompareRow| r.variant == LoopVariant::BStar;
    let b_pass = mean(&is_b, &|r| r.final_pass_at_1);
    let b_balance = mean(&is_b, &|r| r.mean_balance_score);
    let mut best_pass = (f64::NEG_INFINITY, ConfigPoint::new(0.0, 0.0));
    let mut best_balance = f64::NEG_INFINITY;
    let mut best_shared = f64::NEG_INFINITY;
    for p in &points {
        let at = |r: &experiment::CompareRow| r.temperature == Some(p.temperature) && r.threshold == Some(p.threshold);
        let pass = mean(&at, &|r| r.final_pass_at_1);
        if pass > best_pass.0 {
            best_pass = (pass, *p);
        }
        best_balance = best_balance.max(mean(&at, &|r| r.mean_balance_score));
        let shared: Vec<f64> = result
            .shared_probe
            .iter()
            .filter(|r| r.temperature == p.temperature && r.threshold == p.threshold)
            .map(|r| r.mean_table_score)
            .collect();
        best_shared = best_shared.max(shared.iter().sum::<f64>() / shared.len() as f64);
    }
    let b_shared = result.shared_probe.iter().map(|r| r.b_star_mean_score).sum::<f64>() / result.shared_probe.len() as f64;
    let shared_complete = result.shared_probe.len() == points.len() * SEEDS.len();
    let ok = b_pass >= best_pass.0 && b_balance >= best_balance && shared_complete && b_shared > best_shared;
    outcome(
        ok,
        format!(
            "pass@1 b_star {b_pass:.4} vs best fixed {:.4} (T={}, tau={}); mean balance {b_balance:.4} vs {best_balance:.4}; shared probe {b_shared:.4} vs {best_shared:.4}",
            best_pass.0, best_pass.1.temperature, best_pass.1.threshold
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let mut differs = Vec::new();
    let mut b = RunConfig {
        seed: 3,
        variant: LoopVariant::BStar,
        ..RunConfig::default()
    };
    b.reward.mode = RewardMode::AnswerPlusPrm;
    b.controller = Some(ControllerSection::default());
    b.output.reward_traces = true;
    for (label, config) in [("online_rft", answer_only_config(0)), ("b_star", b)] {
        let first = dir.join(format!("det-{label}-1"));
        let second = dir.join(format!("det-{label}-2"));
        experiment::run_experiment(&config, Some(&first)).unwrap();
        experiment::run_experiment(&config, Some(&second)).unwrap();
        let manifest: serde_json::Value = serde_json::from_slice(&fs::read(first.join("manifest.json")).unwrap()).unwrap();
        let mut files: Vec<String> =
            manifest["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap().to_string()).collect();
        files.push("manifest.json".into());
        for f in files.iter().filter(|f| f.as_str() != "timings.jsonl") {
            if fs::read(first.join(f)).unwrap() != fs::read(second.join(f)).unwrap() {
                differs.push(format!("{label}/{f}"));
            }
        }
    }
    outcome(
        differs.is_empty(),
        if differs.is_empty() {
            "stats, score tables, traces, checkpoints and manifests byte-identical across reruns".into()
        } else {
            format!("differing files: {differs:?}")
        },
    )
}
