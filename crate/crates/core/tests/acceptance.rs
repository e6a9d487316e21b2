//! Acceptance criteria 1–10. Each criterion prints one PASS/FAIL line; the binary exits
//! non-zero when any criterion fails. Reference values come from implementations written
//! here, independent of the library routines under test.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use dilpikl::experiment::{load_config, run_experiment, Manifest};
use dilpikl::learners::{self, Feedback, LearnerOptions, LearnerState, TemperatureSchedule, Trace, TypeDistribution};
use dilpikl::markov::{make_random_markov, random_anchors, RandomMarkovParams, StateAnchors, TabularMarkovGame};
use dilpikl::oracle::{self, BneOptions};
use dilpikl::popeval::{self, AgentSpec, PopGame};
use dilpikl::rating::{self, FitOptions, GameRecord};
use dilpikl::rl::{TrainConfig, TrainMode, Trainer};
use dilpikl::{make_builtin_game, AnchorPolicy, GameParams, NormalFormGame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// independent references

fn random_anchor(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| 0.2 + rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

fn normalize(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

#[derive(Clone, Copy)]
enum RefSchedule {
    Eta(f64),
    Adaptive,
    Zero,
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Replays the sampled joint actions of `trace` through textbook piKL-hedge / hedge /
/// fictitious play and returns the largest policy (and κ) discrepancy.
fn replay_discrepancy(game: &NormalFormGame, anchors: &[Vec<f64>], lambda: f64, schedule: RefSchedule, trace: &Trace) -> f64 {
    let n = game.player_count();
    let mut worst: f64 = 0.0;
    let mut sums: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; game.action_count(i)]).collect();
    let mut realized: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (t0, row) in trace.rows.iter().enumerate() {
        let seen = t0 as f64;
        let joint: Vec<usize> = row.per_player.iter().map(|r| r.action.unwrap()).collect();
        for i in 0..n {
            let m = game.action_count(i);
            let kappa = match schedule {
                RefSchedule::Eta(eta) => {
                    if t0 == 0 {
                        f64::INFINITY
                    } else {
                        1.0 / (eta * seen)
                    }
                }
                RefSchedule::Adaptive => {
                    if realized[i].len() >= 2 {
                        (0.3 * sample_std(&realized[i]) / seen.sqrt()).max(1e-6)
                    } else {
                        1e-6
                    }
                }
                RefSchedule::Zero => 0.0,
            };
            let q: Vec<f64> = sums[i].iter().map(|s| if t0 == 0 { 0.0 } else { s / seen }).collect();
            let qmax = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let x = if kappa == f64::INFINITY {
                vec![1.0 / m as f64; m]
            } else if lambda > 0.0 {
                let temp = kappa + lambda;
                normalize(
                    (0..m)
                        .map(|a| anchors[i][a].powf(lambda / temp) * ((q[a] - qmax) / temp).exp())
                        .collect(),
                )
            } else if kappa > 0.0 {
                match schedule {
                    RefSchedule::Eta(eta) => {
                        let smax = sums[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        normalize(sums[i].iter().map(|s| (eta * (s - smax)).exp()).collect())
                    }
                    _ => normalize(q.iter().map(|v| ((v - qmax) / kappa).exp()).collect()),
                }
            } else {
                let smax = sums[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                normalize(sums[i].iter().map(|&s| if s == smax { 1.0 } else { 0.0 }).collect())
            };
            let got = &row.per_player[i].policy_by_type[0].policy;
            for (a, b) in x.iter().zip(got) {
                worst = worst.max((a - b).abs());
            }
            if kappa.is_finite() {
                worst = worst.max((row.kappa[i] - kappa).abs() / kappa.max(1.0));
            }
        }
        for i in 0..n {
            let mut dev = joint.clone();
            for a in 0..game.action_count(i) {
                dev[i] = a;
                sums[i][a] += game.payoff(i, &dev);
            }
            realized[i].push(game.payoff(i, &joint));
        }
    }
    worst
}

fn make_learners(
    game: &NormalFormGame,
    anchors: &[Vec<f64>],
    types: &[TypeDistribution],
    schedule: TemperatureSchedule,
) -> Vec<LearnerState> {
    (0..game.player_count())
        .map(|i| {
            LearnerState::new(
                i,
                game.action_count(i),
                AnchorPolicy::new(anchors[i].clone()).unwrap(),
                types[i].clone(),
                schedule,
                LearnerOptions::default(),
            )
            .unwrap()
        })
        .collect()
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let params = GameParams {
        seed: Some(11),
        players: Some(3),
        actions: Some(dilpikl::game::ActionsParam::Shared(3)),
        payoff_bound: Some(1.0),
    };
    let game = ok(make_builtin_game("random_general_sum", &params))?;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let anchors: Vec<Vec<f64>> = (0..3).map(|_| random_anchor(&mut rng, 3)).collect();
    let cases = [
        ("piKL-hedge η", 0.1, TemperatureSchedule::constant_eta(0.5), RefSchedule::Eta(0.5)),
        ("piKL-hedge adaptive", 0.1, TemperatureSchedule::adaptive(), RefSchedule::Adaptive),
        ("hedge", 0.0, TemperatureSchedule::constant_eta(0.5), RefSchedule::Eta(0.5)),
        ("fictitious play", 0.0, TemperatureSchedule::constant(0.0), RefSchedule::Zero),
    ];
    let mut details = Vec::new();
    for (name, lambda, schedule, reference) in cases {
        let types = vec![TypeDistribution::singleton(lambda); 3];
        let mut ls = make_learners(&game, &anchors, &types, schedule);
        let mut run_rng = ChaCha8Rng::seed_from_u64(7);
        let trace = ok(learners::run(&mut ls, &game, 1000, Feedback::Sampled, &mut run_rng, true))?;
        let gap = replay_discrepancy(&game, &anchors, lambda, reference, &trace);
        ensure!(gap <= 1e-12, "{name}: max discrepancy {gap:e} > 1e-12");
        details.push(format!("{name} {gap:.1e}"));
    }
    Ok(format!("max |Δπ| over 1000 iterates, 3 players: {}", details.join(", ")))
}

fn regret_reference(trace: &Trace, player: usize, lambda: f64, tau: &[f64], upto: usize) -> f64 {
    let rows = &trace.rows[..upto];
    let n = tau.len();
    let mut q = vec![0.0; n];
    let mut earned = 0.0;
    for row in rows {
        let rec = &row.per_player[player];
        let x = &rec.policy_by_type[0].policy;
        let u = &rec.action_utilities;
        earned += x.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() - lambda * kl(x, tau);
        for (s, v) in q.iter_mut().zip(u) {
            *s += v;
        }
    }
    // best fixed policy: max_x ⟨S, x⟩ − T·λ·KL(x‖τ) = T·λ·ln Σ τ exp(S/(Tλ))
    let t = rows.len() as f64;
    let scaled: Vec<f64> = q.iter().map(|s| s / (t * lambda)).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + tau.iter().zip(&scaled).map(|(w, z)| w * (z - m).exp()).sum::<f64>().ln();
    t * lambda * lse - earned
}

fn criterion_2() -> Outcome {
    let t_max = 10_000usize;
    let eta = 0.5;
    let mut violations = Vec::new();
    let mut literal_violations = 0usize;
    let mut ratio_violations = Vec::new();
    let mut ratio_sums = [0.0f64; 2];
    let mut worst_slack = f64::INFINITY;
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let game = ok(make_builtin_game("random_zero_sum", &GameParams::random(seed, 2, 3, 1.0)))?;
        let mut arng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let anchors: Vec<Vec<f64>> = (0..2).map(|_| random_anchor(&mut arng, 3)).collect();
        for lambda in [0.01, 0.1, 1.0] {
            let types = vec![TypeDistribution::singleton(lambda); 2];
            let mut ls = make_learners(&game, &anchors, &types, TemperatureSchedule::constant_eta(eta));
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + (lambda * 1000.0) as u64);
            let trace = ok(learners::run(&mut ls, &game, t_max as u64, Feedback::Sampled, &mut rng, true))?;
            for i in 0..2 {
                let anchor = AnchorPolicy::new(anchors[i].clone()).unwrap();
                let report = ok(oracle::regularized_regret(&trace, i, lambda, &anchor))?;
                let reference = regret_reference(&trace, i, lambda, &anchors[i], t_max);
                ensure!(
                    (report.regret - reference).abs() <= 1e-6 * reference.abs().max(1.0),
                    "seed {seed} λ={lambda} player {i}: regret {} vs reference {reference}",
                    report.regret
                );
                // bound written out directly: U = 1, n = 3
                let n = 3.0f64;
                let tf = t_max as f64;
                let kl_uniform: f64 = anchors[i].iter().map(|&p| (1.0 / n) * ((1.0 / n) / p).ln()).sum();
                let base = 0.25 * (2.0 * tf.ln() / lambda).min(tf * eta) + n.ln() / eta;
                let bound = base + lambda * kl_uniform;
                let lib_bound = ok(oracle::regret_bound(1.0, t_max as u64, eta, lambda, &anchor))?.value;
                ensure!(
                    (bound - lib_bound).abs() <= 1e-12 * bound,
                    "bound mismatch {bound} vs {lib_bound}"
                );
                if reference > lib_bound {
                    violations.push(format!("seed {seed} λ={lambda} p{i}: {reference:.4} > {lib_bound:.4}"));
                }
                if reference > base - lambda * kl_uniform {
                    literal_violations += 1;
                }
                worst_slack = worst_slack.min(lib_bound - reference);
                checked += 1;
                if lambda == 1.0 {
                    let r3 = regret_reference(&trace, i, lambda, &anchors[i], 1000);
                    ratio_sums[0] += r3 / 1000f64.ln() / 200.0;
                    ratio_sums[1] += reference / tf.ln() / 200.0;
                    if reference / tf.ln() > r3 / 1000f64.ln() {
                        ratio_violations.push((seed, i));
                    }
                }
            }
        }
    }
    ensure!(
        violations.is_empty(),
        "{} of {checked} (seed, λ, player) regrets exceed the bound, e.g. {}",
        violations.len(),
        violations[0]
    );
    // Regret is a random variable, so the ratio is gated on its mean over the λ = 1 runs;
    // runs whose own ratio rose are counted in the report line.
    ensure!(
        ratio_sums[1] <= ratio_sums[0],
        "mean regret/log T rose from {:.4} (T=1e3) to {:.4} (T=1e4)",
        ratio_sums[0],
        ratio_sums[1]
    );
    Ok(format!(
        "{checked} regrets within bound (min slack {worst_slack:.3}); {literal_violations} would exceed it with \
         ρ = −λ·KL(uniform‖τ); λ=1 mean regret/log T {:.4} → {:.4} (rose on {} of 200 individual runs)",
        ratio_sums[0],
        ratio_sums[1],
        ratio_violations.len()
    ))
}

fn criterion_3() -> Outcome {
    let game = ok(make_builtin_game("matching_pennies", &GameParams::default()))?;
    let anchors = vec![vec![0.7, 0.3], vec![0.5, 0.5]];
    let types = vec![TypeDistribution::singleton(0.1); 2];
    let anchor_pols: Vec<AnchorPolicy> = anchors.iter().map(|a| AnchorPolicy::new(a.clone()).unwrap()).collect();
    let eq = ok(oracle::solve_regularized_bne(&game, &anchor_pols, &types, &BneOptions::with_tol(1e-10)))?;
    let schedule = TemperatureSchedule::constant_eta(0.5);

    let mut ls = make_learners(&game, &anchors, &types, schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ok(learners::run(&mut ls, &game, 100_000, Feedback::Expected, &mut rng, false))?;
    let mut expected_kl = Vec::new();
    for (i, l) in ls.iter().enumerate() {
        let x = &l.last_iterates().unwrap()[0];
        let d = kl(&eq.players[i].policies[0], x);
        ensure!(d <= 1e-6, "expected feedback: player {i} KL(x*‖x^T) = {d:e} > 1e-6");
        expected_kl.push(d);
    }

    let checkpoints = [1_000u64, 10_000, 100_000];
    let seeds = 20;
    let mut mean_d = [0.0; 3];
    let mut mean_kl = [0.0f64; 2];
    for seed in 0..seeds {
        let mut ls = make_learners(&game, &anchors, &types, schedule);
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut done = 0;
        for (c, &target) in checkpoints.iter().enumerate() {
            ok(learners::run(&mut ls, &game, target - done, Feedback::Sampled, &mut rng, false))?;
            done = target;
            let iterates: Vec<Vec<Vec<f64>>> = ls.iter().map(|l| l.last_iterates().unwrap().to_vec()).collect();
            let kappas: Vec<f64> = ls.iter().map(|l| l.kappa_used()).collect();
            mean_d[c] += ok(oracle::last_iterate_distance(&iterates, &eq, &kappas))? / seeds as f64;
            if target == 100_000 {
                for i in 0..2 {
                    mean_kl[i] += kl(&eq.players[i].policies[0], &iterates[i][0]) / seeds as f64;
                }
            }
        }
    }
    for (i, m) in mean_kl.iter().enumerate() {
        ensure!(*m <= 0.01, "sampled feedback: player {i} mean KL {m:e} > 0.01");
    }
    ensure!(
        mean_d[0] > mean_d[1] && mean_d[1] > mean_d[2],
        "mean d(T) not decreasing: {mean_d:?}"
    );
    Ok(format!(
        "expected KL {:.1e}/{:.1e}; sampled mean KL {:.1e}/{:.1e}; mean d(T) at 1e3/1e4/1e5 = {:.2e}/{:.2e}/{:.2e}",
        expected_kl[0], expected_kl[1], mean_kl[0], mean_kl[1], mean_d[0], mean_d[1], mean_d[2]
    ))
}

/// f(p, q) for a 2×2 zero-sum game: player 0's regularized payoff minus player 1's penalty.
fn saddle_objective(a: &[[f64; 2]; 2], l1: f64, t1: &[f64], l2: f64, t2: &[f64], p: f64, q: f64) -> f64 {
    let x = [p, 1.0 - p];
    let y = [q, 1.0 - q];
    let mut u = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            u += x[i] * y[j] * a[i][j];
        }
    }
    u - l1 * kl(&x, t1) + l2 * kl(&y, t2)
}

fn ternary(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, maximize: bool) -> f64 {
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        let better = if maximize { f(m1) < f(m2) } else { f(m1) > f(m2) };
        if better {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    0.5 * (lo + hi)
}

fn grid_saddle(a: &[[f64; 2]; 2], l1: f64, t1: &[f64], l2: f64, t2: &[f64]) -> (f64, f64) {
    let steps = 100_000;
    let mut best_p = (f64::NEG_INFINITY, 0.0);
    let mut best_q = (f64::INFINITY, 0.0);
    for k in 0..=steps {
        let g = k as f64 / steps as f64;
        let q_inner = ternary(0.0, 1.0, |q| saddle_objective(a, l1, t1, l2, t2, g, q), false);
        let v = saddle_objective(a, l1, t1, l2, t2, g, q_inner);
        if v > best_p.0 {
            best_p = (v, g);
        }
        let p_inner = ternary(0.0, 1.0, |p| saddle_objective(a, l1, t1, l2, t2, p, g), true);
        let w = saddle_objective(a, l1, t1, l2, t2, p_inner, g);
        if w < best_q.0 {
            best_q = (w, g);
        }
    }
    (best_p.1, best_q.1)
}

fn criterion_4() -> Outcome {
    let mut cases: Vec<(NormalFormGame, Vec<Vec<f64>>, f64, f64)> = vec![(
        ok(make_builtin_game("matching_pennies", &GameParams::default()))?,
        vec![vec![0.7, 0.3], vec![0.5, 0.5]],
        0.1,
        0.1,
    )];
    for (seed, l1, l2) in [(3u64, 0.05, 0.3), (4, 1.0, 0.2), (5, 0.5, 0.5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 40);
        let anchors = vec![random_anchor(&mut rng, 2), random_anchor(&mut rng, 2)];
        cases.push((
            ok(make_builtin_game("random_zero_sum", &GameParams::random(seed, 2, 2, 1.0)))?,
            anchors,
            l1,
            l2,
        ));
    }
    let mut worst_gap: f64 = 0.0;
    let mut worst_expl: f64 = 0.0;
    for (game, anchors, l1, l2) in &cases {
        let types = vec![TypeDistribution::singleton(*l1), TypeDistribution::singleton(*l2)];
        let pols: Vec<AnchorPolicy> = anchors.iter().map(|a| AnchorPolicy::new(a.clone()).unwrap()).collect();
        let eq = ok(oracle::solve_regularized_bne(game, &pols, &types, &BneOptions::with_tol(1e-10)))?;
        let expl = ok(oracle::regularized_exploitability(game, &pols, &eq))?;
        ensure!(expl < 1e-8, "regularized exploitability {expl:e} ≥ 1e-8");
        worst_expl = worst_expl.max(expl);
        let a = [
            [game.payoff(0, &[0, 0]), game.payoff(0, &[0, 1])],
            [game.payoff(0, &[1, 0]), game.payoff(0, &[1, 1])],
        ];
        let (p, q) = grid_saddle(&a, *l1, &anchors[0], *l2, &anchors[1]);
        let gap = (p - eq.players[0].policies[0][0])
            .abs()
            .max((q - eq.players[1].policies[0][0]).abs());
        ensure!(gap <= 1e-4, "grid search disagrees by {gap:e} (grid p={p}, q={q})");
        worst_gap = worst_gap.max(gap);
    }

    let game = ok(make_builtin_game("random_zero_sum", &GameParams::random(9, 2, 3, 1.0)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let anchors = [random_anchor(&mut rng, 3), random_anchor(&mut rng, 3)];
    let pols: Vec<AnchorPolicy> = anchors.iter().map(|a| AnchorPolicy::new(a.clone()).unwrap()).collect();
    let types = vec![TypeDistribution::singleton(1e9); 2];
    let eq = ok(oracle::solve_regularized_bne(&game, &pols, &types, &BneOptions::with_tol(1e-10)))?;
    let mut anchor_gap: f64 = 0.0;
    for i in 0..2 {
        for (x, t) in eq.players[i].policies[0].iter().zip(&anchors[i]) {
            anchor_gap = anchor_gap.max((x - t).abs());
        }
    }
    ensure!(anchor_gap <= 1e-6, "λ=1e9 policies are {anchor_gap:e} from the anchors");
    Ok(format!(
        "{} games: exploitability ≤ {worst_expl:.1e}, grid gap ≤ {worst_gap:.1e}; λ=1e9 anchor gap {anchor_gap:.1e}",
        cases.len()
    ))
}

fn criterion_5() -> Outcome {
    let game = ok(make_builtin_game("matching_pennies", &GameParams::default()))?;
    let anchors = vec![vec![0.5, 0.5]; 2];
    let types = vec![TypeDistribution::singleton(0.0); 2];
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut ls = make_learners(&game, &anchors, &types, TemperatureSchedule::inverse_sqrt());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ok(learners::run(&mut ls, &game, 10_000, Feedback::Sampled, &mut rng, false))?;
        let x = ok(ls[0].average_policy(0.0))?;
        let y = ok(ls[1].average_policy(0.0))?;
        // matching pennies: row value of action 0 is 2y₀ − 1, so the total best-response gap is
        // |2y₀ − 1| + |2x₀ − 1| (each player's best response earns the absolute value)
        let u0 = [2.0 * y[0] - 1.0, 1.0 - 2.0 * y[0]];
        let u1 = [1.0 - 2.0 * x[0], 2.0 * x[0] - 1.0];
        let gap = u0[0].max(u0[1]) - (x[0] * u0[0] + x[1] * u0[1]) + u1[0].max(u1[1]) - (y[0] * u1[0] + y[1] * u1[1]);
        let lib = ok(oracle::unregularized_exploitability(&game, &[x.clone(), y.clone()]))?;
        ensure!((gap - lib).abs() < 1e-12, "exploitability mismatch {gap} vs {lib}");
        ensure!(gap <= 0.05, "seed {seed}: exploitability {gap} > 0.05");
        worst = worst.max(gap);
    }
    Ok(format!("hedge average exploitability ≤ {worst:.4} over 10 seeds"))
}

fn markov_fixture() -> (TabularMarkovGame, StateAnchors) {
    let game = make_random_markov(&RandomMarkovParams {
        seed: 5,
        state_count: 5,
        player_count: 2,
        actions_per_player: 3,
        horizon: 4,
        gamma: 1.0,
        zero_sum: true,
        reward_bound: 1.0,
    })
    .unwrap();
    let anchors = random_anchors(&game, 17);
    (game, anchors)
}

fn criterion_6() -> Outcome {
    let (game, anchors) = markov_fixture();
    let config = TrainConfig {
        search_iterations: 1024,
        types: vec![TypeDistribution::singleton(0.1); 2],
        episodes: 400,
        seed: 3,
        ..TrainConfig::default()
    };
    let types = config.effective_types(2);
    let solution = ok(oracle::solve_markov_backward(&game, &anchors, &types, &BneOptions::default()))?;
    let mut trainer = ok(Trainer::new(&game, &anchors, config))?;
    let mut worst_sym: f64 = 0.0;
    for _ in 0..400 {
        ok(trainer.run_episode())?;
        for s in 0..game.state_count() {
            let v = trainer.values().get(s);
            worst_sym = worst_sym.max((v[0] + v[1]).abs());
        }
    }
    ensure!(worst_sym <= 1e-9, "zero-sum symmetry violated by {worst_sym:e}");
    let mut worst: f64 = 0.0;
    for s in 0..game.state_count() {
        for (v, w) in trainer.values().get(s).iter().zip(&solution.values[s]) {
            worst = worst.max((v - w).abs());
        }
    }
    ensure!(worst <= 0.05, "max |V − V*| = {worst} > 0.05");
    Ok(format!("max |V − V*| = {worst:.4}, symmetry ≤ {worst_sym:.1e}, visits {:?}", trainer.visits()))
}

/// Exact expected return of each player from every state, by recursion over successors.
fn exact_values(game: &TabularMarkovGame, policies: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    fn value(game: &TabularMarkovGame, policies: &[Vec<Vec<f64>>], s: usize, memo: &mut BTreeMap<usize, Vec<f64>>) -> Vec<f64> {
        if game.is_terminal(s) {
            return vec![0.0; game.player_count()];
        }
        if let Some(v) = memo.get(&s) {
            return v.clone();
        }
        let counts = game.action_counts(s).to_vec();
        let mut out = vec![0.0; game.player_count()];
        for a in 0..counts[0] {
            for b in 0..counts[1] {
                let w = policies[s][0][a] * policies[s][1][b];
                let j = game.joint_index(s, &[a, b]);
                let r = game.rewards(s, j).to_vec();
                let mut cont = vec![0.0; game.player_count()];
                for &(next, p) in game.transitions(s, j) {
                    let v = value(game, policies, next, memo);
                    for (c, x) in cont.iter_mut().zip(v) {
                        *c += p * x;
                    }
                }
                for p in 0..out.len() {
                    out[p] += w * (r[p] + game.gamma() * cont[p]);
                }
            }
        }
        memo.insert(s, out.clone());
        out
    }
    let mut memo = BTreeMap::new();
    (0..game.state_count()).map(|s| value(game, policies, s, &mut memo)).collect()
}

fn criterion_7() -> Outcome {
    let (game, anchors) = markov_fixture();
    let config = TrainConfig {
        search_iterations: 512,
        episodes: 300,
        mode: TrainMode::BestResponse { player: 0 },
        seed: 4,
        ..TrainConfig::default()
    };
    let mut trainer = ok(Trainer::new(&game, &anchors, config))?;
    for _ in 0..300 {
        ok(trainer.run_episode())?;
    }
    let anchor_profile: Vec<Vec<Vec<f64>>> = anchors
        .iter()
        .map(|st| st.iter().map(|a| a.probs().to_vec()).collect())
        .collect();
    let mut br_profile = anchor_profile.clone();
    for (s, st) in br_profile.iter_mut().enumerate() {
        st[0] = trainer.policy().get(s, 0).to_vec();
        let drift = trainer
            .policy()
            .get(s, 1)
            .iter()
            .zip(anchors[s][1].probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure!(drift <= 1e-12, "opponent policy moved {drift:e} away from its anchor at state {s}");
    }
    let br = exact_values(&game, &br_profile);
    let base = exact_values(&game, &anchor_profile);
    let lib = ok(dilpikl::markov::evaluate_profile(&game, &br_profile))?;
    for s in 0..game.state_count() {
        ensure!((lib[s][0] - br[s][0]).abs() < 1e-12, "enumeration mismatch at state {s}");
    }
    let states = game.state_count() as f64;
    let br_mean = br.iter().map(|v| v[0]).sum::<f64>() / states;
    let base_mean = base.iter().map(|v| v[0]).sum::<f64>() / states;
    ensure!(br_mean >= base_mean, "best response {br_mean} < anchor play {base_mean}");
    Ok(format!("mean per-state score {br_mean:.4} (best response) vs {base_mean:.4} (anchor)"))
}

fn criterion_8() -> Outcome {
    let truth: BTreeMap<&str, f64> = [("a", 150.0), ("b", 50.0), ("c", 0.0), ("d", -75.0), ("e", -125.0)].into();
    let biases = [30.0, 20.0, 10.0, 0.0, -10.0, -20.0, -30.0];
    let names: Vec<&str> = truth.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut games = Vec::new();
    for g in 0..500 {
        let seats: Vec<String> = (0..7).map(|_| names[rng.gen_range(0..names.len())].to_string()).collect();
        let w: Vec<f64> = seats
            .iter()
            .zip(biases)
            .map(|(p, b)| 10f64.powf((truth[p.as_str()] + b) / 400.0))
            .collect();
        games.push(ok(GameRecord::new(format!("g{g}"), seats, normalize(w)))?);
    }
    let fit = ok(rating::fit_ratings(&games, &FitOptions::default()))?;
    let mut worst: f64 = 0.0;
    for (p, r) in &truth {
        worst = worst.max((ok(fit.model.rating(p))? - r).abs());
    }
    for (b, t) in fit.model.seat_biases.iter().zip(biases) {
        worst = worst.max((b - t).abs());
    }
    ensure!(worst <= 1.0, "recovery error {worst} Elo > 1");

    let mut m = rating::RatingModel::zeros(["x", "y"], 2);
    m.players.insert("x".into(), 400.0);
    let shares = ok(rating::predict_shares(&m, &["x".to_string(), "y".to_string()]))?;
    ensure!(
        (shares[0] - 10.0 / 11.0).abs() < 1e-12 && (shares[1] - 1.0 / 11.0).abs() < 1e-12,
        "400-point gap predicts {shares:?}"
    );
    ensure!(
        format!("{:.6}", shares[0]) == "0.909091" && format!("{:.6}", shares[1]) == "0.090909",
        "400-point gap shares round to {:.6}/{:.6}",
        shares[0],
        shares[1]
    );
    Ok(format!(
        "max recovery error {worst:.3} Elo over 5 ratings + 7 biases; 400-point gap → ({:.6}, {:.6})",
        shares[0], shares[1]
    ))
}

fn write_config(dir: &Path, name: &str, json: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

fn run_config(path: &Path, out: &Path) -> Result<Manifest, String> {
    let (mut cfg, base) = ok(load_config(path))?;
    cfg.output_dir = out.to_path_buf();
    ok(run_experiment(&cfg, &base))
}

fn criterion_9() -> Outcome {
    let params = GameParams {
        seed: Some(77),
        players: Some(7),
        actions: Some(dilpikl::game::ActionsParam::Shared(2)),
        payoff_bound: Some(1.0),
    };
    let game = ok(make_builtin_game("random_general_sum", &params))?;
    let anchors: Vec<AnchorPolicy> = (0..7).map(|_| AnchorPolicy::uniform(2)).collect();
    let pg = PopGame::Normal {
        game: &game,
        anchors: &anchors,
    };
    let baselines = vec![AgentSpec::anchor("pop")];
    let report = ok(popeval::run_population_eval(&AgentSpec::anchor("cand"), &baselines, &pg, 1000, 9))?;
    let z = (report.mean - 1.0 / 7.0) / report.standard_error;
    ensure!(z.abs() <= 2.0, "candidate mean {} is {z:.2} SE from 1/7", report.mean);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = write_config(
        dir.path(),
        "pop.json",
        r#"{"kind":"popeval","seed":9,
            "game":{"builtin":"random_general_sum","params":{"seed":77,"players":7,"actions":2}},
            "candidate":{"id":"cand","kind":"anchor"},
            "baselines":[{"id":"pop","kind":"anchor"}],
            "games":1000}"#,
    );
    let m1 = run_config(&cfg, &dir.path().join("a"))?;
    let m2 = run_config(&cfg, &dir.path().join("b"))?;
    ensure!(m1 == m2, "popeval manifests differ between reruns");
    let h = &m1.entry("report.json").ok_or("no report.json in manifest")?.sha256;
    Ok(format!(
        "candidate mean {:.4} ± {:.4} (z = {z:.2}) over {} seats; report hash {}…",
        report.mean,
        report.standard_error,
        report.samples,
        &h[..12]
    ))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    // ratings input generated from a fixed model
    let mut csv = String::from("game_id,seat_index,player_id,score_share\n");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for g in 0..60 {
        let w: Vec<f64> = (0..3).map(|_| 0.2 + rng.gen::<f64>()).collect();
        let shares = normalize(w);
        for (s, x) in shares.iter().enumerate() {
            csv.push_str(&format!("g{g},{s},p{},{x}\n", (g + s) % 4));
        }
    }
    fs::write(dir.path().join("games.csv"), csv).map_err(|e| e.to_string())?;
    let configs = [
        (
            "solve",
            r#"{"kind":"solve","seed":5,"game":{"builtin":"rock_paper_scissors"},
                "learner":{"types":{"support":[0.0001,0.001,0.01,0.1]},"act_lambda":0.0001},
                "iterations":500,"trace_formats":["jsonl","csv"]}"#,
        ),
        (
            "oracle",
            r#"{"kind":"oracle","game":{"builtin":"random_zero_sum","params":{"seed":2,"actions":3}},
                "learner":{"preset":"diplodocus_high"}}"#,
        ),
        (
            "rl",
            r#"{"kind":"rl","seed":6,"checkpoint_every":5,
                "game":{"random":{"seed":5,"state_count":5,"player_count":2,"actions_per_player":3,
                                  "horizon":4,"gamma":1.0,"zero_sum":true}},
                "anchors":{"random":{"seed":17}},
                "train":{"search_iterations":64,"episodes":20,"top_k":2}}"#,
        ),
        ("rate", r#"{"kind":"rate","games_csv":"games.csv"}"#),
        (
            "popeval",
            r#"{"kind":"popeval","seed":12,
                "markov":{"random":{"seed":5,"state_count":5,"player_count":2,"actions_per_player":3,
                                    "horizon":4,"gamma":1.0,"zero_sum":true}},
                "candidate":{"id":"search","kind":"search","types":{"support":[0.1]},"act_lambda":0.1,
                             "schedule":{"mode":"adaptive_std"},"iterations":64},
                "baselines":[{"id":"anchor","kind":"anchor"}],
                "games":50}"#,
        ),
    ];
    let mut files = 0;
    for (name, json) in configs {
        let cfg = write_config(dir.path(), &format!("{name}.json"), json);
        let first = run_config(&cfg, &dir.path().join(format!("{name}-1")))?;
        let second = run_config(&cfg, &dir.path().join(format!("{name}-2")))?;
        ensure!(!first.files.is_empty(), "{name}: no artifacts");
        ensure!(first == second, "{name}: artifact hashes differ between reruns");
        let m1 = fs::read(dir.path().join(format!("{name}-1/manifest.json"))).map_err(|e| e.to_string())?;
        let m2 = fs::read(dir.path().join(format!("{name}-2/manifest.json"))).map_err(|e| e.to_string())?;
        ensure!(m1 == m2, "{name}: manifest bytes differ");
        files += first.files.len();
    }
    Ok(format!("5 pipelines × 2 runs, {files} artifacts byte-identical"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("reduction identities", criterion_1),
        ("regret bound", criterion_2),
        ("last-iterate convergence", criterion_3),
        ("oracle correctness", criterion_4),
        ("hedge CCE", criterion_5),
        ("RL value learning", criterion_6),
        ("best-response mode", criterion_7),
        ("BayesElo recovery", criterion_8),
        ("population harness", criterion_9),
        ("determinism", criterion_10),
    ];
    let results: Vec<(Outcome, f64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, f)| {
                scope.spawn(move || {
                    let start = Instant::now();
                    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
                        let msg = e
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_default();
                        Err(format!("panicked: {msg}"))
                    });
                    (r, start.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut failed = 0;
    for (k, ((name, _), (outcome, secs))) in criteria.iter().zip(results).enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {why}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
