//! Exact reference quantities: smooth best responses, regularized Bayes-Nash equilibria of
//! two-player zero-sum games, exploitability, regularized regret and its upper bound.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::game::{AnchorPolicy, JointActions, NormalFormGame};
use crate::learners::{Trace, TypeDistribution};
use crate::markov::{StateAnchors, TabularMarkovGame};
use crate::simplex;

/// `Σ p log(p/q)` with `0·log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len("KL operands", p.len(), q.len())?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::invalid("KL undefined: q has a zero where p is positive"));
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total.max(0.0))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("smooth best response needs λ > 0, got {lambda}")))
    }
}

/// The maximizer of `⟨u, x⟩ − λ·KL(x‖τ)`: `x ∝ τ·exp(u/λ)`. λ = ∞ returns τ.
pub fn smooth_best_response(u: &[f64], anchor: &AnchorPolicy, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    check_len("anchor", u.len(), anchor.len())?;
    if lambda == f64::INFINITY {
        return Ok(anchor.probs().to_vec());
    }
    let logits: Vec<f64> = u
        .iter()
        .zip(anchor.log_probs())
        .map(|(x, l)| x / lambda + l)
        .collect();
    Ok(simplex::softmax(&logits))
}

/// `λ·log Σ τ(a)·exp(u(a)/λ)`, the optimal value of the regularized utility. λ = ∞ gives ⟨u, τ⟩.
pub fn sbr_value(u: &[f64], anchor: &AnchorPolicy, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    check_len("anchor", u.len(), anchor.len())?;
    if lambda == f64::INFINITY {
        return Ok(simplex::dot(u, anchor.probs()));
    }
    let logits: Vec<f64> = u
        .iter()
        .zip(anchor.log_probs())
        .map(|(x, l)| x / lambda + l)
        .collect();
    Ok(lambda * simplex::log_sum_exp(&logits))
}

/// `⟨u, x⟩ − λ·KL(x‖τ)`, with the penalty dropped for λ = 0 and required to vanish for λ = ∞.
pub fn regularized_utility(u: &[f64], x: &[f64], anchor: &AnchorPolicy, lambda: f64) -> Result<f64> {
    let value = simplex::dot(u, x);
    if lambda == 0.0 {
        return Ok(value);
    }
    let kl = kl_divergence(x, anchor.probs())?;
    Ok(value - scaled(lambda, kl))
}

/// `λ·k` with `∞·0 = 0`.
fn scaled(lambda: f64, k: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        lambda * k
    }
}

/// One player's part of a regularized profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerEquilibrium {
    pub types: TypeDistribution,
    /// One policy per type, in support order.
    pub policies: Vec<Vec<f64>>,
    /// β-weighted mixture of `policies`.
    pub mixture: Vec<f64>,
}

impl PlayerEquilibrium {
    pub fn new(types: TypeDistribution, policies: Vec<Vec<f64>>) -> Result<Self> {
        check_len("type policies", types.len(), policies.len())?;
        for p in &policies {
            simplex::check_distribution("type policy", p, 1e-9)?;
        }
        let mixture = simplex::mixture(types.weights(), &policies);
        Ok(PlayerEquilibrium {
            types,
            policies,
            mixture,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizedProfile {
    pub players: Vec<PlayerEquilibrium>,
    pub iterations: usize,
    pub residual: f64,
}

impl RegularizedProfile {
    pub fn mixtures(&self) -> Vec<Vec<f64>> {
        self.players.iter().map(|p| p.mixture.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverInit {
    #[default]
    Anchors,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BneOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Initial damping δ; halved whenever a sweep would raise the regularized gap.
    pub damping: f64,
    pub init: SolverInit,
}

impl Default for BneOptions {
    fn default() -> Self {
        BneOptions {
            tol: 1e-10,
            max_iters: 1_000_000,
            damping: 0.5,
            init: SolverInit::Anchors,
        }
    }
}

impl BneOptions {
    pub fn with_tol(tol: f64) -> Self {
        BneOptions {
            tol,
            ..Self::default()
        }
    }
}

fn check_bne_inputs(game: &NormalFormGame, anchors: &[AnchorPolicy], types: &[TypeDistribution]) -> Result<()> {
    if !game.is_zero_sum() || game.player_count() != 2 {
        return Err(Error::NotZeroSum);
    }
    check_len("anchors", 2, anchors.len())?;
    check_len("type distributions", 2, types.len())?;
    for (i, a) in anchors.iter().enumerate() {
        check_len("anchor actions", game.action_count(i), a.len())?;
    }
    for t in types {
        if t.support().iter().any(|&l| l <= 0.0) {
            return Err(Error::invalid("regularized equilibria need every λ > 0"));
        }
    }
    Ok(())
}

/// Smooth best responses to a profile, the largest policy change they imply, and the
/// β-weighted regularized best-response gap.
struct Sweep {
    targets: Vec<Vec<Vec<f64>>>,
    residual: f64,
    gap: f64,
}

fn sweep(game: &NormalFormGame, anchors: &[AnchorPolicy], types: &[TypeDistribution], x: &[Vec<Vec<f64>>]) -> Result<Sweep> {
    let mixtures: Vec<Vec<f64>> = (0..2).map(|i| simplex::mixture(types[i].weights(), &x[i])).collect();
    let mut targets = Vec::with_capacity(2);
    let mut residual: f64 = 0.0;
    let mut gap = 0.0;
    for i in 0..2 {
        let u = game.action_values(i, &mixtures)?;
        let mut per_type = Vec::with_capacity(types[i].len());
        for ((&l, &w), cur) in types[i].support().iter().zip(types[i].weights()).zip(&x[i]) {
            let t = smooth_best_response(&u, &anchors[i], l)?;
            residual = residual.max(simplex::max_abs_diff(&t, cur));
            if l.is_finite() {
                gap += w * (sbr_value(&u, &anchors[i], l)? - regularized_utility(&u, cur, &anchors[i], l)?);
            }
            per_type.push(t);
        }
        targets.push(per_type);
    }
    Ok(Sweep { targets, residual, gap })
}

/// Solves for the regularized Bayes-Nash equilibrium by damped simultaneous smooth
/// best-response iteration on every (player, type) pair.
///
/// A sweep that would raise the regularized best-response gap is rejected and δ halved.
/// The gap decreases along smoothed best-response dynamics in zero-sum games, while the
/// policy residual oscillates when the dynamics rotate.
pub fn solve_regularized_bne(
    game: &NormalFormGame,
    anchors: &[AnchorPolicy],
    types: &[TypeDistribution],
    opts: &BneOptions,
) -> Result<RegularizedProfile> {
    check_bne_inputs(game, anchors, types)?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) || !(opts.tol > 0.0) {
        return Err(Error::invalid("need 0 < damping ≤ 1 and tol > 0"));
    }
    let mut x: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|i| {
            let start = match opts.init {
                SolverInit::Anchors => anchors[i].probs().to_vec(),
                SolverInit::Uniform => simplex::uniform(game.action_count(i)),
            };
            types[i]
                .support()
                .iter()
                .map(|&l| if l == f64::INFINITY { anchors[i].probs().to_vec() } else { start.clone() })
                .collect()
        })
        .collect();
    let mut delta = opts.damping;
    let mut current = sweep(game, anchors, types, &x)?;
    for iter in 0..opts.max_iters {
        if !(current.residual.is_finite() && current.gap.is_finite()) {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: current.residual,
            });
        }
        if current.residual < opts.tol {
            let players = (0..2)
                .map(|i| PlayerEquilibrium::new(types[i].clone(), x[i].clone()))
                .collect::<Result<_>>()?;
            return Ok(RegularizedProfile {
                players,
                iterations: iter,
                residual: current.residual,
            });
        }
        let proposal: Vec<Vec<Vec<f64>>> = x
            .iter()
            .zip(&current.targets)
            .map(|(xi, ti)| {
                xi.iter()
                    .zip(ti)
                    .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (1.0 - delta) * a + delta * b).collect())
                    .collect()
            })
            .collect();
        let next = sweep(game, anchors, types, &proposal)?;
        // slack for rounding once the gap is at the level of floating-point noise
        if next.gap <= current.gap + 1e-14 * (1.0 + current.gap.abs()) {
            x = proposal;
            current = next;
        } else {
            delta *= 0.5;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iters,
        residual: current.residual,
    })
}

/// Total regularized best-response gap, summed over players and β-weighted over types.
pub fn regularized_exploitability(
    game: &NormalFormGame,
    anchors: &[AnchorPolicy],
    profile: &RegularizedProfile,
) -> Result<f64> {
    let types: Vec<TypeDistribution> = profile.players.iter().map(|p| p.types.clone()).collect();
    check_bne_inputs(game, anchors, &types)?;
    let mixtures = profile.mixtures();
    let mut total = 0.0;
    for (i, pl) in profile.players.iter().enumerate() {
        let u = game.action_values(i, &mixtures)?;
        for ((&lambda, &w), x) in pl.types.support().iter().zip(pl.types.weights()).zip(&pl.policies) {
            check_len("policy actions", u.len(), x.len())?;
            let best = sbr_value(&u, &anchors[i], lambda)?;
            let got = regularized_utility(&u, x, &anchors[i], lambda)?;
            total += w * (best - got).max(0.0);
        }
    }
    Ok(total)
}

/// `Σ_i [max_a (A_i x_{−i})(a) − ⟨A_i x_{−i}, x_i⟩]` for a two-player zero-sum game.
pub fn unregularized_exploitability(game: &NormalFormGame, profile: &[Vec<f64>]) -> Result<f64> {
    if !game.is_zero_sum() {
        return Err(Error::NotZeroSum);
    }
    let mut total = 0.0;
    for (i, x) in profile.iter().enumerate() {
        let u = game.action_values(i, profile)?;
        let best = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += best - simplex::dot(&u, x);
    }
    Ok(total.max(0.0))
}

/// `Σ_i Σ_λ β(λ)·(λ + κ_i)·KL(x*_{i,λ} ‖ x_{i,λ})` for per-player, per-type iterates.
pub fn last_iterate_distance(
    iterates: &[Vec<Vec<f64>>],
    equilibrium: &RegularizedProfile,
    kappas: &[f64],
) -> Result<f64> {
    check_len("iterate players", equilibrium.players.len(), iterates.len())?;
    check_len("kappas", equilibrium.players.len(), kappas.len())?;
    let mut total = 0.0;
    for ((pl, xs), &kappa) in equilibrium.players.iter().zip(iterates).zip(kappas) {
        check_len("iterate types", pl.policies.len(), xs.len())?;
        for ((&lambda, &w), (star, x)) in pl
            .types
            .support()
            .iter()
            .zip(pl.types.weights())
            .zip(pl.policies.iter().zip(xs))
        {
            let kl = kl_divergence(star, x)?;
            total += w * scaled(lambda + kappa, kl);
        }
    }
    Ok(total)
}

/// Components of the regret upper bound for one (player, type).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretBound {
    pub min_term: f64,
    pub log_term: f64,
    /// λ·KL(uniform ‖ τ), nonnegative.
    pub rho: f64,
    /// λ·(log n + T̄) with T̄ the mean log-anchor probability; equals −rho.
    pub rho_alt: f64,
    pub value: f64,
}

/// `(U²/4)·min{2 ln T/λ, Tη} + ln n/η + λ·KL(uniform‖τ)`.
pub fn regret_bound(u_bound: f64, t: u64, eta: f64, lambda: f64, anchor: &AnchorPolicy) -> Result<RegretBound> {
    if t < 1 || !(eta > 0.0) || !(lambda > 0.0) || anchor.is_empty() {
        return Err(Error::invalid("the regret bound needs T ≥ 1, η > 0, λ > 0 and n ≥ 1"));
    }
    let n = anchor.len() as f64;
    let tf = t as f64;
    let min_term = u_bound * u_bound / 4.0 * (2.0 * tf.ln() / lambda).min(tf * eta);
    let log_term = n.ln() / eta;
    let mean_log_tau = anchor.log_probs().iter().sum::<f64>() / n;
    let kl_uniform = kl_divergence(&simplex::uniform(anchor.len()), anchor.probs())?;
    let rho = scaled(lambda, kl_uniform);
    let rho_alt = if lambda.is_finite() { lambda * (n.ln() + mean_log_tau) } else { -rho };
    Ok(RegretBound {
        min_term,
        log_term,
        rho,
        rho_alt,
        value: min_term + log_term + rho,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub player: usize,
    pub lambda: f64,
    pub t: u64,
    pub regret: f64,
    pub bound: Option<RegretBound>,
}

impl RegretReport {
    /// Attaches the bound for payoffs bounded by `u_bound` in absolute value and step size η.
    pub fn with_bound(mut self, u_bound: f64, eta: f64, anchor: &AnchorPolicy) -> Result<Self> {
        self.bound = Some(regret_bound(u_bound, self.t, eta, self.lambda, anchor)?);
        Ok(self)
    }

    pub fn within_bound(&self) -> Option<bool> {
        self.bound.as_ref().map(|b| self.regret <= b.value)
    }
}

/// Regularized regret of the type-λ iterates recorded in `trace` against the best fixed
/// policy in hindsight, computed in closed form.
pub fn regularized_regret(trace: &Trace, player: usize, lambda: f64, anchor: &AnchorPolicy) -> Result<RegretReport> {
    if trace.is_empty() {
        return Err(Error::NoIterations);
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("regret is defined for finite λ ≥ 0, got {lambda}")));
    }
    let q = trace.replay_q(player)?;
    check_len("anchor", q.len(), anchor.len())?;
    let t = trace.len() as u64;
    let tf = t as f64;
    let comparator = if lambda == 0.0 {
        tf * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        tf * sbr_value(&q, anchor, lambda)?
    };
    let mut earned = 0.0;
    for row in &trace.rows {
        let rec = row
            .per_player
            .get(player)
            .ok_or_else(|| Error::invalid(format!("player {player} missing from trace")))?;
        let pi = rec
            .policy_by_type
            .iter()
            .find(|tp| tp.lambda == lambda)
            .ok_or_else(|| Error::invalid(format!("λ={lambda} is not a recorded type")))?;
        earned += regularized_utility(&rec.action_utilities, &pi.policy, anchor, lambda)?;
    }
    Ok(RegretReport {
        player,
        lambda,
        t,
        regret: comparator - earned,
        bound: None,
    })
}

/// Backward-induction solution of a two-player zero-sum Markov game: values (terminal row
/// included, always zero) and the per-state regularized equilibria.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovSolution {
    pub values: Vec<Vec<f64>>,
    /// `None` for states unreachable by the backward sweep (none in valid games).
    pub profiles: Vec<Option<RegularizedProfile>>,
}

impl MarkovSolution {
    /// Mixture policies `[state][player]`, for use with `markov::evaluate_profile`.
    pub fn mixture_policies(&self) -> Vec<Vec<Vec<f64>>> {
        self.profiles
            .iter()
            .map(|p| p.as_ref().map(|p| p.mixtures()).unwrap_or_default())
            .collect()
    }
}

/// The normal-form game at `s` with payoffs `r(s, a) + γ·E[V(s')]`.
pub fn continuation_game(game: &TabularMarkovGame, s: usize, values: &[Vec<f64>]) -> Result<NormalFormGame> {
    if game.is_terminal(s) || s > game.state_count() {
        return Err(Error::invalid(format!("state {s} is terminal or out of range")));
    }
    check_len("value rows", game.state_count() + 1, values.len())?;
    let counts = game.action_counts(s).to_vec();
    let n = game.player_count();
    let mut payoffs = vec![Vec::with_capacity(counts.iter().product()); n];
    let mut bound: f64 = 0.0;
    for (j, _) in JointActions::new(&counts).enumerate() {
        let r = game.rewards(s, j);
        for p in 0..n {
            let cont: f64 = game.transitions(s, j).iter().map(|&(t, q)| q * values[t][p]).sum();
            let u = r[p] + game.gamma() * cont;
            if !u.is_finite() {
                return Err(Error::NonFinite { state: s });
            }
            bound = bound.max(u.abs());
            payoffs[p].push(u);
        }
    }
    if game.is_zero_sum() {
        // continuation values of the two players cancel only up to rounding
        let (a, b) = payoffs.split_at_mut(1);
        for (x, y) in a[0].iter().zip(b[0].iter_mut()) {
            if (x + *y).abs() > 1e-9 {
                return Err(Error::NotZeroSum.at_state(s));
            }
            *y = -x;
        }
    }
    NormalFormGame::new(counts, payoffs, bound, game.is_zero_sum())
}

/// Solves each state's regularized equilibrium from the leaves up.
pub fn solve_markov_backward(
    game: &TabularMarkovGame,
    anchors: &StateAnchors,
    types: &[TypeDistribution],
    opts: &BneOptions,
) -> Result<MarkovSolution> {
    if !game.is_zero_sum() || game.player_count() != 2 {
        return Err(Error::NotZeroSum);
    }
    crate::markov::check_anchors(game, anchors)?;
    let mut values = vec![vec![0.0; 2]; game.state_count() + 1];
    let mut profiles = vec![None; game.state_count()];
    for &s in game.backward_order() {
        let stage = continuation_game(game, s, &values)?;
        let profile = solve_regularized_bne(&stage, &anchors[s], types, opts).map_err(|e| e.at_state(s))?;
        let mix = profile.mixtures();
        for p in 0..2 {
            values[s][p] = stage.expected_utility(&mix, p)?;
        }
        profiles[s] = Some(profile);
    }
    Ok(MarkovSolution { values, profiles })
}
