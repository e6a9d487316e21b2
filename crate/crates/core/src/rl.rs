//! Tabular RL-DiL-piKL self-play: DiL-piKL search at every visited state, NashV value
//! updates, a moving-average policy table and evaluation against backward induction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::game::{AnchorPolicy, JointActions, NormalFormGame};
use crate::learners::{self, Feedback, LearnerOptions, LearnerState, TemperatureSchedule, TypeDistribution};
use crate::markov::{check_anchors, StateAnchors, TabularMarkovGame};
use crate::oracle::{self, MarkovSolution};
use crate::serde_ext;
use crate::simplex;

/// Per-state value estimates; the last row is the terminal state and stays zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl ValueTable {
    pub fn zeros(game: &TabularMarkovGame) -> Self {
        ValueTable {
            values: vec![vec![0.0; game.player_count()]; game.state_count() + 1],
            gamma: game.gamma(),
        }
    }

    pub fn get(&self, s: usize) -> &[f64] {
        &self.values[s]
    }
}

/// Per-(state, player) policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub policies: Vec<Vec<Vec<f64>>>,
    /// Moving-average step toward each new search policy.
    pub step: f64,
}

impl PolicyTable {
    pub fn from_anchors(anchors: &StateAnchors, step: f64) -> Self {
        PolicyTable {
            policies: anchors
                .iter()
                .map(|st| st.iter().map(|a| a.probs().to_vec()).collect())
                .collect(),
            step,
        }
    }

    pub fn get(&self, s: usize, player: usize) -> &[f64] {
        &self.policies[s][player]
    }

    pub fn update(&mut self, s: usize, sigma: &[Vec<f64>]) {
        let step = self.step;
        for (p, target) in self.policies[s].iter_mut().zip(sigma) {
            for (x, t) in p.iter_mut().zip(target) {
                *x = (1.0 - step) * *x + step * t;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant { alpha: f64 },
    /// α = 1/n on the n-th visit to a state.
    Harmonic,
}

impl AlphaSchedule {
    pub fn alpha(&self, visits: u64) -> f64 {
        match *self {
            AlphaSchedule::Constant { alpha } => alpha,
            AlphaSchedule::Harmonic => 1.0 / visits.max(1) as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Standard,
    /// The proposal table used for top-k stays at its initialization.
    Npu,
    /// `player` searches with λ = 0; everyone else plays their anchor.
    BestResponse { player: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub search_iterations: u64,
    /// One type distribution per player.
    pub types: Vec<TypeDistribution>,
    /// When set, exploration samples from the average policy of this type instead of σ.
    #[serde(with = "serde_ext::extended_opt")]
    pub act_lambda: Option<f64>,
    pub schedule: TemperatureSchedule,
    pub feedback: Feedback,
    pub epsilon: f64,
    pub episodes: u64,
    pub alpha: AlphaSchedule,
    pub policy_step: f64,
    pub top_k: Option<usize>,
    pub mode: TrainMode,
    pub seed: u64,
    /// Metrics are recorded every this many episodes (and after the last one).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            search_iterations: 256,
            types: vec![TypeDistribution::singleton(0.1); 2],
            act_lambda: None,
            schedule: TemperatureSchedule::adaptive(),
            feedback: Feedback::Expected,
            epsilon: 0.1,
            episodes: 1000,
            alpha: AlphaSchedule::Constant { alpha: 0.1 },
            policy_step: 0.1,
            top_k: None,
            mode: TrainMode::Standard,
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, players: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("ε must lie in [0, 1], got {}", self.epsilon)));
        }
        if self.search_iterations == 0 {
            return Err(Error::invalid("search needs at least one iteration"));
        }
        if !(self.policy_step >= 0.0 && self.policy_step <= 1.0) {
            return Err(Error::invalid("policy step must lie in [0, 1]"));
        }
        if let AlphaSchedule::Constant { alpha } = self.alpha {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::invalid("α must lie in [0, 1]"));
            }
        }
        if self.top_k == Some(0) {
            return Err(Error::invalid("top-k must keep at least one action"));
        }
        if let TrainMode::BestResponse { player } = self.mode {
            if player >= players {
                return Err(Error::invalid(format!("distinguished player {player} out of range")));
            }
        } else {
            check_len("type distributions", players, self.types.len())?;
        }
        self.schedule.validate()
    }

    /// Type distributions actually searched with, after the mode override.
    pub fn effective_types(&self, players: usize) -> Vec<TypeDistribution> {
        match self.mode {
            TrainMode::BestResponse { player } => (0..players)
                .map(|i| TypeDistribution::singleton(if i == player { 0.0 } else { f64::INFINITY }))
                .collect(),
            _ => self.types.clone(),
        }
    }
}

/// Stage game at `s` under the current value estimates.
pub fn build_stage_game(game: &TabularMarkovGame, s: usize, values: &ValueTable) -> Result<NormalFormGame> {
    oracle::continuation_game(game, s, &values.values)
}

/// `r(s, a) + γ·E[V(s')]` averaged over the product policy `sigma`.
pub fn stage_target(game: &TabularMarkovGame, s: usize, values: &ValueTable, sigma: &[Vec<f64>]) -> Result<Vec<f64>> {
    if game.is_terminal(s) {
        return Err(Error::invalid("terminal state has no stage target"));
    }
    let counts = game.action_counts(s);
    check_len("σ players", counts.len(), sigma.len())?;
    for (p, &n) in sigma.iter().zip(counts) {
        check_len("σ actions", n, p.len())?;
    }
    let n = game.player_count();
    let mut target = vec![0.0; n];
    for (j, joint) in JointActions::new(counts).enumerate() {
        let w: f64 = joint.iter().enumerate().map(|(p, &a)| sigma[p][a]).product();
        if w == 0.0 {
            continue;
        }
        let r = game.rewards(s, j);
        for (p, t) in target.iter_mut().enumerate() {
            let cont: f64 = game.transitions(s, j).iter().map(|&(s2, q)| q * values.values[s2][p]).sum();
            *t += w * (r[p] + game.gamma() * cont);
        }
    }
    Ok(target)
}

/// `V(s) ← (1 − α)V(s) + α·target` with the target taken under σ.
pub fn nashv_update(
    values: &mut ValueTable,
    s: usize,
    sigma: &[Vec<f64>],
    game: &TabularMarkovGame,
    alpha: f64,
) -> Result<()> {
    let target = stage_target(game, s, values, sigma)?;
    for (v, t) in values.values[s].iter_mut().zip(&target) {
        *v = (1.0 - alpha) * *v + alpha * t;
        if !v.is_finite() {
            return Err(Error::NonFinite { state: s });
        }
    }
    Ok(())
}

/// Indices of the `k` most probable actions (ties by lower index), returned in ascending order.
pub fn top_k(policy: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..policy.len()).collect();
    idx.sort_by(|&a, &b| policy[b].total_cmp(&policy[a]));
    idx.truncate(k.max(1));
    idx.sort_unstable();
    idx
}

/// Result of one DiL-piKL search on a (possibly restricted) stage game, expanded back to
/// the full action sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// β-mixture of per-type average policies, per player.
    pub sigma: Vec<Vec<f64>>,
    /// Per player, per type average policies.
    pub by_type: Vec<Vec<Vec<f64>>>,
}

fn expand(policy: &[f64], kept: &[usize], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (&a, &p) in kept.iter().zip(policy) {
        out[a] = p;
    }
    out
}

/// Runs DiL-piKL for `iterations` on `stage` restricted to `kept`.
#[allow(clippy::too_many_arguments)]
pub fn search<R: Rng + ?Sized>(
    stage: &NormalFormGame,
    anchors: &[AnchorPolicy],
    kept: &[Vec<usize>],
    types: &[TypeDistribution],
    schedule: TemperatureSchedule,
    iterations: u64,
    feedback: Feedback,
    rng: &mut R,
) -> Result<SearchResult> {
    let sub = stage.restrict(kept)?;
    let mut learners_ = Vec::with_capacity(kept.len());
    for (i, keep) in kept.iter().enumerate() {
        learners_.push(LearnerState::new(
            i,
            keep.len(),
            anchors[i].restrict(keep)?,
            types[i].clone(),
            schedule,
            LearnerOptions::default(),
        )?);
    }
    learners::run(&mut learners_, &sub, iterations, feedback, rng, false)?;
    let mut sigma = Vec::with_capacity(kept.len());
    let mut by_type = Vec::with_capacity(kept.len());
    for (i, l) in learners_.iter().enumerate() {
        let n = stage.action_count(i);
        sigma.push(expand(&l.average_mixture()?, &kept[i], n));
        by_type.push(
            (0..l.types().len())
                .map(|k| l.average_policy_at(k).map(|p| expand(&p, &kept[i], n)))
                .collect::<Result<_>>()?,
        );
    }
    Ok(SearchResult { sigma, by_type })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub state: usize,
    pub kept: Vec<Vec<usize>>,
    pub sigma: Vec<Vec<f64>>,
    pub joint: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: u64,
    pub max_value_error: f64,
    pub mean_value_error: f64,
    pub mean_policy_kl: f64,
    pub mean_exploitability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub max_abs_value_error: f64,
    pub mean_abs_value_error: f64,
    /// Σ_i KL(policy_i ‖ σ*_i) per state.
    pub policy_kl: Vec<f64>,
    /// Unregularized exploitability of the policy table in each oracle stage game.
    pub exploitability: Vec<f64>,
}

/// Compares a value table and policy table with a backward-induction solution.
pub fn evaluate_vs_oracle(
    game: &TabularMarkovGame,
    values: &ValueTable,
    policy: &PolicyTable,
    oracle_solution: &MarkovSolution,
) -> Result<OracleMetrics> {
    let states = game.state_count();
    check_len("value rows", states + 1, values.values.len())?;
    check_len("oracle value rows", states + 1, oracle_solution.values.len())?;
    check_len("policy states", states, policy.policies.len())?;
    let mut max_err: f64 = 0.0;
    let mut sum_err = 0.0;
    let mut count = 0usize;
    let mut policy_kl = Vec::with_capacity(states);
    let mut exploitability = Vec::with_capacity(states);
    for s in 0..states {
        for (v, w) in values.values[s].iter().zip(&oracle_solution.values[s]) {
            let e = (v - w).abs();
            max_err = max_err.max(e);
            sum_err += e;
            count += 1;
        }
        let prof = oracle_solution.profiles[s]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("oracle has no profile at state {s}")))?;
        let mut kl = 0.0;
        for (p, star) in policy.policies[s].iter().zip(prof.mixtures()) {
            kl += oracle::kl_divergence(p, &star)?;
        }
        policy_kl.push(kl);
        let stage = oracle::continuation_game(game, s, &oracle_solution.values)?;
        exploitability.push(oracle::unregularized_exploitability(&stage, &policy.policies[s])?);
    }
    Ok(OracleMetrics {
        max_abs_value_error: max_err,
        mean_abs_value_error: sum_err / count.max(1) as f64,
        policy_kl,
        exploitability,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub episode: u64,
    pub values: ValueTable,
    pub policy: PolicyTable,
    pub visits: Vec<u64>,
}

/// Training state for one run.
#[derive(Clone, Debug)]
pub struct Trainer<'a> {
    game: &'a TabularMarkovGame,
    anchors: &'a StateAnchors,
    config: TrainConfig,
    types: Vec<TypeDistribution>,
    values: ValueTable,
    policy: PolicyTable,
    proposal: PolicyTable,
    visits: Vec<u64>,
    episodes: u64,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(game: &'a TabularMarkovGame, anchors: &'a StateAnchors, config: TrainConfig) -> Result<Self> {
        check_anchors(game, anchors)?;
        config.validate(game.player_count())?;
        let types = config.effective_types(game.player_count());
        let policy = PolicyTable::from_anchors(anchors, config.policy_step);
        Ok(Trainer {
            game,
            anchors,
            types,
            values: ValueTable::zeros(game),
            proposal: policy.clone(),
            policy,
            visits: vec![0; game.state_count()],
            episodes: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn values(&self) -> &ValueTable {
        &self.values
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    /// The table top-k restrictions are read from (frozen in NPU mode).
    pub fn proposal(&self) -> &PolicyTable {
        match self.config.mode {
            TrainMode::Npu => &self.proposal,
            _ => &self.policy,
        }
    }

    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            episode: self.episodes,
            values: self.values.clone(),
            policy: self.policy.clone(),
            visits: self.visits.clone(),
        }
    }

    /// Action subsets searched at `s` for the current proposal table.
    pub fn kept_actions(&self, s: usize) -> Vec<Vec<usize>> {
        let counts = self.game.action_counts(s);
        (0..counts.len())
            .map(|i| match self.config.top_k {
                Some(k) if k < counts[i] => top_k(self.proposal().get(s, i), k),
                _ => (0..counts[i]).collect(),
            })
            .collect()
    }

    /// Plays one self-play episode from the initial state to the terminal state.
    pub fn run_episode(&mut self) -> Result<Vec<EpisodeStep>> {
        let game = self.game;
        let mut s = game.initial_state();
        let mut steps = Vec::new();
        while !game.is_terminal(s) {
            let step = self.visit(s).map_err(|e| e.at_state(s))?;
            let j = game.joint_index(s, &step.joint);
            let next = game.transitions(s, j);
            let probs: Vec<f64> = next.iter().map(|&(_, q)| q).collect();
            s = next[simplex::sample_index(&probs, &mut self.rng)].0;
            steps.push(step);
        }
        self.episodes += 1;
        Ok(steps)
    }

    fn visit(&mut self, s: usize) -> Result<EpisodeStep> {
        let game = self.game;
        let stage = build_stage_game(game, s, &self.values)?;
        let kept = self.kept_actions(s);
        let result = search(
            &stage,
            &self.anchors[s],
            &kept,
            &self.types,
            self.config.schedule,
            self.config.search_iterations,
            self.config.feedback,
            &mut self.rng,
        )?;
        self.visits[s] += 1;
        let alpha = self.config.alpha.alpha(self.visits[s]);
        nashv_update(&mut self.values, s, &result.sigma, game, alpha)?;
        self.policy.update(s, &result.sigma);

        let mut joint = Vec::with_capacity(kept.len());
        for i in 0..kept.len() {
            let explore = self.config.epsilon > 0.0 && self.rng.gen::<f64>() < self.config.epsilon;
            let a = if explore {
                self.rng.gen_range(0..game.action_counts(s)[i])
            } else {
                let play = match self.config.act_lambda.and_then(|l| self.types[i].index_of(l)) {
                    Some(k) => &result.by_type[i][k],
                    None => &result.sigma[i],
                };
                simplex::sample_index(play, &mut self.rng)
            };
            joint.push(a);
        }
        Ok(EpisodeStep {
            state: s,
            kept,
            sigma: result.sigma,
            joint,
            value: self.values.values[s].clone(),
        })
    }

    /// Metrics for the current tables; NaN when no oracle is available.
    pub fn metrics(&self, oracle_solution: Option<&MarkovSolution>) -> Result<MetricsRow> {
        let mut row = MetricsRow {
            episode: self.episodes,
            max_value_error: f64::NAN,
            mean_value_error: f64::NAN,
            mean_policy_kl: f64::NAN,
            mean_exploitability: f64::NAN,
        };
        if let Some(sol) = oracle_solution {
            let m = evaluate_vs_oracle(self.game, &self.values, &self.policy, sol)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            row.max_value_error = m.max_abs_value_error;
            row.mean_value_error = m.mean_abs_value_error;
            row.mean_policy_kl = mean(&m.policy_kl);
            row.mean_exploitability = mean(&m.exploitability);
        }
        Ok(row)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub values: ValueTable,
    pub policy: PolicyTable,
    pub visits: Vec<u64>,
    pub metrics: Vec<MetricsRow>,
}

/// Runs `config.episodes` episodes, recording metrics at episode 0, every checkpoint and
/// at the end.
pub fn train(
    game: &TabularMarkovGame,
    anchors: &StateAnchors,
    config: TrainConfig,
    oracle_solution: Option<&MarkovSolution>,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(game, anchors, config)?;
    let episodes = trainer.config().episodes;
    let every = trainer.config().checkpoint_every.max(1);
    let mut metrics = vec![trainer.metrics(oracle_solution)?];
    for e in 1..=episodes {
        trainer.run_episode()?;
        if e % every == 0 || e == episodes {
            metrics.push(trainer.metrics(oracle_solution)?);
        }
    }
    Ok(TrainOutput {
        values: trainer.values,
        policy: trainer.policy,
        visits: trainer.visits,
        metrics,
    })
}
