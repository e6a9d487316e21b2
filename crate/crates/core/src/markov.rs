//! Finite-horizon simultaneous-move Markov games.
//!
//! Non-terminal states are numbered `0..state_count()`; index `state_count()` is the
//! absorbing terminal state with zero reward. The transition graph must be acyclic and no
//! path may take more than `horizon` decisions, which is what makes backward induction over
//! states (rather than over `(state, depth)` pairs) exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::game::{AnchorPolicy, JointActions, NormalFormGame};

const PROB_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovState {
    pub action_counts: Vec<usize>,
    /// Per flattened joint action: successor distribution as `(state, probability)` pairs.
    pub transitions: Vec<Vec<(usize, f64)>>,
    /// Per flattened joint action: one reward per player.
    pub rewards: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarkovDoc", into = "MarkovDoc")]
pub struct TabularMarkovGame {
    players: usize,
    states: Vec<MarkovState>,
    gamma: f64,
    horizon: usize,
    zero_sum: bool,
    // states ordered so that every successor comes before its predecessors
    backward: Vec<usize>,
    reward_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct MarkovDoc {
    players: usize,
    states: Vec<MarkovState>,
    gamma: f64,
    horizon: usize,
    zero_sum: bool,
}

impl TryFrom<MarkovDoc> for TabularMarkovGame {
    type Error = Error;

    fn try_from(d: MarkovDoc) -> Result<Self> {
        TabularMarkovGame::new(d.players, d.states, d.gamma, d.horizon, d.zero_sum)
    }
}

impl From<TabularMarkovGame> for MarkovDoc {
    fn from(g: TabularMarkovGame) -> Self {
        MarkovDoc {
            players: g.players,
            states: g.states,
            gamma: g.gamma,
            horizon: g.horizon,
            zero_sum: g.zero_sum,
        }
    }
}

impl TabularMarkovGame {
    pub fn new(
        players: usize,
        states: Vec<MarkovState>,
        gamma: f64,
        horizon: usize,
        zero_sum: bool,
    ) -> Result<Self> {
        if players < 2 {
            return Err(Error::invalid("a Markov game needs at least two players"));
        }
        if states.is_empty() {
            return Err(Error::invalid("a Markov game needs at least one non-terminal state"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid(format!("discount {gamma} outside [0, 1]")));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if zero_sum && players != 2 {
            return Err(Error::invalid("zero-sum Markov games must have two players"));
        }
        let terminal = states.len();
        let mut reward_bound: f64 = 0.0;
        for (s, st) in states.iter().enumerate() {
            let ctx = |e: Error| e.at_state(s);
            check_len("action counts", players, st.action_counts.len()).map_err(ctx)?;
            if st.action_counts.iter().any(|&n| n == 0) {
                return Err(ctx(Error::invalid("empty action set")));
            }
            let joint: usize = st.action_counts.iter().product();
            check_len("transition rows", joint, st.transitions.len()).map_err(ctx)?;
            check_len("reward rows", joint, st.rewards.len()).map_err(ctx)?;
            for row in &st.transitions {
                let mut total = 0.0;
                for &(next, p) in row {
                    if next > terminal || !(p >= 0.0) || !p.is_finite() {
                        return Err(ctx(Error::invalid(format!("bad transition ({next}, {p})"))));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(ctx(Error::invalid(format!("transition mass {total} ≠ 1"))));
                }
            }
            for r in &st.rewards {
                check_len("reward vector", players, r.len()).map_err(ctx)?;
                if r.iter().any(|x| !x.is_finite()) {
                    return Err(ctx(Error::invalid("non-finite reward")));
                }
                if zero_sum && (r[0] + r[1]).abs() > PROB_TOL {
                    return Err(ctx(Error::NotZeroSum));
                }
                reward_bound = r.iter().fold(reward_bound, |m, x| m.max(x.abs()));
            }
        }
        let (backward, depth) = backward_order(&states)?;
        if depth > horizon {
            return Err(Error::invalid(format!(
                "longest path takes {depth} decisions, more than the horizon {horizon}"
            )));
        }
        Ok(TabularMarkovGame {
            players,
            states,
            gamma,
            horizon,
            zero_sum,
            backward,
            reward_bound,
        })
    }

    pub fn player_count(&self) -> usize {
        self.players
    }

    /// Number of non-terminal states.
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn terminal(&self) -> usize {
        self.states.len()
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s == self.states.len()
    }

    pub fn initial_state(&self) -> usize {
        0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_zero_sum(&self) -> bool {
        self.zero_sum
    }

    /// Largest absolute one-step reward.
    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    /// Bound on any discounted return: `U(1 − γ^H)/(1 − γ)`, or `U·H` when γ = 1.
    pub fn value_bound(&self) -> f64 {
        let h = self.horizon as f64;
        if self.gamma == 1.0 {
            self.reward_bound * h
        } else {
            self.reward_bound * (1.0 - self.gamma.powf(h)) / (1.0 - self.gamma)
        }
    }

    pub fn state(&self, s: usize) -> &MarkovState {
        &self.states[s]
    }

    pub fn action_counts(&self, s: usize) -> &[usize] {
        &self.states[s].action_counts
    }

    pub fn joint_index(&self, s: usize, joint: &[usize]) -> usize {
        let counts = &self.states[s].action_counts;
        joint
            .iter()
            .zip(counts)
            .fold(0, |acc, (&a, &n)| acc * n + a)
    }

    pub fn transitions(&self, s: usize, joint: usize) -> &[(usize, f64)] {
        &self.states[s].transitions[joint]
    }

    pub fn rewards(&self, s: usize, joint: usize) -> &[f64] {
        &self.states[s].rewards[joint]
    }

    /// Non-terminal states, successors before predecessors.
    pub fn backward_order(&self) -> &[usize] {
        &self.backward
    }

    /// The one-step reward game at `s`.
    pub fn reward_game(&self, s: usize) -> Result<NormalFormGame> {
        let st = &self.states[s];
        let mut idx = 0;
        NormalFormGame::from_fn(st.action_counts.clone(), self.reward_bound, self.zero_sum, |_| {
            let r = st.rewards[idx].clone();
            idx += 1;
            r
        })
    }
}

fn backward_order(states: &[MarkovState]) -> Result<(Vec<usize>, usize)> {
    let n = states.len();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut mark = vec![0u8; n];
    let mut depth = vec![0usize; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if mark[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(root, successors(&states[root], n))];
        mark[root] = 1;
        while let Some((s, pending)) = stack.last_mut() {
            if let Some(next) = pending.pop() {
                match mark[next] {
                    0 => {
                        mark[next] = 1;
                        let succ = successors(&states[next], n);
                        stack.push((next, succ));
                    }
                    1 => return Err(Error::invalid(format!("transition cycle through state {next}"))),
                    _ => {}
                }
            } else {
                let s = *s;
                depth[s] = 1 + successors(&states[s], n)
                    .into_iter()
                    .map(|t| depth[t])
                    .max()
                    .unwrap_or(0);
                mark[s] = 2;
                order.push(s);
                stack.pop();
            }
        }
    }
    Ok((order, depth.into_iter().max().unwrap_or(0)))
}

fn successors(st: &MarkovState, terminal: usize) -> Vec<usize> {
    let mut out: Vec<usize> = st
        .transitions
        .iter()
        .flatten()
        .filter(|(t, p)| *t != terminal && *p > 0.0)
        .map(|(t, _)| *t)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// The stage game repeated `horizon` times; state `k` is round `k`.
pub fn make_repeated_markov(stage: &NormalFormGame, horizon: usize, gamma: f64) -> Result<TabularMarkovGame> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let joint = stage.joint_count();
    let states = (0..horizon)
        .map(|k| MarkovState {
            action_counts: stage.action_counts().to_vec(),
            transitions: vec![vec![(k + 1, 1.0)]; joint],
            rewards: (0..joint)
                .map(|j| (0..stage.player_count()).map(|p| stage.payoff_table(p)[j]).collect())
                .collect(),
        })
        .collect();
    TabularMarkovGame::new(stage.player_count(), states, gamma, horizon, stage.is_zero_sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMarkovParams {
    pub seed: u64,
    pub state_count: usize,
    pub player_count: usize,
    pub actions_per_player: usize,
    pub horizon: usize,
    pub gamma: f64,
    #[serde(default)]
    pub zero_sum: bool,
    #[serde(default = "default_reward_bound")]
    pub reward_bound: f64,
}

fn default_reward_bound() -> f64 {
    1.0
}

/// Random layered game: state 0 is layer 0, the remaining states are dealt round-robin
/// into layers `1..horizon`, and each state moves only to states of the next layer (the
/// last layer moves to the terminal state).
pub fn make_random_markov(p: &RandomMarkovParams) -> Result<TabularMarkovGame> {
    if p.state_count == 0 || p.player_count < 2 || p.actions_per_player == 0 || p.horizon == 0 {
        return Err(Error::invalid("random Markov sizes must be positive (≥ 2 players)"));
    }
    if p.zero_sum && p.player_count != 2 {
        return Err(Error::invalid("zero-sum Markov fixtures have two players"));
    }
    if !(p.reward_bound > 0.0 && p.reward_bound.is_finite()) {
        return Err(Error::invalid("reward_bound must be positive"));
    }
    let layer_of = |s: usize| {
        if s == 0 || p.horizon == 1 {
            0
        } else {
            1 + (s - 1) % (p.horizon - 1)
        }
    };
    let mut layers: Vec<Vec<usize>> = vec![Vec::new(); p.horizon];
    for s in 0..p.state_count {
        layers[layer_of(s)].push(s);
    }
    let terminal = p.state_count;
    let counts = vec![p.actions_per_player; p.player_count];
    let joint: usize = counts.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut states = Vec::with_capacity(p.state_count);
    for s in 0..p.state_count {
        let next_layer = layers.get(layer_of(s) + 1).filter(|l| !l.is_empty());
        let mut rewards = Vec::with_capacity(joint);
        let mut transitions = Vec::with_capacity(joint);
        for _ in 0..joint {
            let r: Vec<f64> = if p.zero_sum {
                let u = p.reward_bound * (2.0 * rng.gen::<f64>() - 1.0);
                vec![u, -u]
            } else {
                (0..p.player_count)
                    .map(|_| p.reward_bound * (2.0 * rng.gen::<f64>() - 1.0))
                    .collect()
            };
            rewards.push(r);
            let row = match next_layer {
                None => vec![(terminal, 1.0)],
                Some(layer) => {
                    let w: Vec<f64> = layer.iter().map(|_| 0.05 + rng.gen::<f64>()).collect();
                    let total: f64 = w.iter().sum();
                    layer.iter().zip(w).map(|(&t, x)| (t, x / total)).collect()
                }
            };
            transitions.push(row);
        }
        states.push(MarkovState {
            action_counts: counts.clone(),
            transitions,
            rewards,
        });
    }
    TabularMarkovGame::new(p.player_count, states, p.gamma, p.horizon, p.zero_sum)
}

/// Per-state, per-player anchors.
pub type StateAnchors = Vec<Vec<AnchorPolicy>>;

pub fn uniform_anchors(game: &TabularMarkovGame) -> StateAnchors {
    (0..game.state_count())
        .map(|s| game.action_counts(s).iter().map(|&n| AnchorPolicy::uniform(n)).collect())
        .collect()
}

/// Random anchors drawn reproducibly from `seed` (entries bounded away from zero).
pub fn random_anchors(game: &TabularMarkovGame, seed: u64) -> StateAnchors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..game.state_count())
        .map(|s| {
            game.action_counts(s)
                .iter()
                .map(|&n| {
                    let w: Vec<f64> = (0..n).map(|_| 0.1 + rng.gen::<f64>()).collect();
                    let total: f64 = w.iter().sum();
                    AnchorPolicy::new(w.into_iter().map(|x| x / total).collect())
                        .expect("normalized weights form an anchor")
                })
                .collect()
        })
        .collect()
}

pub fn check_anchors(game: &TabularMarkovGame, anchors: &StateAnchors) -> Result<()> {
    check_len("anchor states", game.state_count(), anchors.len())?;
    for (s, per_state) in anchors.iter().enumerate() {
        check_len("anchor players", game.player_count(), per_state.len()).map_err(|e| e.at_state(s))?;
        for (a, &n) in per_state.iter().zip(game.action_counts(s)) {
            check_len("anchor actions", n, a.len()).map_err(|e| e.at_state(s))?;
        }
    }
    Ok(())
}

/// Exact per-player values of a stationary profile `policies[state][player]`, by backward
/// induction over the acyclic transition graph. Index `state_count()` (terminal) is zero.
pub fn evaluate_profile(game: &TabularMarkovGame, policies: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    check_len("policy states", game.state_count(), policies.len())?;
    let n = game.player_count();
    let mut values = vec![vec![0.0; n]; game.state_count() + 1];
    for &s in game.backward_order() {
        let counts = game.action_counts(s);
        let mut v = vec![0.0; n];
        for (j, joint) in JointActions::new(counts).enumerate() {
            let w: f64 = joint.iter().enumerate().map(|(p, &a)| policies[s][p][a]).product();
            if w == 0.0 {
                continue;
            }
            let r = game.rewards(s, j);
            for p in 0..n {
                let cont: f64 = game
                    .transitions(s, j)
                    .iter()
                    .map(|&(t, q)| q * values[t][p])
                    .sum();
                v[p] += w * (r[p] + game.gamma() * cont);
            }
        }
        values[s] = v;
    }
    Ok(values)
}
