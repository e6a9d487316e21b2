//! Normal-form games, anchor policies and sum-of-squares scoring.
//!
//! Joint actions are flattened row-major with player 0 most significant, so for a
//! 2×3 game the joint action `(a0, a1)` lives at index `a0 * 3 + a1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::simplex;

/// Probability floor applied to anchors so that `log τ` is always finite.
pub const ANCHOR_FLOOR: f64 = 1e-12;

const ZERO_SUM_TOL: f64 = 1e-12;

/// Names accepted by [`make_builtin_game`].
pub const BUILTIN_GAMES: [&str; 4] = [
    "matching_pennies",
    "rock_paper_scissors",
    "random_zero_sum",
    "random_general_sum",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameDoc", into = "GameDoc")]
pub struct NormalFormGame {
    action_counts: Vec<usize>,
    strides: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
    payoff_bound: f64,
    zero_sum: bool,
}

#[derive(Serialize, Deserialize)]
struct GameDoc {
    players: usize,
    action_counts: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
    payoff_bound: f64,
    zero_sum: bool,
}

impl TryFrom<GameDoc> for NormalFormGame {
    type Error = Error;

    fn try_from(doc: GameDoc) -> Result<Self> {
        check_len("player count", doc.players, doc.action_counts.len())?;
        NormalFormGame::new(doc.action_counts, doc.payoffs, doc.payoff_bound, doc.zero_sum)
    }
}

impl From<NormalFormGame> for GameDoc {
    fn from(g: NormalFormGame) -> Self {
        GameDoc {
            players: g.action_counts.len(),
            action_counts: g.action_counts,
            payoffs: g.payoffs,
            payoff_bound: g.payoff_bound,
            zero_sum: g.zero_sum,
        }
    }
}

impl NormalFormGame {
    /// Builds a game from player-major payoff tables indexed by flattened joint action.
    pub fn new(
        action_counts: Vec<usize>,
        payoffs: Vec<Vec<f64>>,
        payoff_bound: f64,
        zero_sum: bool,
    ) -> Result<Self> {
        if action_counts.len() < 2 {
            return Err(Error::invalid("a game needs at least two players"));
        }
        if action_counts.iter().any(|&n| n == 0) {
            return Err(Error::invalid("every player needs at least one action"));
        }
        if !(payoff_bound >= 0.0 && payoff_bound.is_finite()) {
            return Err(Error::invalid(format!("payoff bound {payoff_bound} must be finite and ≥ 0")));
        }
        let strides = strides_for(&action_counts);
        let joint: usize = action_counts.iter().product();
        check_len("payoff tables", action_counts.len(), payoffs.len())?;
        for table in &payoffs {
            check_len("joint actions in payoff table", joint, table.len())?;
            for &u in table {
                if !u.is_finite() || u.abs() > payoff_bound {
                    return Err(Error::invalid(format!(
                        "payoff {u} exceeds the declared bound {payoff_bound}"
                    )));
                }
            }
        }
        if zero_sum {
            if action_counts.len() != 2 {
                return Err(Error::invalid("zero-sum games must have exactly two players"));
            }
            if payoffs[0]
                .iter()
                .zip(&payoffs[1])
                .any(|(a, b)| (a + b).abs() > ZERO_SUM_TOL)
            {
                return Err(Error::NotZeroSum);
            }
        }
        Ok(NormalFormGame {
            action_counts,
            strides,
            payoffs,
            payoff_bound,
            zero_sum,
        })
    }

    /// Builds a game by evaluating `f` on every joint action; `f` returns one payoff per player.
    pub fn from_fn(
        action_counts: Vec<usize>,
        payoff_bound: f64,
        zero_sum: bool,
        mut f: impl FnMut(&[usize]) -> Vec<f64>,
    ) -> Result<Self> {
        let n = action_counts.len();
        let mut payoffs = vec![Vec::new(); n];
        for joint in JointActions::new(&action_counts) {
            let u = f(&joint);
            check_len("payoff vector", n, u.len())?;
            for (table, x) in payoffs.iter_mut().zip(u) {
                table.push(x);
            }
        }
        Self::new(action_counts, payoffs, payoff_bound, zero_sum)
    }

    pub fn player_count(&self) -> usize {
        self.action_counts.len()
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn action_count(&self, player: usize) -> usize {
        self.action_counts[player]
    }

    pub fn joint_count(&self) -> usize {
        self.payoffs[0].len()
    }

    pub fn payoff_bound(&self) -> f64 {
        self.payoff_bound
    }

    pub fn is_zero_sum(&self) -> bool {
        self.zero_sum
    }

    pub fn payoff_table(&self, player: usize) -> &[f64] {
        &self.payoffs[player]
    }

    pub fn joint_index(&self, joint: &[usize]) -> usize {
        joint.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let a = index / s;
                index %= s;
                a
            })
            .collect()
    }

    pub fn payoff(&self, player: usize, joint: &[usize]) -> f64 {
        self.payoffs[player][self.joint_index(joint)]
    }

    pub fn payoff_vector(&self, joint: &[usize]) -> Vec<f64> {
        let idx = self.joint_index(joint);
        self.payoffs.iter().map(|t| t[idx]).collect()
    }

    /// `u_i(a, a_{-i})` for every own action `a`, holding the others' entries of `joint` fixed.
    pub fn deviation_payoffs(&self, player: usize, joint: &[usize]) -> Vec<f64> {
        let base = self.joint_index(joint) - joint[player] * self.strides[player];
        (0..self.action_counts[player])
            .map(|a| self.payoffs[player][base + a * self.strides[player]])
            .collect()
    }

    /// Expected payoff of each own action when the other players follow `profile`.
    /// `profile[player]` is ignored.
    pub fn action_values(&self, player: usize, profile: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_profile(profile)?;
        let mut out = vec![0.0; self.action_counts[player]];
        let table = &self.payoffs[player];
        for (idx, joint) in JointActions::new(&self.action_counts).enumerate() {
            let mut w = 1.0;
            for (j, &a) in joint.iter().enumerate() {
                if j != player {
                    w *= profile[j][a];
                }
            }
            if w != 0.0 {
                out[joint[player]] += w * table[idx];
            }
        }
        Ok(out)
    }

    /// Σ over joint actions of ∏ policy probabilities × payoff of `player`.
    pub fn expected_utility(&self, profile: &[Vec<f64>], player: usize) -> Result<f64> {
        if player >= self.player_count() {
            return Err(Error::invalid(format!("player {player} out of range")));
        }
        let values = self.action_values(player, profile)?;
        Ok(simplex::dot(&values, &profile[player]))
    }

    fn check_profile(&self, profile: &[Vec<f64>]) -> Result<()> {
        check_len("profile players", self.player_count(), profile.len())?;
        for (p, &n) in profile.iter().zip(&self.action_counts) {
            check_len("policy length", n, p.len())?;
        }
        Ok(())
    }

    /// Subgame keeping only the listed actions for each player (in the given order).
    pub fn restrict(&self, keep: &[Vec<usize>]) -> Result<NormalFormGame> {
        check_len("restriction players", self.player_count(), keep.len())?;
        for (k, &n) in keep.iter().zip(&self.action_counts) {
            if k.is_empty() || k.iter().any(|&a| a >= n) {
                return Err(Error::invalid("restriction must keep valid, non-empty action sets"));
            }
        }
        let counts: Vec<usize> = keep.iter().map(Vec::len).collect();
        let mut full = vec![0; self.player_count()];
        NormalFormGame::from_fn(counts, self.payoff_bound, self.zero_sum, |sub| {
            for (j, &a) in sub.iter().enumerate() {
                full[j] = keep[j][a];
            }
            self.payoff_vector(&full)
        })
    }
}

fn strides_for(counts: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; counts.len()];
    for i in (0..counts.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * counts[i + 1];
    }
    strides
}

/// Odometer over joint actions in flattened order.
#[derive(Clone, Debug)]
pub struct JointActions<'a> {
    counts: &'a [usize],
    next: Option<Vec<usize>>,
}

impl<'a> JointActions<'a> {
    pub fn new(counts: &'a [usize]) -> Self {
        let next = if counts.iter().all(|&n| n > 0) {
            Some(vec![0; counts.len()])
        } else {
            None
        };
        JointActions { counts, next }
    }
}

impl Iterator for JointActions<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for i in (0..succ.len()).rev() {
            succ[i] += 1;
            if succ[i] < self.counts[i] {
                self.next = Some(succ);
                return Some(current);
            }
            succ[i] = 0;
        }
        Some(current)
    }
}

/// A fixed reference policy, floored at [`ANCHOR_FLOOR`] and renormalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AnchorPolicy {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl AnchorPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!("anchor {probs:?} is not a distribution")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("anchor {probs:?} sums to {total}")));
        }
        let mut probs: Vec<f64> = probs.into_iter().map(|p| p.max(ANCHOR_FLOOR)).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p = (*p / total).max(ANCHOR_FLOOR);
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(AnchorPolicy { probs, log_probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(simplex::uniform(n)).expect("uniform anchor is valid")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Restriction to a subset of actions, renormalized.
    pub fn restrict(&self, keep: &[usize]) -> Result<AnchorPolicy> {
        let sub: Vec<f64> = keep.iter().map(|&a| self.probs[a]).collect();
        let total: f64 = sub.iter().sum();
        AnchorPolicy::new(sub.into_iter().map(|p| p / total).collect())
    }
}

impl TryFrom<Vec<f64>> for AnchorPolicy {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        AnchorPolicy::new(v)
    }
}

impl From<AnchorPolicy> for Vec<f64> {
    fn from(a: AnchorPolicy) -> Self {
        a.probs
    }
}

/// Sum-of-squares scoring: `C_i² / Σ_j C_j²`.
pub fn sos_score(counts: &[f64]) -> Result<Vec<f64>> {
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid(format!("score counts must be nonnegative: {counts:?}")));
    }
    let total: f64 = counts.iter().map(|c| c * c).sum();
    if total == 0.0 {
        return Err(Error::invalid("score counts are all zero"));
    }
    Ok(counts.iter().map(|c| c * c / total).collect())
}

/// Parameters for [`make_builtin_game`]; unused keys are ignored by the fixed games.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub players: Option<usize>,
    /// Either one count shared by all players or one count per player.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<ActionsParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionsParam {
    Shared(usize),
    PerPlayer(Vec<usize>),
}

impl GameParams {
    pub fn random(seed: u64, players: usize, actions: usize, payoff_bound: f64) -> Self {
        GameParams {
            seed: Some(seed),
            players: Some(players),
            actions: Some(ActionsParam::Shared(actions)),
            payoff_bound: Some(payoff_bound),
        }
    }

    fn action_counts(&self, default_players: usize) -> Result<Vec<usize>> {
        let players = self.players.unwrap_or(default_players);
        let counts = match &self.actions {
            None => return Err(Error::invalid("random games need `actions`")),
            Some(ActionsParam::Shared(n)) => vec![*n; players],
            Some(ActionsParam::PerPlayer(v)) => {
                check_len("actions per player", players, v.len())?;
                v.clone()
            }
        };
        if players < 2 || counts.iter().any(|&n| n == 0) {
            return Err(Error::invalid("random games need ≥ 2 players and positive action counts"));
        }
        Ok(counts)
    }
}

pub fn make_builtin_game(name: &str, params: &GameParams) -> Result<NormalFormGame> {
    match name {
        "matching_pennies" => NormalFormGame::from_fn(vec![2, 2], 1.0, true, |a| {
            let u = if a[0] == a[1] { 1.0 } else { -1.0 };
            vec![u, -u]
        }),
        "rock_paper_scissors" => NormalFormGame::from_fn(vec![3, 3], 1.0, true, |a| {
            // 0 = rock, 1 = paper, 2 = scissors; `a` beats `(a + 2) % 3`
            let u = if a[0] == a[1] {
                0.0
            } else if (a[0] + 2) % 3 == a[1] {
                1.0
            } else {
                -1.0
            };
            vec![u, -u]
        }),
        "random_zero_sum" | "random_general_sum" => {
            let seed = params
                .seed
                .ok_or_else(|| Error::invalid("random games need a `seed`"))?;
            let bound = params.payoff_bound.unwrap_or(1.0);
            if !(bound > 0.0 && bound.is_finite()) {
                return Err(Error::invalid("payoff_bound must be positive"));
            }
            let zero_sum = name == "random_zero_sum";
            let counts = params.action_counts(2)?;
            if zero_sum && counts.len() != 2 {
                return Err(Error::invalid("random_zero_sum is a two-player game"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = move || bound * (2.0 * rng.gen::<f64>() - 1.0);
            let n = counts.len();
            NormalFormGame::from_fn(counts, bound, zero_sum, |_| {
                if zero_sum {
                    let u = draw();
                    vec![u, -u]
                } else {
                    (0..n).map(|_| draw()).collect()
                }
            })
        }
        other => Err(Error::UnknownGame(other.to_string())),
    }
}
