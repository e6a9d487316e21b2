//! Population-based evaluation: a candidate plays games whose seats are drawn with
//! replacement from a baseline pool plus the candidate, scored with sum-of-squares.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::game::{sos_score, AnchorPolicy, NormalFormGame};
use crate::learners::{self, Feedback, LearnerOptions, LearnerState, TemperatureSchedule, TypeDistribution};
use crate::markov::{check_anchors, StateAnchors, TabularMarkovGame};
use crate::oracle;
use crate::serde_ext;
use crate::simplex;

pub const DEFAULT_GAMES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    /// Plays the anchor of whichever seat (and state) it occupies.
    Anchor,
    /// Fixed per-seat policies; normal-form games only.
    Fixed { policies: Vec<Vec<f64>> },
    /// Runs DiL-piKL with `types` for every seat and plays the act-λ policy of its own seat.
    Search {
        types: TypeDistribution,
        #[serde(with = "serde_ext::extended")]
        act_lambda: f64,
        schedule: TemperatureSchedule,
        iterations: u64,
        #[serde(default = "expected")]
        feedback: Feedback,
    },
}

fn expected() -> Feedback {
    Feedback::Expected
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: AgentKind,
}

impl AgentSpec {
    pub fn anchor(id: impl Into<String>) -> Self {
        AgentSpec {
            id: id.into(),
            kind: AgentKind::Anchor,
        }
    }

    pub fn fixed(id: impl Into<String>, policies: Vec<Vec<f64>>) -> Self {
        AgentSpec {
            id: id.into(),
            kind: AgentKind::Fixed { policies },
        }
    }
}

/// The game being played: one-shot normal form, or a Markov game played to termination.
#[derive(Clone, Copy, Debug)]
pub enum PopGame<'a> {
    Normal {
        game: &'a NormalFormGame,
        anchors: &'a [AnchorPolicy],
    },
    Markov {
        game: &'a TabularMarkovGame,
        anchors: &'a StateAnchors,
    },
}

impl PopGame<'_> {
    pub fn seats(&self) -> usize {
        match self {
            PopGame::Normal { game, .. } => game.player_count(),
            PopGame::Markov { game, .. } => game.player_count(),
        }
    }

    /// Added to every seat's payoff (or return) so score counts are nonnegative.
    pub fn score_offset(&self) -> f64 {
        match self {
            PopGame::Normal { game, .. } => game.payoff_bound(),
            PopGame::Markov { game, .. } => game.value_bound(),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            PopGame::Normal { game, anchors } => {
                check_len("anchors", game.player_count(), anchors.len())?;
                for (i, a) in anchors.iter().enumerate() {
                    check_len("anchor actions", game.action_count(i), a.len())?;
                }
                Ok(())
            }
            PopGame::Markov { game, anchors } => check_anchors(game, anchors),
        }
    }
}

/// Policies an agent plays, indexed `[state][seat]` (a single pseudo-state for normal form).
type AgentPolicies = Vec<Vec<Vec<f64>>>;

#[allow(clippy::too_many_arguments)]
fn search_normal(
    game: &NormalFormGame,
    anchors: &[AnchorPolicy],
    types: &TypeDistribution,
    act_lambda: f64,
    schedule: TemperatureSchedule,
    iterations: u64,
    feedback: Feedback,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut ls = (0..game.player_count())
        .map(|i| {
            LearnerState::new(
                i,
                game.action_count(i),
                anchors[i].clone(),
                types.clone(),
                schedule,
                LearnerOptions::default(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    learners::run(&mut ls, game, iterations, feedback, rng, false)?;
    let act = ls.iter().map(|l| l.act_policy(act_lambda)).collect::<Result<_>>()?;
    let sigma = ls.iter().map(|l| l.average_mixture()).collect::<Result<_>>()?;
    Ok((act, sigma))
}

fn resolve(agent: &AgentSpec, game: &PopGame, rng: &mut ChaCha8Rng) -> Result<AgentPolicies> {
    match (&agent.kind, game) {
        (AgentKind::Anchor, PopGame::Normal { anchors, .. }) => {
            Ok(vec![anchors.iter().map(|a| a.probs().to_vec()).collect()])
        }
        (AgentKind::Anchor, PopGame::Markov { anchors, .. }) => Ok(anchors
            .iter()
            .map(|st| st.iter().map(|a| a.probs().to_vec()).collect())
            .collect()),
        (AgentKind::Fixed { policies }, PopGame::Normal { game, .. }) => {
            check_len("fixed policies", game.player_count(), policies.len())?;
            for (i, p) in policies.iter().enumerate() {
                check_len("fixed policy actions", game.action_count(i), p.len())?;
                simplex::check_distribution("fixed policy", p, 1e-9)?;
            }
            Ok(vec![policies.clone()])
        }
        (AgentKind::Fixed { .. }, PopGame::Markov { .. }) => Err(Error::validation(
            "agents",
            format!("agent {} uses fixed policies, which only apply to normal-form games", agent.id),
        )),
        (
            AgentKind::Search {
                types,
                act_lambda,
                schedule,
                iterations,
                feedback,
            },
            PopGame::Normal { game, anchors },
        ) => {
            let (act, _) = search_normal(game, anchors, types, *act_lambda, *schedule, *iterations, *feedback, rng)?;
            Ok(vec![act])
        }
        (
            AgentKind::Search {
                types,
                act_lambda,
                schedule,
                iterations,
                feedback,
            },
            PopGame::Markov { game, anchors },
        ) => {
            // backward sweep: search each stage game against values of the agent's own σ
            let mut values = vec![vec![0.0; game.player_count()]; game.state_count() + 1];
            let mut out = vec![Vec::new(); game.state_count()];
            for &s in game.backward_order() {
                let stage = oracle::continuation_game(game, s, &values)?;
                let (act, sigma) =
                    search_normal(&stage, &anchors[s], types, *act_lambda, *schedule, *iterations, *feedback, rng)
                        .map_err(|e| e.at_state(s))?;
                for (p, v) in values[s].iter_mut().enumerate() {
                    *v = stage.expected_utility(&sigma, p)?;
                }
                out[s] = act;
            }
            Ok(out)
        }
    }
}

/// One evaluated game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayedGame {
    pub game_id: usize,
    /// Agent id in each seat.
    pub seats: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopEvalReport {
    pub candidate: String,
    pub games: usize,
    /// Number of candidate seats scored (one sample each).
    pub samples: usize,
    pub mean: f64,
    pub standard_error: f64,
    pub records: Vec<PlayedGame>,
}

/// Arithmetic mean and standard error (sample standard deviation over √n).
pub fn mean_and_se(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.len() < 2 {
        return Err(Error::invalid("a standard error needs at least two scores"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Per-game generator: `ChaCha8(seed)` on stream `game_index + 1` (stream 0 is reserved
/// for resolving search agents).
fn game_rng(seed: u64, game_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(game_index as u64 + 1);
    rng
}

fn sos_or_even(counts: &[f64]) -> Result<Vec<f64>> {
    if counts.iter().all(|&c| c == 0.0) {
        return Ok(simplex::uniform(counts.len()));
    }
    sos_score(counts)
}

fn play(game: &PopGame, seat_policies: &[&AgentPolicies], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let offset = game.score_offset();
    let returns = match game {
        PopGame::Normal { game, .. } => {
            let joint: Vec<usize> = seat_policies
                .iter()
                .enumerate()
                .map(|(seat, pol)| simplex::sample_index(&pol[0][seat], rng))
                .collect();
            game.payoff_vector(&joint)
        }
        PopGame::Markov { game, .. } => {
            let mut total = vec![0.0; game.player_count()];
            let mut discount = 1.0;
            let mut s = game.initial_state();
            while !game.is_terminal(s) {
                let joint: Vec<usize> = seat_policies
                    .iter()
                    .enumerate()
                    .map(|(seat, pol)| simplex::sample_index(&pol[s][seat], rng))
                    .collect();
                let j = game.joint_index(s, &joint);
                for (t, r) in total.iter_mut().zip(game.rewards(s, j)) {
                    *t += discount * r;
                }
                discount *= game.gamma();
                let next = game.transitions(s, j);
                let probs: Vec<f64> = next.iter().map(|&(_, q)| q).collect();
                s = next[simplex::sample_index(&probs, rng)].0;
            }
            total
        }
    };
    let counts: Vec<f64> = returns.iter().map(|r| (r + offset).max(0.0)).collect();
    sos_or_even(&counts)
}

/// Plays `games` games and reports the candidate's mean SoS score per occupied seat.
pub fn run_population_eval(
    candidate: &AgentSpec,
    baselines: &[AgentSpec],
    game: &PopGame,
    games: usize,
    seed: u64,
) -> Result<PopEvalReport> {
    if baselines.is_empty() {
        return Err(Error::invalid("the baseline pool is empty"));
    }
    if games == 0 {
        return Err(Error::invalid("need at least one game"));
    }
    game.check()?;
    let mut roster: Vec<&AgentSpec> = baselines.iter().collect();
    roster.push(candidate);
    let cand = roster.len() - 1;

    let mut resolve_rng = ChaCha8Rng::seed_from_u64(seed);
    let policies = roster
        .iter()
        .map(|a| resolve(a, game, &mut resolve_rng))
        .collect::<Result<Vec<_>>>()?;

    let n = game.seats();
    let mut records = Vec::with_capacity(games);
    let mut samples = Vec::new();
    for g in 0..games {
        let mut rng = game_rng(seed, g);
        let seats = loop {
            let draw: Vec<usize> = (0..n).map(|_| rng.gen_range(0..roster.len())).collect();
            if draw.contains(&cand) {
                break draw;
            }
        };
        let seat_policies: Vec<&AgentPolicies> = seats.iter().map(|&k| &policies[k]).collect();
        let scores = play(game, &seat_policies, &mut rng)?;
        for (seat, &k) in seats.iter().enumerate() {
            if k == cand {
                samples.push(scores[seat]);
            }
        }
        records.push(PlayedGame {
            game_id: g,
            seats: seats.iter().map(|&k| roster[k].id.clone()).collect(),
            scores,
        });
    }
    let (mean, standard_error) = if samples.len() >= 2 {
        mean_and_se(&samples)?
    } else {
        (samples[0], f64::NAN)
    };
    Ok(PopEvalReport {
        candidate: candidate.id.clone(),
        games,
        samples: samples.len(),
        mean,
        standard_error,
        records,
    })
}
