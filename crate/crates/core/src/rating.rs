//! Multiplayer BayesElo: MAP ratings and seat biases from observed score shares.
//!
//! The model predicts seat shares `∝ exp((r_i + b_s)/c)`; the likelihood of a game is the
//! cross-entropy `Σ p_obs·log p_model` and ratings carry an independent `N(0, σ²)` prior.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::simplex;

/// `400·log10(e)`: a 400-point gap means ten-fold odds.
pub const ELO_SCALE: f64 = 400.0 * std::f64::consts::LOG10_E;
pub const DEFAULT_SIGMA_PRIOR: f64 = 350.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingModel {
    pub players: BTreeMap<String, f64>,
    pub seat_biases: Vec<f64>,
    pub c: f64,
    pub sigma_prior: f64,
}

impl RatingModel {
    /// All ratings and biases zero.
    pub fn zeros<'a>(players: impl IntoIterator<Item = &'a str>, seats: usize) -> Self {
        RatingModel {
            players: players.into_iter().map(|p| (p.to_string(), 0.0)).collect(),
            seat_biases: vec![0.0; seats],
            c: ELO_SCALE,
            sigma_prior: DEFAULT_SIGMA_PRIOR,
        }
    }

    pub fn rating(&self, player: &str) -> Result<f64> {
        self.players
            .get(player)
            .copied()
            .ok_or_else(|| Error::UnknownPlayer(player.to_string()))
    }
}

/// One game: the player in each seat and the observed share of the total score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub game_id: String,
    pub seats: Vec<String>,
    pub shares: Vec<f64>,
}

impl GameRecord {
    pub fn new(game_id: impl Into<String>, seats: Vec<String>, shares: Vec<f64>) -> Result<Self> {
        check_len("seat shares", seats.len(), shares.len())?;
        if seats.is_empty() {
            return Err(Error::invalid("a game needs at least one seat"));
        }
        simplex::check_distribution("score shares", &shares, 1e-9)?;
        Ok(GameRecord {
            game_id: game_id.into(),
            seats,
            shares,
        })
    }
}

/// Predicted shares for the players seated in order.
pub fn predict_shares(model: &RatingModel, seats: &[String]) -> Result<Vec<f64>> {
    if seats.len() > model.seat_biases.len() {
        return Err(Error::invalid(format!(
            "{} seats but the model has {} seat biases",
            seats.len(),
            model.seat_biases.len()
        )));
    }
    let logits = seats
        .iter()
        .zip(&model.seat_biases)
        .map(|(p, b)| Ok((model.rating(p)? + b) / model.c))
        .collect::<Result<Vec<f64>>>()?;
    Ok(simplex::softmax(&logits))
}

/// `Σ_games Σ_seats p_obs·log p_model`.
pub fn log_likelihood(model: &RatingModel, games: &[GameRecord]) -> Result<f64> {
    let mut total = 0.0;
    for g in games {
        let pred = predict_shares(model, &g.seats)?;
        for (&o, &p) in g.shares.iter().zip(&pred) {
            if o > 0.0 {
                if p <= 0.0 {
                    return Err(Error::invalid(format!("game {} predicts a zero share", g.game_id)));
                }
                total += o * p.ln();
            }
        }
    }
    Ok(total)
}

/// `−Σ r_i²/(2σ²)`, the Gaussian log prior up to a constant.
pub fn log_prior(model: &RatingModel) -> f64 {
    let s2 = model.sigma_prior * model.sigma_prior;
    -model.players.values().map(|r| r * r).sum::<f64>() / (2.0 * s2)
}

pub fn log_posterior(model: &RatingModel, games: &[GameRecord]) -> Result<f64> {
    if games.is_empty() {
        return Err(Error::invalid("no games to rate"));
    }
    Ok(log_likelihood(model, games)? + log_prior(model))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub sigma_prior: f64,
    pub c: f64,
    /// Stop when `c·|∇|∞` (gradient in share units) falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            sigma_prior: DEFAULT_SIGMA_PRIOR,
            c: ELO_SCALE,
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

/// Indexed form of the data used by the optimizer. Parameters are the ratings followed by
/// the first `S − 1` seat biases; the last bias is minus their sum.
struct Problem {
    players: Vec<String>,
    seats: usize,
    games: Vec<(Vec<usize>, Vec<f64>)>,
    c: f64,
    inv_var: f64,
}

impl Problem {
    fn dim(&self) -> usize {
        self.players.len() + self.seats - 1
    }

    fn bias(&self, theta: &[f64], s: usize) -> f64 {
        let p = self.players.len();
        if s + 1 < self.seats {
            theta[p + s]
        } else {
            -theta[p..].iter().sum::<f64>()
        }
    }

    fn shares(&self, theta: &[f64], seated: &[usize]) -> Vec<f64> {
        let logits: Vec<f64> = seated
            .iter()
            .enumerate()
            .map(|(s, &i)| (theta[i] + self.bias(theta, s)) / self.c)
            .collect();
        simplex::softmax(&logits)
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let mut total = 0.0;
        for (seated, obs) in &self.games {
            let pred = self.shares(theta, seated);
            for (&o, &p) in obs.iter().zip(&pred) {
                if o > 0.0 {
                    total += o * p.ln();
                }
            }
        }
        let prior: f64 = theta[..self.players.len()].iter().map(|r| r * r).sum();
        total - 0.5 * self.inv_var * prior
    }

    /// d z_s / d θ as (parameter index, coefficient) pairs, with z_s = (r + b_s)/c.
    fn seat_jacobian(&self, s: usize, player: usize) -> Vec<(usize, f64)> {
        let p = self.players.len();
        let mut out = vec![(player, 1.0 / self.c)];
        if s + 1 < self.seats {
            out.push((p + s, 1.0 / self.c));
        } else {
            out.extend((0..self.seats - 1).map(|k| (p + k, -1.0 / self.c)));
        }
        out
    }

    fn gradient_hessian(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let np = self.players.len();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for (seated, obs) in &self.games {
            let pred = self.shares(theta, seated);
            let jac: Vec<Vec<(usize, f64)>> = seated
                .iter()
                .enumerate()
                .map(|(s, &i)| self.seat_jacobian(s, i))
                .collect();
            for (s, row) in jac.iter().enumerate() {
                for &(k, w) in row {
                    g[k] += (obs[s] - pred[s]) * w;
                }
            }
            // Hessian wrt z is −(diag(p) − p pᵀ)
            for (s, row_s) in jac.iter().enumerate() {
                for (t, row_t) in jac.iter().enumerate() {
                    let hz = if s == t { pred[s] - pred[s] * pred[t] } else { -pred[s] * pred[t] };
                    if hz == 0.0 {
                        continue;
                    }
                    for &(a, wa) in row_s {
                        for &(b, wb) in row_t {
                            h[(a, b)] -= hz * wa * wb;
                        }
                    }
                }
            }
        }
        for i in 0..np {
            g[i] -= self.inv_var * theta[i];
            h[(i, i)] -= self.inv_var;
        }
        (g, h)
    }
}

fn build_problem(games: &[GameRecord], opts: &FitOptions) -> Result<Problem> {
    if games.is_empty() {
        return Err(Error::invalid("no games to rate"));
    }
    if !(opts.sigma_prior > 0.0 && opts.c > 0.0) {
        return Err(Error::invalid("σ_prior and c must be positive"));
    }
    let mut index = BTreeMap::new();
    for g in games {
        for p in &g.seats {
            index.entry(p.clone()).or_insert(0usize);
        }
    }
    let players: Vec<String> = index.keys().cloned().collect();
    for (i, p) in players.iter().enumerate() {
        index.insert(p.clone(), i);
    }
    let seats = games.iter().map(|g| g.seats.len()).max().unwrap_or(0);
    let indexed = games
        .iter()
        .map(|g| {
            simplex::check_distribution("score shares", &g.shares, 1e-9)?;
            check_len("seat shares", g.seats.len(), g.shares.len())?;
            Ok((g.seats.iter().map(|p| index[p]).collect(), g.shares.clone()))
        })
        .collect::<Result<_>>()?;
    Ok(Problem {
        players,
        seats,
        games: indexed,
        c: opts.c,
        inv_var: 1.0 / (opts.sigma_prior * opts.sigma_prior),
    })
}

/// Result of a fit, with the optimizer trace for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub model: RatingModel,
    pub iterations: usize,
    /// Gradient max-norm in share units at the returned model.
    pub gradient_norm: f64,
    /// Log posterior after each accepted step, starting at the all-zero model.
    pub objective_path: Vec<f64>,
}

/// MAP ratings and seat biases by damped Newton ascent from all-zero parameters, with
/// backtracking and a gradient-step fallback when the Newton direction is unusable.
pub fn fit_ratings(games: &[GameRecord], opts: &FitOptions) -> Result<FitReport> {
    let prob = build_problem(games, opts)?;
    let d = prob.dim();
    let mut theta = vec![0.0; d];
    let mut obj = prob.objective(&theta);
    let mut path = vec![obj];
    let mut gnorm = f64::INFINITY;
    for iter in 0..opts.max_iters {
        let (g, h) = prob.gradient_hessian(&theta);
        gnorm = g.amax() * prob.c;
        if gnorm < opts.tol {
            return Ok(finish(&prob, theta, opts, iter, gnorm, path));
        }
        let neg_h = -h;
        let newton = neg_h.cholesky().map(|ch| ch.solve(&g));
        let mut candidates = Vec::with_capacity(2);
        if let Some(dir) = newton.filter(|dir| dir.iter().all(|x| x.is_finite()) && dir.dot(&g) > 0.0) {
            candidates.push(dir);
        }
        candidates.push(g.clone() * (prob.c * prob.c));
        let mut accepted = false;
        for dir in candidates {
            let mut step = 1.0;
            for _ in 0..60 {
                let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, x)| t + step * x).collect();
                let trial_obj = prob.objective(&trial);
                // below rounding noise in the objective, judge the step by the gradient
                let flat = (obj - trial_obj).abs() <= 1e-12 * obj.abs().max(1.0)
                    && prob.gradient_hessian(&trial).0.amax() * prob.c < gnorm;
                if trial_obj.is_finite() && (trial_obj >= obj || flat) {
                    theta = trial;
                    obj = trial_obj;
                    path.push(obj);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            // no ascent possible in floating point: we are at the optimum to machine precision
            break;
        }
    }
    let (g, _) = prob.gradient_hessian(&theta);
    gnorm = gnorm.min(g.amax() * prob.c);
    if gnorm < opts.tol {
        return Ok(finish(&prob, theta, opts, opts.max_iters, gnorm, path));
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iters,
        residual: gnorm,
    })
}

fn finish(prob: &Problem, theta: Vec<f64>, opts: &FitOptions, iterations: usize, gnorm: f64, path: Vec<f64>) -> FitReport {
    let np = prob.players.len();
    let players = prob.players.iter().cloned().zip(theta[..np].iter().copied()).collect();
    let seat_biases = (0..prob.seats).map(|s| prob.bias(&theta, s)).collect();
    FitReport {
        model: RatingModel {
            players,
            seat_biases,
            c: opts.c,
            sigma_prior: opts.sigma_prior,
        },
        iterations,
        gradient_norm: gnorm,
        objective_path: path,
    }
}

#[derive(Deserialize)]
struct CsvRow {
    game_id: String,
    seat_index: usize,
    player_id: String,
    score_share: f64,
}

/// Reads `game_id, seat_index, player_id, score_share` rows; games keep first-seen order.
pub fn read_games_csv<R: Read>(reader: R) -> Result<Vec<GameRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: CsvRow = row?;
        if !rows.contains_key(&row.game_id) {
            order.push(row.game_id.clone());
        }
        rows.entry(row.game_id)
            .or_default()
            .push((row.seat_index, row.player_id, row.score_share));
    }
    order
        .into_iter()
        .map(|id| {
            let mut seats = rows.remove(&id).unwrap_or_default();
            seats.sort_by_key(|s| s.0);
            if seats.iter().enumerate().any(|(k, s)| s.0 != k) {
                return Err(Error::validation(
                    "seat_index",
                    format!("game {id} must occupy seats 0..n exactly once"),
                ));
            }
            let (players, shares) = seats.into_iter().map(|(_, p, x)| (p, x)).unzip();
            GameRecord::new(id.clone(), players, shares)
                .map_err(|e| Error::validation("score_share", format!("game {id}: {e}")))
        })
        .collect()
}
