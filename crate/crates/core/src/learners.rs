//! Anchored no-regret learners: Hedge, fictitious play, piKL-hedge and DiL-piKL.
//!
//! Every learner keeps one vector `Q` of average hindsight rewards shared by all of its
//! types. On iteration `t` the type-λ policy is
//!
//! ```text
//! π_λ(a) ∝ exp((Q(a) + λ·log τ(a)) / (κ + λ))
//! ```
//!
//! with κ the temperature produced by the schedule after `t − 1` observations. λ = 0 gives
//! Hedge, λ = ∞ gives the anchor τ, and κ = λ = 0 gives a fictitious-play step (uniform
//! over the argmax of `Q`). A single-type distribution is piKL-hedge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::game::{AnchorPolicy, NormalFormGame};
use crate::serde_ext;
use crate::simplex;

/// Finite distribution `β` over regularization strengths `Λ` (`+∞` allowed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TypesDoc", into = "TypesDoc")]
pub struct TypeDistribution {
    support: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TypesDoc {
    #[serde(with = "serde_ext::extended_vec")]
    support: Vec<f64>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

impl TryFrom<TypesDoc> for TypeDistribution {
    type Error = Error;

    fn try_from(d: TypesDoc) -> Result<Self> {
        match d.weights {
            Some(w) => TypeDistribution::new(d.support, w),
            None => TypeDistribution::uniform(d.support),
        }
    }
}

impl From<TypeDistribution> for TypesDoc {
    fn from(t: TypeDistribution) -> Self {
        TypesDoc {
            support: t.support,
            weights: Some(t.weights),
        }
    }
}

impl TypeDistribution {
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_len("type weights", support.len(), weights.len())?;
        if support.is_empty() {
            return Err(Error::invalid("type support is empty"));
        }
        if support.iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(Error::invalid(format!("λ values must be ≥ 0: {support:?}")));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("λ values must be distinct and ascending: {support:?}")));
        }
        simplex::check_distribution("type weights", &weights, simplex::SUM_TOL)?;
        Ok(TypeDistribution { support, weights })
    }

    pub fn uniform(support: Vec<f64>) -> Result<Self> {
        let n = support.len().max(1);
        Self::new(support, simplex::uniform(n))
    }

    pub fn singleton(lambda: f64) -> Self {
        Self::new(vec![lambda], vec![1.0]).expect("singleton λ must be ≥ 0")
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn index_of(&self, lambda: f64) -> Option<usize> {
        self.support.iter().position(|&l| l == lambda)
    }

    /// Samples a type; a singleton support consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let k = if self.support.len() == 1 {
            0
        } else {
            simplex::sample_index(&self.weights, rng)
        };
        (k, self.support[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScheduleMode {
    /// κ_t = 1/(η·t); κ_0 = ∞, so the first iterate is uniform.
    ConstantEta { eta: f64 },
    /// κ_t = 1/√t; κ_0 = ∞.
    InverseSqrt,
    /// κ_t = scale·S_t/√t with S_t the sample standard deviation of realized utilities.
    AdaptiveStd {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// κ_t = κ for every t (κ = 0 gives fictitious play when λ = 0).
    Constant { kappa: f64 },
}

fn default_scale() -> f64 {
    0.3
}

/// Default floor for the adaptive schedule, also its κ before two utilities are observed.
pub const ADAPTIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    #[serde(flatten)]
    pub mode: ScheduleMode,
    #[serde(default)]
    pub kappa_floor: f64,
}

impl TemperatureSchedule {
    pub fn constant_eta(eta: f64) -> Self {
        TemperatureSchedule {
            mode: ScheduleMode::ConstantEta { eta },
            kappa_floor: 0.0,
        }
    }

    pub fn inverse_sqrt() -> Self {
        TemperatureSchedule {
            mode: ScheduleMode::InverseSqrt,
            kappa_floor: 0.0,
        }
    }

    pub fn adaptive() -> Self {
        TemperatureSchedule {
            mode: ScheduleMode::AdaptiveStd { scale: 0.3 },
            kappa_floor: ADAPTIVE_FLOOR,
        }
    }

    pub fn constant(kappa: f64) -> Self {
        TemperatureSchedule {
            mode: ScheduleMode::Constant { kappa },
            kappa_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.mode {
            ScheduleMode::ConstantEta { eta } => eta > 0.0 && eta.is_finite(),
            ScheduleMode::InverseSqrt => true,
            ScheduleMode::AdaptiveStd { scale } => scale > 0.0 && scale.is_finite(),
            ScheduleMode::Constant { kappa } => kappa >= 0.0,
        };
        if ok && self.kappa_floor >= 0.0 && self.kappa_floor.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid temperature schedule {self:?}")))
        }
    }

    /// The η of a `constant_eta` schedule, which is the step size in the regret bound.
    pub fn eta(&self) -> Option<f64> {
        match self.mode {
            ScheduleMode::ConstantEta { eta } => Some(eta),
            _ => None,
        }
    }

    /// κ_t after `t` observations summarized by `stats`.
    pub fn kappa_next(&self, t: u64, stats: &UtilityStats) -> f64 {
        let raw = match self.mode {
            ScheduleMode::ConstantEta { eta } => {
                if t == 0 {
                    f64::INFINITY
                } else {
                    1.0 / (eta * t as f64)
                }
            }
            ScheduleMode::InverseSqrt => 1.0 / (t as f64).sqrt(),
            ScheduleMode::AdaptiveStd { scale } => match stats.sample_std() {
                Some(s) if t > 0 => scale * s / (t as f64).sqrt(),
                _ => self.kappa_floor,
            },
            ScheduleMode::Constant { kappa } => kappa,
        };
        raw.max(self.kappa_floor)
    }
}

/// Running count, mean and sum of squared deviations (Welford).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl UtilityStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Sample standard deviation (n − 1 denominator); `None` below two samples.
    pub fn sample_std(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64).max(0.0).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerOptions {
    /// Replace the first iterate by the uniform policy (the initialization the regret
    /// analysis assumes). Only matters when κ_0 is finite.
    pub uniform_first_iterate: bool,
    /// Allow κ = λ = 0, answered with the uniform distribution over `argmax Q`.
    pub argmax_fallback: bool,
}

impl Default for LearnerOptions {
    fn default() -> Self {
        LearnerOptions {
            uniform_first_iterate: false,
            argmax_fallback: true,
        }
    }
}

/// The type-λ policy at temperature κ for average rewards `q`.
pub fn pikl_policy(
    q: &[f64],
    anchor: &AnchorPolicy,
    lambda: f64,
    kappa: f64,
    argmax_fallback: bool,
) -> Result<Vec<f64>> {
    check_len("anchor", q.len(), anchor.len())?;
    if lambda.is_nan() || lambda < 0.0 || kappa.is_nan() || kappa < 0.0 {
        return Err(Error::invalid(format!("need λ ≥ 0 and κ ≥ 0, got λ={lambda}, κ={kappa}")));
    }
    if lambda == f64::INFINITY {
        return Ok(anchor.probs().to_vec());
    }
    if kappa == f64::INFINITY {
        return Ok(simplex::uniform(q.len()));
    }
    if kappa == 0.0 && lambda == 0.0 {
        return if argmax_fallback {
            Ok(simplex::argmax_uniform(q))
        } else {
            Err(Error::DegenerateTemperature)
        };
    }
    let temp = kappa + lambda;
    let logits: Vec<f64> = if lambda == 0.0 {
        q.iter().map(|x| x / temp).collect()
    } else {
        q.iter()
            .zip(anchor.log_probs())
            .map(|(x, l)| (x + lambda * l) / temp)
            .collect()
    };
    Ok(simplex::softmax(&logits))
}

/// One player's DiL-piKL state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    player: usize,
    t: u64,
    q: Vec<f64>,
    stats: UtilityStats,
    anchor: AnchorPolicy,
    types: TypeDistribution,
    schedule: TemperatureSchedule,
    options: LearnerOptions,
    /// κ_t, the temperature for the next iterate.
    kappa: f64,
    /// κ used to form the most recent iterate.
    #[serde(with = "serde_ext::extended")]
    kappa_used: f64,
    policy_sums: Vec<Vec<f64>>,
    policy_counts: Vec<u64>,
    last_iterates: Option<Vec<Vec<f64>>>,
    pending: bool,
}

impl LearnerState {
    /// `Initialize()`: t = 0 and Q ≡ 0.
    pub fn new(
        player: usize,
        actions: usize,
        anchor: AnchorPolicy,
        types: TypeDistribution,
        schedule: TemperatureSchedule,
        options: LearnerOptions,
    ) -> Result<Self> {
        if actions == 0 {
            return Err(Error::invalid("a learner needs at least one action"));
        }
        check_len("anchor", actions, anchor.len())?;
        schedule.validate()?;
        let stats = UtilityStats::default();
        let kappa = schedule.kappa_next(0, &stats);
        if kappa == 0.0 && !options.argmax_fallback && types.support().contains(&0.0) {
            return Err(Error::DegenerateTemperature);
        }
        Ok(LearnerState {
            player,
            t: 0,
            q: vec![0.0; actions],
            stats,
            anchor,
            policy_sums: vec![vec![0.0; actions]; types.len()],
            policy_counts: vec![0; types.len()],
            types,
            schedule,
            options,
            kappa,
            kappa_used: f64::NAN,
            last_iterates: None,
            pending: false,
        })
    }

    pub fn player(&self) -> usize {
        self.player
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn action_count(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn stats(&self) -> &UtilityStats {
        &self.stats
    }

    pub fn anchor(&self) -> &AnchorPolicy {
        &self.anchor
    }

    pub fn types(&self) -> &TypeDistribution {
        &self.types
    }

    pub fn schedule(&self) -> &TemperatureSchedule {
        &self.schedule
    }

    pub fn options(&self) -> &LearnerOptions {
        &self.options
    }

    /// κ_t: the temperature the next iterate will use.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// κ used for the most recent iterate (NaN before the first one).
    pub fn kappa_used(&self) -> f64 {
        self.kappa_used
    }

    /// Per-type policies of the most recent iteration.
    pub fn last_iterates(&self) -> Option<&[Vec<f64>]> {
        self.last_iterates.as_deref()
    }

    pub fn policy_for_type(&self, lambda: f64, kappa: f64) -> Result<Vec<f64>> {
        pikl_policy(&self.q, &self.anchor, lambda, kappa, self.options.argmax_fallback)
    }

    /// The policy actually played: type `λ_act` at the current Q and κ.
    pub fn act_policy(&self, lambda_act: f64) -> Result<Vec<f64>> {
        self.policy_for_type(lambda_act, self.kappa)
    }

    /// Forms this iteration's policy for every type and adds it to the running averages.
    pub fn begin_iteration(&mut self) -> Result<&[Vec<f64>]> {
        if self.pending {
            return Err(Error::ObserveOutOfOrder {
                player: self.player,
                iteration: self.t + 1,
            });
        }
        let kappa = self.kappa;
        let iterates: Vec<Vec<f64>> = if self.t == 0 && self.options.uniform_first_iterate {
            self.types
                .support()
                .iter()
                .map(|&l| {
                    if l == f64::INFINITY {
                        self.anchor.probs().to_vec()
                    } else {
                        simplex::uniform(self.q.len())
                    }
                })
                .collect()
        } else {
            self.types
                .support()
                .iter()
                .map(|&l| self.policy_for_type(l, kappa))
                .collect::<Result<_>>()?
        };
        for ((sum, count), pi) in self.policy_sums.iter_mut().zip(&mut self.policy_counts).zip(&iterates) {
            for (s, p) in sum.iter_mut().zip(pi) {
                *s += p;
            }
            *count += 1;
        }
        self.kappa_used = kappa;
        self.pending = true;
        Ok(self.last_iterates.insert(iterates))
    }

    /// Folds in the utilities `u(a, a_{-i})` of every own action and the realized utility.
    pub fn observe(&mut self, action_utilities: &[f64], realized: f64) -> Result<()> {
        if !self.pending {
            return Err(Error::ObserveOutOfOrder {
                player: self.player,
                iteration: self.t,
            });
        }
        check_len("action utilities", self.q.len(), action_utilities.len())?;
        self.t += 1;
        let t = self.t as f64;
        for (q, u) in self.q.iter_mut().zip(action_utilities) {
            *q = (t - 1.0) / t * *q + u / t;
        }
        self.stats.push(realized);
        self.kappa = self.schedule.kappa_next(self.t, &self.stats);
        self.pending = false;
        Ok(())
    }

    /// Mean of the type-λ iterates so far.
    pub fn average_policy(&self, lambda: f64) -> Result<Vec<f64>> {
        let k = self
            .types
            .index_of(lambda)
            .ok_or_else(|| Error::invalid(format!("λ={lambda} is not in the type support")))?;
        self.average_policy_at(k)
    }

    pub fn average_policy_at(&self, type_index: usize) -> Result<Vec<f64>> {
        let count = self.policy_counts[type_index];
        if count == 0 {
            return Err(Error::NoIterations);
        }
        if self.types.support()[type_index] == f64::INFINITY {
            return Ok(self.anchor.probs().to_vec());
        }
        Ok(self.policy_sums[type_index].iter().map(|s| s / count as f64).collect())
    }

    /// β-weighted mixture of the per-type average policies.
    pub fn average_mixture(&self) -> Result<Vec<f64>> {
        let avgs = (0..self.types.len())
            .map(|k| self.average_policy_at(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(simplex::mixture(self.types.weights(), &avgs))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Each player samples a type and an action; Q sees the realized opponent actions.
    #[default]
    Sampled,
    /// No sampling; Q sees expected utilities against the opponents' β-mixtures.
    Expected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypePolicy {
    #[serde(with = "serde_ext::extended")]
    pub lambda: f64,
    pub policy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerRecord {
    #[serde(with = "serde_ext::extended_opt")]
    pub sampled_lambda: Option<f64>,
    pub action: Option<usize>,
    pub policy_by_type: Vec<TypePolicy>,
    /// `u_i(a, ·)` for every own action `a`, as fed to the Q update.
    pub action_utilities: Vec<f64>,
}

/// One iteration of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    /// Temperature each player used for this iterate.
    #[serde(with = "serde_ext::extended_vec")]
    pub kappa: Vec<f64>,
    pub per_player: Vec<PlayerRecord>,
    /// Realized (sampled mode) or expected (expected mode) utility per player.
    pub utilities: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub feedback: Feedback,
    pub uniform_first_iterate: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Recomputes `Q^T` for `player` as the plain mean of the recorded action utilities.
    pub fn replay_q(&self, player: usize) -> Result<Vec<f64>> {
        let first = self.rows.first().ok_or(Error::NoIterations)?;
        let n = first.per_player[player].action_utilities.len();
        let mut sum = vec![0.0; n];
        for row in &self.rows {
            for (s, u) in sum.iter_mut().zip(&row.per_player[player].action_utilities) {
                *s += u;
            }
        }
        Ok(sum.into_iter().map(|s| s / self.rows.len() as f64).collect())
    }
}

fn check_learners(learners: &[LearnerState], game: &NormalFormGame) -> Result<()> {
    check_len("learners", game.player_count(), learners.len())?;
    let t0 = learners[0].iteration();
    for (i, l) in learners.iter().enumerate() {
        check_len("learner actions", game.action_count(i), l.action_count())?;
        if l.iteration() != t0 || l.pending {
            return Err(Error::ObserveOutOfOrder {
                player: i,
                iteration: l.iteration(),
            });
        }
    }
    Ok(())
}

fn type_policies(l: &LearnerState, iterates: &[Vec<f64>]) -> Vec<TypePolicy> {
    l.types()
        .support()
        .iter()
        .zip(iterates)
        .map(|(&lambda, p)| TypePolicy {
            lambda,
            policy: p.clone(),
        })
        .collect()
}

/// One sampled DiL-piKL iteration for all players.
///
/// Randomness is consumed player by player: the type draw (skipped for singleton
/// supports) and then the action draw.
pub fn step_sampled<R: Rng + ?Sized>(
    learners: &mut [LearnerState],
    game: &NormalFormGame,
    rng: &mut R,
) -> Result<TraceRow> {
    check_learners(learners, game)?;
    let n = learners.len();
    let mut joint = vec![0; n];
    let mut records = Vec::with_capacity(n);
    let mut kappas = Vec::with_capacity(n);
    for (i, l) in learners.iter_mut().enumerate() {
        let (k, lambda) = l.types().sample(rng);
        let iterates = l.begin_iteration()?.to_vec();
        joint[i] = simplex::sample_index(&iterates[k], rng);
        kappas.push(l.kappa_used());
        records.push(PlayerRecord {
            sampled_lambda: Some(lambda),
            action: Some(joint[i]),
            policy_by_type: type_policies(l, &iterates),
            action_utilities: Vec::new(),
        });
    }
    let mut utilities = Vec::with_capacity(n);
    for (i, l) in learners.iter_mut().enumerate() {
        let u = game.deviation_payoffs(i, &joint);
        let realized = u[joint[i]];
        l.observe(&u, realized)?;
        utilities.push(realized);
        records[i].action_utilities = u;
    }
    Ok(TraceRow {
        t: learners[0].iteration(),
        kappa: kappas,
        per_player: records,
        utilities,
    })
}

/// One full-feedback iteration: utilities are expectations against the opponents'
/// β-mixtures of their current per-type policies.
pub fn step_expected(learners: &mut [LearnerState], game: &NormalFormGame) -> Result<TraceRow> {
    check_learners(learners, game)?;
    let n = learners.len();
    let mut mixtures = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let mut kappas = Vec::with_capacity(n);
    for l in learners.iter_mut() {
        let iterates = l.begin_iteration()?.to_vec();
        mixtures.push(simplex::mixture(l.types().weights(), &iterates));
        kappas.push(l.kappa_used());
        records.push(PlayerRecord {
            sampled_lambda: None,
            action: None,
            policy_by_type: type_policies(l, &iterates),
            action_utilities: Vec::new(),
        });
    }
    let mut utilities = Vec::with_capacity(n);
    for (i, l) in learners.iter_mut().enumerate() {
        let u = game.action_values(i, &mixtures)?;
        let realized = simplex::dot(&u, &mixtures[i]);
        l.observe(&u, realized)?;
        utilities.push(realized);
        records[i].action_utilities = u;
    }
    Ok(TraceRow {
        t: learners[0].iteration(),
        kappa: kappas,
        per_player: records,
        utilities,
    })
}

/// Runs `iterations` steps; rows are kept only when `record` is set.
pub fn run<R: Rng + ?Sized>(
    learners: &mut [LearnerState],
    game: &NormalFormGame,
    iterations: u64,
    feedback: Feedback,
    rng: &mut R,
    record: bool,
) -> Result<Trace> {
    let mut trace = Trace {
        meta: TraceMeta {
            feedback,
            uniform_first_iterate: learners.iter().any(|l| l.options().uniform_first_iterate),
        },
        rows: Vec::new(),
    };
    for _ in 0..iterations {
        let row = match feedback {
            Feedback::Sampled => step_sampled(learners, game, rng)?,
            Feedback::Expected => step_expected(learners, game)?,
        };
        if record {
            trace.rows.push(row);
        }
    }
    Ok(trace)
}

/// Regret matching, kept as a reference baseline for comparison runs.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretMatching {
    regrets: Vec<f64>,
    strategy_sum: Vec<f64>,
}

impl RegretMatching {
    pub fn new(actions: usize) -> Self {
        RegretMatching {
            regrets: vec![0.0; actions],
            strategy_sum: vec![0.0; actions],
        }
    }

    pub fn current(&self) -> Vec<f64> {
        let positive: Vec<f64> = self.regrets.iter().map(|r| r.max(0.0)).collect();
        let total: f64 = positive.iter().sum();
        if total > 0.0 {
            positive.into_iter().map(|r| r / total).collect()
        } else {
            simplex::uniform(self.regrets.len())
        }
    }

    /// Accumulates regrets for the given action utilities against `played`.
    pub fn update(&mut self, played: &[f64], action_utilities: &[f64]) {
        let value = simplex::dot(played, action_utilities);
        for (r, u) in self.regrets.iter_mut().zip(action_utilities) {
            *r += u - value;
        }
        for (s, p) in self.strategy_sum.iter_mut().zip(played) {
            *s += p;
        }
    }

    pub fn average(&self) -> Vec<f64> {
        let total: f64 = self.strategy_sum.iter().sum();
        if total > 0.0 {
            self.strategy_sum.iter().map(|s| s / total).collect()
        } else {
            simplex::uniform(self.strategy_sum.len())
        }
    }
}
