//! Config-driven experiment runner: one JSON document names a pipeline, its inputs and a
//! master seed, and every output file is listed with its SHA-256 in `manifest.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::game::{make_builtin_game, AnchorPolicy, GameParams, NormalFormGame};
use crate::learners::{self, Feedback, LearnerOptions, LearnerState, TemperatureSchedule, Trace, TraceRow, TypeDistribution, TypePolicy};
use crate::markov::{
    check_anchors, make_random_markov, make_repeated_markov, random_anchors, uniform_anchors, RandomMarkovParams,
    StateAnchors, TabularMarkovGame,
};
use crate::oracle::{self, BneOptions, RegretReport};
use crate::popeval::{self, AgentSpec, PopGame};
use crate::rating::{self, FitOptions};
use crate::rl::{Checkpoint, MetricsRow, TrainConfig, TrainMode, Trainer};
use crate::serde_ext::{self, fmt_real, to_json_line};

pub const BUILTIN_GAMES: &[&str] = &["matching_pennies", "rock_paper_scissors", "random_zero_sum", "random_general_sum"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Episodes between RL checkpoints; overrides `train.checkpoint_every`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    #[serde(flatten)]
    pub pipeline: Pipeline,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pipeline {
    Solve(SolveSpec),
    Oracle(OracleSpec),
    Rl(RlSpec),
    Rate(RateSpec),
    Popeval(PopevalSpec),
}

impl Pipeline {
    pub fn kind(&self) -> &'static str {
        match self {
            Pipeline::Solve(_) => "solve",
            Pipeline::Oracle(_) => "oracle",
            Pipeline::Rl(_) => "rl",
            Pipeline::Rate(_) => "rate",
            Pipeline::Popeval(_) => "popeval",
        }
    }
}

/// A normal-form game: a builtin with parameters, or a game JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameSpec {
    Builtin {
        builtin: String,
        #[serde(default)]
        params: GameParams,
    },
    File {
        file: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarkovSpec {
    /// A normal-form stage game repeated `horizon` times.
    Repeated {
        repeated: GameSpec,
        horizon: usize,
        #[serde(default = "one")]
        gamma: f64,
    },
    Random {
        random: RandomMarkovParams,
    },
    File {
        file: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

/// Per-state anchors for Markov pipelines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorsSpec {
    #[default]
    Uniform,
    Random { seed: u64 },
    /// `[state][player][action]`.
    Explicit(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Types {1e-4, 1e-1}, acting with λ = 1e-4.
    DiplodocusLow,
    /// Types {1e-2, 1e-1}, acting with λ = 1e-2.
    DiplodocusHigh,
    /// The distinguished player searches with λ = 0; everyone else plays the anchor.
    Brbot,
}

pub const PRESETS: &[(&str, &str)] = &[
    ("diplodocus_low", "types {1e-4, 1e-1} uniform, act λ = 1e-4"),
    ("diplodocus_high", "types {1e-2, 1e-1} uniform, act λ = 1e-2"),
    ("brbot", "distinguished player λ = 0, all others λ = inf"),
];

/// Either one value shared by every player or one per player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerPlayer<T> {
    Each(Vec<T>),
    All(T),
}

impl<T: Clone> PerPlayer<T> {
    fn expand(&self, players: usize) -> Result<Vec<T>> {
        match self {
            PerPlayer::All(x) => Ok(vec![x.clone(); players]),
            PerPlayer::Each(v) => {
                check_len("per-player entries", players, v.len())?;
                Ok(v.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Player singled out by the `brbot` preset.
    #[serde(default)]
    pub distinguished_player: usize,
    /// Overrides the preset's types.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub types: Option<PerPlayer<TypeDistribution>>,
    /// Defaults to the preset's act-λ, else the smallest λ in each player's support.
    #[serde(default, with = "serde_ext::extended_opt", skip_serializing_if = "Option::is_none")]
    pub act_lambda: Option<f64>,
    #[serde(default = "TemperatureSchedule::adaptive")]
    pub schedule: TemperatureSchedule,
    /// One anchor per player; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub uniform_first_iterate: bool,
    #[serde(default = "yes")]
    pub argmax_fallback: bool,
}

fn yes() -> bool {
    true
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec {
            preset: None,
            distinguished_player: 0,
            types: None,
            act_lambda: None,
            schedule: TemperatureSchedule::adaptive(),
            anchors: None,
            uniform_first_iterate: false,
            argmax_fallback: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Jsonl,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    pub game: GameSpec,
    #[serde(default)]
    pub learner: LearnerSpec,
    pub iterations: u64,
    #[serde(default)]
    pub feedback: Feedback,
    #[serde(default = "default_formats")]
    pub trace_formats: Vec<TraceFormat>,
}

fn default_formats() -> Vec<TraceFormat> {
    vec![TraceFormat::Jsonl]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub game: GameSpec,
    #[serde(default)]
    pub learner: LearnerSpec,
    #[serde(default)]
    pub solver: BneOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSpec {
    pub game: MarkovSpec,
    #[serde(default)]
    pub anchors: AnchorsSpec,
    /// `train.seed` is replaced by the master seed.
    #[serde(default)]
    pub train: TrainConfig,
    /// Compare against the backward-induction oracle; defaults to on for two-player
    /// zero-sum games outside best-response mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<bool>,
    #[serde(default)]
    pub solver: BneOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    /// CSV with columns `game_id, seat_index, player_id, score_share`.
    pub games_csv: PathBuf,
    #[serde(default)]
    pub fit: FitOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopevalSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markov: Option<MarkovSpec>,
    /// Normal-form anchors, one per seat; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub state_anchors: AnchorsSpec,
    pub candidate: AgentSpec,
    pub baselines: Vec<AgentSpec>,
    #[serde(default = "default_games")]
    pub games: usize,
}

fn default_games() -> usize {
    popeval::DEFAULT_GAMES
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entry(&self, path: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

/// Reads a config file; relative paths inside it resolve against the returned directory.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let text = fs::read_to_string(path)?;
    let config: ExperimentConfig = serde_json::from_str(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

/// `ChaCha8(seed)` on stream `index`: the per-run generator of run `index`.
pub fn sub_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn list_builtins() -> String {
    let mut out = String::from("games:\n");
    for g in BUILTIN_GAMES {
        out.push_str(&format!("  {g}\n"));
    }
    out.push_str("markov games:\n  repeated (stage game + horizon)\n  random (seeded layered game)\n");
    out.push_str("presets:\n");
    for (name, what) in PRESETS {
        out.push_str(&format!("  {name}: {what}\n"));
    }
    out
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(base: &Path, p: &Path, field: &str) -> Result<PathBuf> {
    let full = resolve_path(base, p);
    if !full.is_file() {
        return Err(Error::validation(field, format!("file {} does not exist", full.display())));
    }
    Ok(full)
}

pub fn build_game(spec: &GameSpec, base: &Path) -> Result<NormalFormGame> {
    match spec {
        GameSpec::Builtin { builtin, params } => make_builtin_game(builtin, params),
        GameSpec::File { file } => {
            let path = require_file(base, file, "game.file")?;
            Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
        }
    }
}

pub fn build_markov(spec: &MarkovSpec, base: &Path) -> Result<TabularMarkovGame> {
    match spec {
        MarkovSpec::Repeated {
            repeated,
            horizon,
            gamma,
        } => make_repeated_markov(&build_game(repeated, base)?, *horizon, *gamma),
        MarkovSpec::Random { random } => make_random_markov(random),
        MarkovSpec::File { file } => {
            let path = require_file(base, file, "game.file")?;
            Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
        }
    }
}

pub fn build_state_anchors(spec: &AnchorsSpec, game: &TabularMarkovGame) -> Result<StateAnchors> {
    let anchors = match spec {
        AnchorsSpec::Uniform => uniform_anchors(game),
        AnchorsSpec::Random { seed } => random_anchors(game, *seed),
        AnchorsSpec::Explicit(v) => v
            .iter()
            .map(|st| st.iter().map(|p| AnchorPolicy::new(p.clone())).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?,
    };
    check_anchors(game, &anchors)?;
    Ok(anchors)
}

fn build_anchors(spec: &Option<Vec<Vec<f64>>>, game: &NormalFormGame) -> Result<Vec<AnchorPolicy>> {
    match spec {
        None => Ok(game.action_counts().iter().map(|&n| AnchorPolicy::uniform(n)).collect()),
        Some(v) => {
            check_len("anchors", game.player_count(), v.len())?;
            v.iter()
                .enumerate()
                .map(|(i, p)| {
                    check_len("anchor actions", game.action_count(i), p.len())?;
                    AnchorPolicy::new(p.clone())
                })
                .collect()
        }
    }
}

/// Type distributions and act-λ of a preset for `players` players.
pub fn preset_types(preset: Preset, players: usize, distinguished: usize) -> Result<(Vec<TypeDistribution>, Vec<f64>)> {
    let shared = |support: Vec<f64>, act: f64| -> Result<(Vec<TypeDistribution>, Vec<f64>)> {
        let t = TypeDistribution::uniform(support)?;
        Ok((vec![t; players], vec![act; players]))
    };
    match preset {
        Preset::DiplodocusLow => shared(vec![1e-4, 1e-1], 1e-4),
        Preset::DiplodocusHigh => shared(vec![1e-2, 1e-1], 1e-2),
        Preset::Brbot => {
            if distinguished >= players {
                return Err(Error::validation(
                    "learner.distinguished_player",
                    format!("player {distinguished} does not exist in a {players}-player game"),
                ));
            }
            let lambdas: Vec<f64> = (0..players)
                .map(|i| if i == distinguished { 0.0 } else { f64::INFINITY })
                .collect();
            Ok((lambdas.iter().map(|&l| TypeDistribution::singleton(l)).collect(), lambdas))
        }
    }
}

/// Learners built from a config, with the λ each one acts with.
#[derive(Clone, Debug)]
pub struct ResolvedLearners {
    pub learners: Vec<LearnerState>,
    pub act_lambdas: Vec<f64>,
}

pub fn resolve_learners(spec: &LearnerSpec, game: &NormalFormGame) -> Result<ResolvedLearners> {
    let players = game.player_count();
    let (preset_types, preset_act) = match spec.preset {
        Some(p) => {
            let (t, a) = preset_types(p, players, spec.distinguished_player)?;
            (Some(t), Some(a))
        }
        None => (None, None),
    };
    let types = match (&spec.types, preset_types) {
        (Some(t), _) => t
            .expand(players)
            .map_err(|e| Error::validation("learner.types", e.to_string()))?,
        (None, Some(t)) => t,
        (None, None) => return Err(Error::validation("learner.types", "give `types` or a `preset`")),
    };
    let act_lambdas: Vec<f64> = match (spec.act_lambda, preset_act) {
        (Some(a), _) => vec![a; players],
        (None, Some(a)) => a,
        (None, None) => types.iter().map(|t| t.support()[0]).collect(),
    };
    let anchors = build_anchors(&spec.anchors, game).map_err(|e| Error::validation("learner.anchors", e.to_string()))?;
    spec.schedule
        .validate()
        .map_err(|e| Error::validation("learner.schedule", e.to_string()))?;
    let options = LearnerOptions {
        uniform_first_iterate: spec.uniform_first_iterate,
        argmax_fallback: spec.argmax_fallback,
    };
    let learners = anchors
        .into_iter()
        .zip(types)
        .enumerate()
        .map(|(i, (a, t))| LearnerState::new(i, game.action_count(i), a, t, spec.schedule, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolvedLearners { learners, act_lambdas })
}

impl ExperimentConfig {
    /// Checks the config without running it: referenced files exist, counts are positive
    /// and games, anchors and learners can be built.
    pub fn validate(&self, base: &Path) -> Result<()> {
        match &self.pipeline {
            Pipeline::Solve(s) => {
                if s.iterations < 1 {
                    return Err(Error::validation("iterations", "must be at least 1"));
                }
                if s.trace_formats.is_empty() {
                    return Err(Error::validation("trace_formats", "name at least one format"));
                }
                let game = build_game(&s.game, base)?;
                resolve_learners(&s.learner, &game)?;
            }
            Pipeline::Oracle(s) => {
                let game = build_game(&s.game, base)?;
                resolve_learners(&s.learner, &game)?;
            }
            Pipeline::Rl(s) => {
                let game = build_markov(&s.game, base)?;
                build_state_anchors(&s.anchors, &game)?;
                if self.checkpoint_every == Some(0) {
                    return Err(Error::validation("checkpoint_every", "must be at least 1"));
                }
                s.train.validate(game.player_count())?;
            }
            Pipeline::Rate(s) => {
                require_file(base, &s.games_csv, "games_csv")?;
            }
            Pipeline::Popeval(s) => {
                if s.games < 1 {
                    return Err(Error::validation("games", "must be at least 1"));
                }
                if s.baselines.is_empty() {
                    return Err(Error::validation("baselines", "the baseline pool is empty"));
                }
                match (&s.game, &s.markov) {
                    (Some(g), None) => {
                        let game = build_game(g, base)?;
                        build_anchors(&s.anchors, &game)?;
                    }
                    (None, Some(m)) => {
                        let game = build_markov(m, base)?;
                        build_state_anchors(&s.state_anchors, &game)?;
                    }
                    _ => return Err(Error::validation("game", "give exactly one of `game` and `markov`")),
                }
            }
        }
        Ok(())
    }
}

/// Collects output files and hashes them for the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.record(rel, bytes);
        Ok(())
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut line = to_json_line(value)?;
        line.push('\n');
        self.write(rel, line.as_bytes())
    }

    /// Writes through `emit` into a file and records its hash.
    fn emit(&mut self, rel: &str, emit: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let path = self.dir.join(rel);
        emit(&path)?;
        let bytes = fs::read(&path)?;
        self.record(rel, &bytes);
        Ok(())
    }
}

/// Runs the configured pipeline and writes `manifest.json` next to its outputs.
pub fn run_experiment(config: &ExperimentConfig, base: &Path) -> Result<Manifest> {
    config.validate(base)?;
    let mut out = Outputs::new(resolve_path(base, &config.output_dir))?;
    match &config.pipeline {
        Pipeline::Solve(s) => run_solve(s, config.seed, base, &mut out)?,
        Pipeline::Oracle(s) => run_oracle(s, base, &mut out)?,
        Pipeline::Rl(s) => run_rl(s, config, base, &mut out)?,
        Pipeline::Rate(s) => run_rate(s, base, &mut out)?,
        Pipeline::Popeval(s) => run_popeval(s, config.seed, base, &mut out)?,
    }
    let mut files = out.files.clone();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        kind: config.pipeline.kind().to_string(),
        seed: config.seed,
        files,
    };
    let mut text = to_json_line(&manifest)?;
    text.push('\n');
    fs::write(out.dir.join("manifest.json"), text)?;
    Ok(manifest)
}

#[derive(Serialize)]
struct PlayerSummary {
    player: usize,
    #[serde(with = "serde_ext::extended")]
    act_lambda: f64,
    act_policy: Vec<f64>,
    average_policies: Vec<TypePolicy>,
    regret: Vec<RegretReport>,
}

#[derive(Serialize)]
struct SolveReport<'a> {
    iterations: u64,
    meta: &'a learners::TraceMeta,
    /// Bound on |payoff| used as U in the regret bound.
    payoff_bound: f64,
    /// Step size η when the schedule has one (bounds are reported only then).
    eta: Option<f64>,
    players: Vec<PlayerSummary>,
}

fn run_solve(s: &SolveSpec, seed: u64, base: &Path, out: &mut Outputs) -> Result<()> {
    let game = build_game(&s.game, base)?;
    let ResolvedLearners {
        mut learners,
        act_lambdas,
    } = resolve_learners(&s.learner, &game)?;
    let mut rng = sub_rng(seed, 0);
    let trace = learners::run(&mut learners, &game, s.iterations, s.feedback, &mut rng, true)?;
    for format in &s.trace_formats {
        let rel = match format {
            TraceFormat::Jsonl => "trace.jsonl",
            TraceFormat::Csv => "trace.csv",
        };
        out.emit(rel, |p| emit_trace(&trace, format, p))?;
    }
    let eta = s.learner.schedule.eta();
    let players = learners
        .iter()
        .zip(&act_lambdas)
        .map(|(l, &act)| {
            let i = l.player();
            let mut regret = Vec::new();
            for &lambda in l.types().support() {
                if !lambda.is_finite() {
                    continue;
                }
                let mut r = oracle::regularized_regret(&trace, i, lambda, l.anchor())?;
                if let (Some(eta), true) = (eta, lambda > 0.0) {
                    r = r.with_bound(game.payoff_bound(), eta, l.anchor())?;
                }
                regret.push(r);
            }
            let average_policies = l
                .types()
                .support()
                .iter()
                .enumerate()
                .map(|(k, &lambda)| {
                    Ok(TypePolicy {
                        lambda,
                        policy: l.average_policy_at(k)?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(PlayerSummary {
                player: i,
                act_lambda: act,
                act_policy: l.act_policy(act)?,
                average_policies,
                regret,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.write_json(
        "regret.json",
        &SolveReport {
            iterations: s.iterations,
            meta: &trace.meta,
            payoff_bound: game.payoff_bound(),
            eta,
            players,
        },
    )
}

#[derive(Serialize)]
struct OracleReport<'a> {
    /// Regularized utility convention: `u_i(x) − λ·KL(x_i ‖ τ_i)`, so each type's policy
    /// is `∝ τ·exp(u/λ)`.
    convention: &'static str,
    profile: &'a oracle::RegularizedProfile,
    regularized_exploitability: f64,
    unregularized_exploitability: f64,
}

fn run_oracle(s: &OracleSpec, base: &Path, out: &mut Outputs) -> Result<()> {
    let game = build_game(&s.game, base)?;
    let resolved = resolve_learners(&s.learner, &game)?;
    let anchors: Vec<AnchorPolicy> = resolved.learners.iter().map(|l| l.anchor().clone()).collect();
    let types: Vec<TypeDistribution> = resolved.learners.iter().map(|l| l.types().clone()).collect();
    let profile = oracle::solve_regularized_bne(&game, &anchors, &types, &s.solver)?;
    let report = OracleReport {
        convention: "u_i(x) - lambda * KL(x_i || anchor_i)",
        regularized_exploitability: oracle::regularized_exploitability(&game, &anchors, &profile)?,
        unregularized_exploitability: oracle::unregularized_exploitability(&game, &profile.mixtures())?,
        profile: &profile,
    };
    out.write_json("oracle.json", &report)
}

fn run_rl(s: &RlSpec, config: &ExperimentConfig, base: &Path, out: &mut Outputs) -> Result<()> {
    let game = build_markov(&s.game, base)?;
    let anchors = build_state_anchors(&s.anchors, &game)?;
    let mut train = s.train.clone();
    train.seed = config.seed;
    if let Some(every) = config.checkpoint_every {
        train.checkpoint_every = every;
    }
    let best_response = matches!(train.mode, TrainMode::BestResponse { .. });
    let use_oracle = s
        .oracle
        .unwrap_or(game.is_zero_sum() && game.player_count() == 2 && !best_response);
    let solution = if use_oracle {
        let types = train.effective_types(game.player_count());
        Some(oracle::solve_markov_backward(&game, &anchors, &types, &s.solver)?)
    } else {
        None
    };
    let episodes = train.episodes;
    let every = train.checkpoint_every.max(1);
    let mut trainer = Trainer::new(&game, &anchors, train)?;
    let mut metrics = vec![trainer.metrics(solution.as_ref())?];
    for e in 1..=episodes {
        trainer.run_episode()?;
        if e % every == 0 || e == episodes {
            metrics.push(trainer.metrics(solution.as_ref())?);
            if e != episodes {
                out.write_json(&format!("checkpoints/episode_{e:08}.json"), &trainer.checkpoint())?;
            }
        }
    }
    out.emit("metrics.csv", |p| emit_metrics(&metrics, &TraceFormat::Csv, p))?;
    let last: Checkpoint = trainer.checkpoint();
    out.write_json("checkpoint.json", &last)?;
    if let Some(sol) = &solution {
        out.write_json("oracle_values.json", &sol.values)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RateReport<'a> {
    model: &'a rating::RatingModel,
    games: usize,
    iterations: usize,
    gradient_norm: f64,
}

fn run_rate(s: &RateSpec, base: &Path, out: &mut Outputs) -> Result<()> {
    let path = require_file(base, &s.games_csv, "games_csv")?;
    let games = rating::read_games_csv(fs::File::open(path)?)?;
    let report = rating::fit_ratings(&games, &s.fit)?;
    out.write_json(
        "model.json",
        &RateReport {
            model: &report.model,
            games: games.len(),
            iterations: report.iterations,
            gradient_norm: report.gradient_norm,
        },
    )
}

#[derive(Serialize)]
struct PopevalSummary<'a> {
    candidate: &'a str,
    games: usize,
    samples: usize,
    mean: f64,
    standard_error: f64,
}

fn run_popeval(s: &PopevalSpec, seed: u64, base: &Path, out: &mut Outputs) -> Result<()> {
    let report = match (&s.game, &s.markov) {
        (Some(g), _) => {
            let game = build_game(g, base)?;
            let anchors = build_anchors(&s.anchors, &game)?;
            let pg = PopGame::Normal {
                game: &game,
                anchors: &anchors,
            };
            popeval::run_population_eval(&s.candidate, &s.baselines, &pg, s.games, seed)?
        }
        (None, Some(m)) => {
            let game = build_markov(m, base)?;
            let anchors = build_state_anchors(&s.state_anchors, &game)?;
            let pg = PopGame::Markov {
                game: &game,
                anchors: &anchors,
            };
            popeval::run_population_eval(&s.candidate, &s.baselines, &pg, s.games, seed)?
        }
        (None, None) => return Err(Error::validation("game", "give exactly one of `game` and `markov`")),
    };
    out.write_json(
        "report.json",
        &PopevalSummary {
            candidate: &report.candidate,
            games: report.games,
            samples: report.samples,
            mean: report.mean,
            standard_error: report.standard_error,
        },
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["game_id", "seat", "agent", "score"])?;
    for g in &report.records {
        for (seat, (agent, score)) in g.seats.iter().zip(&g.scores).enumerate() {
            w.write_record([g.game_id.to_string(), seat.to_string(), agent.clone(), fmt_real(*score)])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    out.write("games.csv", &bytes)
}

fn join_reals(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_real(x)).collect::<Vec<_>>().join(";")
}

fn opt_field<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub const TRACE_CSV_HEADER: [&str; 9] = [
    "t",
    "player",
    "kappa",
    "sampled_lambda",
    "action",
    "utility",
    "lambda",
    "policy",
    "action_utilities",
];

/// Writes a trace as JSON lines (one record per iteration) or CSV (one row per
/// iteration, player and type; vectors `;`-separated).
pub fn emit_trace(trace: &Trace, format: &TraceFormat, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        TraceFormat::Jsonl => {
            for row in &trace.rows {
                writeln!(f, "{}", to_json_line(row)?)?;
            }
        }
        TraceFormat::Csv => {
            let mut w = csv::Writer::from_writer(f);
            w.write_record(TRACE_CSV_HEADER)?;
            for row in &trace.rows {
                for (i, rec) in row.per_player.iter().enumerate() {
                    for tp in &rec.policy_by_type {
                        w.write_record([
                            row.t.to_string(),
                            i.to_string(),
                            fmt_real(row.kappa[i]),
                            opt_field(rec.sampled_lambda.map(fmt_real)),
                            opt_field(rec.action),
                            fmt_real(row.utilities[i]),
                            fmt_real(tp.lambda),
                            join_reals(&tp.policy),
                            join_reals(&rec.action_utilities),
                        ])?;
                    }
                }
            }
            w.flush()?;
            return Ok(());
        }
    }
    f.flush()?;
    Ok(())
}

/// Reads the rows of a JSON-lines trace written by [`emit_trace`].
pub fn read_trace_jsonl(path: &Path, meta: learners::TraceMeta) -> Result<Trace> {
    let text = fs::read_to_string(path)?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<TraceRow>)
        .collect::<serde_json::Result<Vec<_>>>()?;
    Ok(Trace { meta, rows })
}

pub const METRICS_CSV_HEADER: [&str; 5] = [
    "episode",
    "max_value_error",
    "mean_value_error",
    "mean_policy_kl",
    "mean_exploitability",
];

pub fn emit_metrics(rows: &[MetricsRow], format: &TraceFormat, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        TraceFormat::Jsonl => {
            for row in rows {
                writeln!(f, "{}", to_json_line(row)?)?;
            }
            f.flush()?;
        }
        TraceFormat::Csv => {
            let mut w = csv::Writer::from_writer(f);
            w.write_record(METRICS_CSV_HEADER)?;
            for r in rows {
                w.write_record([
                    r.episode.to_string(),
                    fmt_real(r.max_value_error),
                    fmt_real(r.mean_value_error),
                    fmt_real(r.mean_policy_kl),
                    fmt_real(r.mean_exploitability),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
