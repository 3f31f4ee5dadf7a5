//! Monte Carlo replication of the lab protocol.
//!
//! Sessions split into groups of three men and three women. Round 1 pays a
//! piece rate, round 2 is a compulsory tournament, and rounds 3 to 5 run the
//! three entry treatments in a random order. Entry decisions come from the
//! signaling model, calibrated to each subject's round-2 score.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{self, SELECTION_RULE};
use crate::model::{validate_params, Message, ModelError, ModelParams, SenderType, SignalGame, Treatment};
use crate::oracle::{enumerate_game, OracleConfig};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty score pool")]
    EmptyPool,
    #[error("n_draws must be at least 1")]
    NoDraws,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }

    pub fn other(self) -> Gender {
        match self {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            _ => Err(ModelError::Unknown { kind: "gender", value: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Public,
    Private,
}

impl Condition {
    pub const BOTH: [Condition; 2] = [Condition::Public, Condition::Private];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Public => "public",
            Condition::Private => "private",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "public" => Ok(Condition::Public),
            "private" => Ok(Condition::Private),
            _ => Err(ModelError::Unknown { kind: "condition", value: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    #[default]
    Equilibrium,
    Payoff,
}

/// Normal ability distribution over mazes solved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ability {
    pub mean: f64,
    pub sd: f64,
}

/// Fixed beliefs for `decision_mode = payoff`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffBeliefs {
    pub enter: f64,
    pub stay: f64,
    pub enter_donate: f64,
    pub enter_keep: f64,
}

/// Experiment configuration. Money amounts are in yen; missing fields take
/// the calibrated defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sessions: usize,
    pub subjects_per_gender: usize,
    /// Share of m-types among women.
    pub q: f64,
    /// Share of m-types among men; `null` means the same as `q`.
    pub q_men: Option<f64>,
    pub lambda_women: f64,
    pub lambda_men: f64,
    pub c_f: f64,
    pub theta_f: f64,
    pub theta_m: f64,
    pub men_ability: Ability,
    /// `null` mirrors the men's distribution.
    pub women_ability: Option<Ability>,
    /// Round-to-round noise around a subject's ability.
    pub score_noise_sd: f64,
    pub piece_rate: u64,
    pub tournament_rate: u64,
    pub preferential_bonus: u32,
    pub condition: Condition,
    pub decision_mode: DecisionMode,
    pub payoff_beliefs: Option<PayoffBeliefs>,
    pub win_prob_draws: usize,
    pub reference_pool_size: usize,
    /// Seed for the reference pools and win-probability draws. Session draws
    /// use the run seed instead.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    /// Calibrated so that private baseline entry among women is close to 0.46
    /// and the public/private entry pattern has the observed signs.
    fn default() -> Self {
        Self {
            sessions: 100,
            subjects_per_gender: 6,
            q: 0.78,
            q_men: Some(0.8),
            lambda_women: 1400.0,
            lambda_men: 0.0,
            c_f: 500.0,
            theta_f: 15000.0,
            theta_m: -9000.0,
            men_ability: Ability { mean: 9.6, sd: 2.9 },
            women_ability: Some(Ability { mean: 10.75, sd: 2.9 }),
            score_noise_sd: 1.0,
            piece_rate: 50,
            tournament_rate: 150,
            preferential_bonus: 1,
            condition: Condition::Private,
            decision_mode: DecisionMode::Equilibrium,
            payoff_beliefs: None,
            win_prob_draws: 50_000,
            reference_pool_size: 5_000,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn q_men(&self) -> f64 {
        self.q_men.unwrap_or(self.q)
    }

    pub fn women_ability(&self) -> Ability {
        self.women_ability.unwrap_or(self.men_ability)
    }

    pub fn ability(&self, gender: Gender) -> Ability {
        match gender {
            Gender::Female => self.women_ability(),
            Gender::Male => self.men_ability,
        }
    }

    pub fn rates(&self) -> Rates {
        Rates { piece: self.piece_rate, tournament: self.tournament_rate }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.subjects_per_gender == 0 || !self.subjects_per_gender.is_multiple_of(3) {
            return bad(format!("subjects_per_gender {} is not a positive multiple of 3", self.subjects_per_gender));
        }
        if self.piece_rate == 0 || self.tournament_rate == 0 {
            return bad("rates must be positive".into());
        }
        for (name, q) in [("q", self.q), ("q_men", self.q_men())] {
            if !(q > 0.0 && q < 1.0) {
                return bad(format!("{name} = {q} is outside (0, 1)"));
            }
        }
        for (name, v) in [("lambda_women", self.lambda_women), ("lambda_men", self.lambda_men)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        for (name, v) in [("c_f", self.c_f), ("theta_f", self.theta_f), ("theta_m", self.theta_m)] {
            if !v.is_finite() {
                return bad(format!("{name} is not finite"));
            }
        }
        for (name, a) in [("men_ability", self.men_ability), ("women_ability", self.women_ability())] {
            if !(a.mean.is_finite() && a.sd.is_finite() && a.sd >= 0.0) {
                return bad(format!("{name} needs a finite mean and sd ≥ 0"));
            }
        }
        if !(self.score_noise_sd.is_finite() && self.score_noise_sd >= 0.0) {
            return bad("score_noise_sd must be finite and ≥ 0".into());
        }
        if self.win_prob_draws == 0 || self.reference_pool_size == 0 {
            return bad("win_prob_draws and reference_pool_size must be positive".into());
        }
        if self.decision_mode == DecisionMode::Payoff && self.payoff_beliefs.is_none() {
            return bad("decision_mode payoff requires payoff_beliefs".into());
        }
        if let Some(b) = self.payoff_beliefs {
            for v in [b.enter, b.stay, b.enter_donate, b.enter_keep] {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("payoff belief {v} is outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Payment scheme of one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Piece,
    Tournament,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rates {
    pub piece: u64,
    pub tournament: u64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { piece: 50, tournament: 150 }
    }
}

impl Rates {
    pub fn payment(&self, scheme: Scheme, score: u32, won: bool) -> u64 {
        match scheme {
            Scheme::Piece => self.piece * u64::from(score),
            Scheme::Tournament if won => self.tournament * u64::from(score),
            Scheme::Tournament => 0,
        }
    }
}

/// Round-2 reference scores by gender, used by the win-probability estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePools {
    pub men: Vec<u32>,
    pub women: Vec<u32>,
}

impl ScorePools {
    pub fn get(&self, gender: Gender) -> &[u32] {
        match gender {
            Gender::Female => &self.women,
            Gender::Male => &self.men,
        }
    }

    /// Pools drawn from the configured ability distributions.
    pub fn generate(config: &ExperimentConfig, seed: u64) -> Self {
        let mut rng = stream(seed, STREAM_POOLS);
        let mut draw = |gender: Gender| {
            let ability = config.ability(gender);
            (0..config.reference_pool_size)
                .map(|_| {
                    let a = sample_normal(&mut rng, ability.mean, ability.sd);
                    score_from(&mut rng, a, config.score_noise_sd)
                })
                .collect()
        };
        let men = draw(Gender::Male);
        let women = draw(Gender::Female);
        Self { men, women }
    }
}

const STREAM_POOLS: u64 = 1;
const STREAM_WIN_PROB: u64 = 2;
const STREAM_SESSION_BASE: u64 = 1 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn sample_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("validated sd").sample(rng)
}

fn score_from(rng: &mut ChaCha8Rng, ability: f64, noise_sd: f64) -> u32 {
    sample_normal(rng, ability, noise_sd).round().max(0.0) as u32
}

/// Whether a subject with `above` strictly better and `tied` equal opponents
/// takes one of two prizes, breaking ties with the uniform `u`.
fn wins_top_two(above: usize, tied: usize, u: f64) -> bool {
    above < 2 && u * (tied as f64 + 1.0) < (2 - above) as f64
}

fn bonus(gender: Gender, treatment: Treatment, amount: u32) -> u32 {
    if gender == Gender::Female && treatment == Treatment::Preferential {
        amount
    } else {
        0
    }
}

/// Probability that a subject with `score` finishes in the top two of a group
/// made of the subject, two same-gender and three other-gender scores drawn
/// with replacement from `pools`. Under the preferential rule every woman gets
/// `bonus_amount` added.
pub fn estimate_win_prob(
    score: u32,
    gender: Gender,
    pools: &ScorePools,
    treatment: Treatment,
    n_draws: usize,
    seed: u64,
    bonus_amount: u32,
) -> Result<f64, SimError> {
    let same = pools.get(gender);
    let other = pools.get(gender.other());
    if same.is_empty() || other.is_empty() {
        return Err(SimError::EmptyPool);
    }
    if n_draws == 0 {
        return Err(SimError::NoDraws);
    }
    let mut rng = stream(seed, STREAM_WIN_PROB);
    let own = score + bonus(gender, treatment, bonus_amount);
    let same_bonus = bonus(gender, treatment, bonus_amount);
    let other_bonus = bonus(gender.other(), treatment, bonus_amount);
    let mut wins = 0usize;
    for _ in 0..n_draws {
        let (mut above, mut tied) = (0, 0);
        let mut tally = |s: u32| {
            if s > own {
                above += 1;
            } else if s == own {
                tied += 1;
            }
        };
        for _ in 0..2 {
            tally(same[rng.random_range(0..same.len())] + same_bonus);
        }
        for _ in 0..3 {
            tally(other[rng.random_range(0..other.len())] + other_bonus);
        }
        if wins_top_two(above, tied, rng.random::<f64>()) {
            wins += 1;
        }
    }
    Ok(wins as f64 / n_draws as f64)
}

/// Maps the protocol onto model primitives for one subject.
pub struct Calibrator<'a> {
    config: &'a ExperimentConfig,
    pools: ScorePools,
    seed: u64,
    win_cache: Mutex<HashMap<(Gender, u32, bool), f64>>,
}

impl<'a> Calibrator<'a> {
    /// Reference data depends only on the config (including `config.seed`),
    /// so runs with different session seeds share one calibration.
    pub fn new(config: &'a ExperimentConfig) -> Self {
        let seed = config.seed;
        Self { config, pools: ScorePools::generate(config, seed), seed, win_cache: Mutex::new(HashMap::new()) }
    }

    pub fn pools(&self) -> &ScorePools {
        &self.pools
    }

    /// Cached win probability. All scores of a gender share one seed, so the
    /// estimate is monotone in the score.
    pub fn win_prob(&self, gender: Gender, score: u32, treatment: Treatment) -> f64 {
        let boosted = treatment == Treatment::Preferential;
        let key = (gender, score, boosted);
        if let Some(&w) = self.win_cache.lock().unwrap().get(&key) {
            return w;
        }
        let seed = self.seed ^ (gender as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let t = if boosted { Treatment::Preferential } else { Treatment::Baseline };
        let w = estimate_win_prob(
            score,
            gender,
            &self.pools,
            t,
            self.config.win_prob_draws,
            seed,
            self.config.preferential_bonus,
        )
        .expect("pools are non-empty");
        *self.win_cache.lock().unwrap().entry(key).or_insert(w)
    }

    /// Model parameters for a subject. For men, `q` is the share of the
    /// male-stereotypical type and `lambda` the weight on being seen as one.
    pub fn params(&self, gender: Gender, score: u32, condition: Condition) -> ModelParams {
        let c = self.config;
        let s = f64::from(score);
        let (q, lambda) = match gender {
            Gender::Female => (c.q, c.lambda_women),
            Gender::Male => (c.q_men(), c.lambda_men),
        };
        ModelParams {
            b_t: c.tournament_rate as f64 * s,
            b_p: c.piece_rate as f64 * s,
            w: self.win_prob(gender, score, Treatment::Baseline),
            w_a: self.win_prob(gender, score, Treatment::Preferential),
            c_f: c.c_f,
            c_m: 0.0,
            theta_f: c.theta_f,
            theta_m: c.theta_m,
            q,
            lambda: if condition == Condition::Public { lambda } else { 0.0 },
        }
    }
}

/// Entry and donation probabilities by latent type (indexed f, m).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Policy {
    pub enter: [f64; 2],
    pub donate: [f64; 2],
}

impl Policy {
    fn from_mix(mix: &[[f64; 4]; 2]) -> Self {
        let mut enter = [0.0; 2];
        let mut donate = [0.0; 2];
        for ty in 0..2 {
            let e = mix[ty][Message::Enter.index()]
                + mix[ty][Message::EnterDonate.index()]
                + mix[ty][Message::EnterKeep.index()];
            enter[ty] = e;
            donate[ty] = if e > 0.0 { mix[ty][Message::EnterDonate.index()] / e } else { 0.0 };
        }
        Self { enter, donate }
    }
}

/// The game a subject plays, with the image type listed first. Women value
/// being seen as the f-type; men value being seen as the m-type.
fn subject_game(params: &ModelParams, gender: Gender, treatment: Treatment) -> (SignalGame, [SenderType; 2]) {
    match gender {
        Gender::Female => (params.game(treatment), [SenderType::F, SenderType::M]),
        Gender::Male => {
            let women = params.game(treatment);
            let mut payoff = [[0.0; 4]; 2];
            payoff[0] = women.payoff[SenderType::M.index()];
            payoff[1] = women.payoff[SenderType::F.index()];
            (SignalGame::new(treatment.messages(), payoff, params.q, params.lambda), [SenderType::M, SenderType::F])
        }
    }
}

/// Max-participation stable equilibrium of a game found by enumeration.
fn select_enumerated(game: &SignalGame, order: [SenderType; 2]) -> Option<Policy> {
    let eqs = enumerate_game(game, &OracleConfig::default(), ["a", "b"]).equilibria;
    let weights = [game.prior, 1.0 - game.prior];
    let participation = |mix: &[[f64; 4]; 2]| {
        let p = Policy::from_mix(mix);
        weights[0] * p.enter[0] + weights[1] * p.enter[1]
    };
    let pick = |stable_only: bool| {
        eqs.iter().filter(|e| !stable_only || e.stable.is_none_or(|s| s.stable)).fold(
            None::<&[[f64; 4]; 2]>,
            |best, e| match best {
                Some(b) if participation(b) >= participation(&e.mix) => Some(b),
                _ => Some(&e.mix),
            },
        )
    };
    let mix = pick(true).or_else(|| pick(false))?;
    let local = Policy::from_mix(mix);
    let mut out = Policy { enter: [0.0; 2], donate: [0.0; 2] };
    for (slot, ty) in order.iter().enumerate() {
        out.enter[ty.index()] = local.enter[slot];
        out.donate[ty.index()] = local.donate[slot];
    }
    Some(out)
}

/// Best response to fixed beliefs, splitting evenly over ties.
fn payoff_policy(params: &ModelParams, gender: Gender, treatment: Treatment, beliefs: PayoffBeliefs) -> Policy {
    let (game, order) = subject_game(params, gender, treatment);
    let belief = [beliefs.enter, beliefs.stay, beliefs.enter_donate, beliefs.enter_keep];
    let mut mix = [[0.0; 4]; 2];
    for (slot, row) in mix.iter_mut().enumerate() {
        let utils: Vec<(Message, f64)> =
            game.messages.iter().map(|&m| (m, game.utility(slot, m, belief[m.index()]))).collect();
        let best = utils.iter().map(|u| u.1).fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<Message> = utils.iter().filter(|u| u.1 >= best - 1e-9).map(|u| u.0).collect();
        for m in &winners {
            row[m.index()] = 1.0 / winners.len() as f64;
        }
    }
    let local = Policy::from_mix(&mix);
    let mut out = Policy { enter: [0.0; 2], donate: [0.0; 2] };
    for (slot, ty) in order.iter().enumerate() {
        out.enter[ty.index()] = local.enter[slot];
        out.donate[ty.index()] = local.donate[slot];
    }
    out
}

/// Decision policy for one subject cell, with any calibration warnings.
pub fn decision_policy(
    params: &ModelParams,
    gender: Gender,
    treatment: Treatment,
    mode: DecisionMode,
    payoff_beliefs: Option<PayoffBeliefs>,
) -> (Policy, Option<String>) {
    if mode == DecisionMode::Payoff {
        let beliefs = payoff_beliefs.expect("validated config");
        return (payoff_policy(params, gender, treatment, beliefs), None);
    }
    let report = validate_params(params, treatment);
    if gender == Gender::Female && report.is_ok() {
        let results = closed_form::solve(params, treatment).expect("validated params");
        let pick = closed_form::select_max_participation(&results, params.q).expect("non-empty");
        let p = pick.profile;
        let policy = Policy { enter: [p.r, p.rho], donate: [p.r_t.unwrap_or(0.0), p.rho_t.unwrap_or(0.0)] };
        return (policy, None);
    }
    let warning = (!report.is_ok()).then(|| format!("{gender} {treatment} b_P={}: {report}", params.b_p));
    let (game, order) = subject_game(params, gender, treatment);
    let policy = select_enumerated(&game, order).unwrap_or_else(|| {
        let prior = game.prior;
        let neutral = PayoffBeliefs { enter: prior, stay: prior, enter_donate: prior, enter_keep: prior };
        payoff_policy(params, gender, treatment, neutral)
    });
    (policy, warning)
}

/// One subject-round observation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryRecord {
    pub session_id: usize,
    pub subject_id: usize,
    pub gender: Gender,
    pub latent_type: SenderType,
    pub condition: Condition,
    /// `piece_rate`, `tournament` or a treatment name.
    pub treatment: String,
    pub round_order: u8,
    pub entered: bool,
    pub score: u32,
    pub won: bool,
    pub donation_share: f64,
    pub payment: u64,
}

impl EntryRecord {
    pub const HEADER: [&'static str; 12] = [
        "session_id",
        "subject_id",
        "gender",
        "latent_type",
        "condition",
        "treatment",
        "round_order",
        "entered",
        "score",
        "won",
        "donation_share",
        "payment",
    ];

    pub fn treatment(&self) -> Option<Treatment> {
        self.treatment.parse().ok()
    }

    pub fn fields(&self) -> [String; 12] {
        [
            self.session_id.to_string(),
            self.subject_id.to_string(),
            self.gender.as_str().to_string(),
            self.latent_type.as_str().to_string(),
            self.condition.as_str().to_string(),
            self.treatment.clone(),
            self.round_order.to_string(),
            u8::from(self.entered).to_string(),
            self.score.to_string(),
            u8::from(self.won).to_string(),
            format!("{:.6}", self.donation_share),
            self.payment.to_string(),
        ]
    }

    pub fn from_fields(row: &csv::StringRecord) -> Result<Self, String> {
        if row.len() != 12 {
            return Err(format!("expected 12 fields, found {}", row.len()));
        }
        let num = |i: usize| row[i].parse::<u64>().map_err(|e| format!("{}: {e}", Self::HEADER[i]));
        let flag = |i: usize| match &row[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("{}: {other} is not 0/1", Self::HEADER[i])),
        };
        let latent_type = match &row[3] {
            "f" => SenderType::F,
            "m" => SenderType::M,
            other => return Err(format!("latent_type: {other}")),
        };
        Ok(Self {
            session_id: num(0)? as usize,
            subject_id: num(1)? as usize,
            gender: row[2].parse().map_err(|e: ModelError| e.to_string())?,
            latent_type,
            condition: row[4].parse().map_err(|e: ModelError| e.to_string())?,
            treatment: row[5].to_string(),
            round_order: num(6)? as u8,
            entered: flag(7)?,
            score: num(8)? as u32,
            won: flag(9)?,
            donation_share: row[10].parse().map_err(|e| format!("donation_share: {e}"))?,
            payment: num(11)?,
        })
    }
}

/// Records of one session, ordered by subject then round.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionOutcome {
    pub session_id: usize,
    pub treatment_order: [Treatment; 3],
    pub records: Vec<EntryRecord>,
}

struct Subject {
    gender: Gender,
    latent: SenderType,
    group: usize,
    ability: f64,
}

type PolicyKey = (Gender, u32, Treatment);

/// Shared state across sessions: calibration and per-cell policies.
pub struct Simulator<'a> {
    config: &'a ExperimentConfig,
    calibrator: Calibrator<'a>,
    policies: Mutex<HashMap<PolicyKey, Policy>>,
    warnings: Mutex<BTreeSet<String>>,
}

impl<'a> Simulator<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Self {
        Self {
            config,
            calibrator: Calibrator::new(config),
            policies: Mutex::new(HashMap::new()),
            warnings: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn calibrator(&self) -> &Calibrator<'a> {
        &self.calibrator
    }

    pub fn policy(&self, gender: Gender, score: u32, treatment: Treatment) -> Policy {
        let key = (gender, score, treatment);
        if let Some(p) = self.policies.lock().unwrap().get(&key) {
            return *p;
        }
        let params = self.calibrator.params(gender, score, self.config.condition);
        let (policy, warning) =
            decision_policy(&params, gender, treatment, self.config.decision_mode, self.config.payoff_beliefs);
        if let Some(w) = warning {
            self.warnings.lock().unwrap().insert(w);
        }
        *self.policies.lock().unwrap().entry(key).or_insert(policy)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap().iter().cloned().collect()
    }

    /// Runs one session. Every random draw happens regardless of decisions,
    /// so changing a policy never shifts the random stream.
    pub fn run_session(&self, session_id: usize, seed: u64) -> SessionOutcome {
        let c = self.config;
        let rates = c.rates();
        let mut rng = stream(seed, STREAM_SESSION_BASE + session_id as u64);
        let n = c.subjects_per_gender;

        let mut subjects = Vec::with_capacity(2 * n);
        for gender in [Gender::Female, Gender::Male] {
            let q = if gender == Gender::Female { c.q } else { c.q_men() };
            let ability = c.ability(gender);
            for i in 0..n {
                let latent = if rng.random::<f64>() < q { SenderType::M } else { SenderType::F };
                let ability = sample_normal(&mut rng, ability.mean, ability.sd);
                subjects.push(Subject { gender, latent, group: i / 3, ability });
            }
        }
        let mut order = Treatment::ALL;
        order.shuffle(&mut rng);

        let mut rounds: Vec<Vec<EntryRecord>> = (0..subjects.len()).map(|_| Vec::with_capacity(5)).collect();
        let record = |sub: &Subject, id: usize, treatment: &str, round: u8| EntryRecord {
            session_id,
            subject_id: id,
            gender: sub.gender,
            latent_type: sub.latent,
            condition: c.condition,
            treatment: treatment.to_string(),
            round_order: round,
            entered: false,
            score: 0,
            won: false,
            donation_share: 0.0,
            payment: 0,
        };

        for (id, sub) in subjects.iter().enumerate() {
            let score = score_from(&mut rng, sub.ability, c.score_noise_sd);
            let mut r = record(sub, id, "piece_rate", 1);
            r.score = score;
            r.payment = rates.payment(Scheme::Piece, score, false);
            rounds[id].push(r);
        }

        let round2: Vec<u32> = subjects.iter().map(|s| score_from(&mut rng, s.ability, c.score_noise_sd)).collect();
        let tiebreak: Vec<f64> = subjects.iter().map(|_| rng.random::<f64>()).collect();
        for (id, sub) in subjects.iter().enumerate() {
            let members = group_members(&subjects, sub.group);
            let mut ranked: Vec<usize> = members.clone();
            ranked.sort_by(|&a, &b| round2[b].cmp(&round2[a]).then(tiebreak[a].total_cmp(&tiebreak[b])));
            let won = ranked[..2].contains(&id);
            let mut r = record(sub, id, "tournament", 2);
            r.entered = true;
            r.score = round2[id];
            r.won = won;
            r.payment = rates.payment(Scheme::Tournament, round2[id], won);
            rounds[id].push(r);
        }

        for (k, &treatment) in order.iter().enumerate() {
            for (id, sub) in subjects.iter().enumerate() {
                let score = score_from(&mut rng, sub.ability, c.score_noise_sd);
                let (u_enter, u_donate, u_tie) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
                let policy = self.policy(sub.gender, round2[id], treatment);
                let ty = sub.latent.index();
                let entered = u_enter < policy.enter[ty];
                let donated = treatment == Treatment::Prosocial && u_donate < policy.donate[ty];

                let own = score + bonus(sub.gender, treatment, c.preferential_bonus);
                let (mut above, mut tied) = (0, 0);
                for other in group_members(&subjects, sub.group) {
                    if other == id {
                        continue;
                    }
                    let s = round2[other] + bonus(subjects[other].gender, treatment, c.preferential_bonus);
                    if s > own {
                        above += 1;
                    } else if s == own {
                        tied += 1;
                    }
                }
                let won = entered && wins_top_two(above, tied, u_tie);
                let mut r = record(sub, id, treatment.as_str(), 3 + k as u8);
                r.entered = entered;
                r.score = score;
                r.won = won;
                r.donation_share = if won && donated { 1.0 } else { 0.0 };
                r.payment = if entered {
                    rates.payment(Scheme::Tournament, score, won)
                } else {
                    rates.payment(Scheme::Piece, score, false)
                };
                rounds[id].push(r);
            }
        }

        SessionOutcome { session_id, treatment_order: order, records: rounds.into_iter().flatten().collect() }
    }
}

fn group_members(subjects: &[Subject], group: usize) -> Vec<usize> {
    subjects.iter().enumerate().filter(|(_, s)| s.group == group).map(|(i, _)| i).collect()
}

/// Simulated data set plus provenance of the decision rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<EntryRecord>,
    pub meta: SimulationMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationMeta {
    pub seed: u64,
    pub sessions: usize,
    pub condition: Condition,
    pub decision_mode: DecisionMode,
    pub selection_rule: String,
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
}

/// Runs `config.sessions` sessions in parallel; the output does not depend on
/// the number of threads.
pub fn simulate_experiment(config: &ExperimentConfig, seed: u64) -> Result<Dataset, SimError> {
    config.validate()?;
    let sim = Simulator::new(config);
    let sessions: Vec<SessionOutcome> =
        (0..config.sessions).into_par_iter().map(|i| sim.run_session(i, seed)).collect();
    let records = sessions.into_iter().flat_map(|s| s.records).collect();
    Ok(Dataset {
        records,
        meta: SimulationMeta {
            seed,
            sessions: config.sessions,
            condition: config.condition,
            decision_mode: config.decision_mode,
            selection_rule: SELECTION_RULE.to_string(),
            warnings: sim.warnings(),
            config: config.clone(),
        },
    })
}

pub fn write_records<W: Write>(records: &[EntryRecord], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EntryRecord::HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EntryRecord>, SimError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(EntryRecord::HEADER) {
        return Err(SimError::InvalidConfig(format!("unexpected header in {}", path.display())));
    }
    reader
        .records()
        .map(|row| {
            let row = row?;
            EntryRecord::from_fields(&row).map_err(SimError::InvalidConfig)
        })
        .collect()
}

/// Writes `<path>` (records) and `<path>.meta.json`.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<(), SimError> {
    write_records(&dataset.records, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".meta.json");
    std::fs::write(meta_path, serde_json::to_string_pretty(&dataset.meta)? + "\n")?;
    Ok(())
}
