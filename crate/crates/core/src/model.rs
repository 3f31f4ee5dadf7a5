//! Domain types, payoffs, Bayesian posteriors and the D1 off-path rule.
//!
//! Women come in two latent types: `f` (female-stereotypical, entry cost
//! `c_f`, altruism `theta_f`) and `m` (male-stereotypical, no entry cost,
//! altruism `theta_m < 0`). An audience observes the entry decision (and, in
//! the prosocial treatment, the donation decision) and forms a posterior that
//! the sender is of type `f`. Each sender values that posterior at rate
//! `lambda`.
//!
//! Internally every treatment is reduced to a [`SignalGame`]: two sender
//! types, a short list of messages, a non-image payoff per (type, message),
//! and an image weight. Type index 0 is always the type the audience rewards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Beliefs whose thresholds differ by less than this are treated as tied.
const D1_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(ValidationReport),
    #[error("a prosocial entry needs an explicit donation decision")]
    MissingDonation,
    #[error("donation decision only applies to a prosocial entry")]
    UnexpectedDonation,
    #[error("message {0} is on the equilibrium path")]
    OnPath(Message),
    #[error("message {message} does not exist in the {treatment} treatment")]
    MessageNotInGame { message: Message, treatment: Treatment },
    #[error("profile field {field} = {value} is outside [0, 1]")]
    InvalidProfile { field: &'static str, value: f64 },
    #[error("donation probabilities must be present exactly in the prosocial treatment")]
    ProfileShape,
    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    Baseline,
    Preferential,
    Prosocial,
}

impl Treatment {
    pub const ALL: [Treatment; 3] = [Treatment::Baseline, Treatment::Preferential, Treatment::Prosocial];

    /// Messages a sender can send under this treatment.
    pub fn messages(self) -> &'static [Message] {
        match self {
            Treatment::Baseline | Treatment::Preferential => &[Message::Stay, Message::Enter],
            Treatment::Prosocial => &[Message::Stay, Message::EnterDonate, Message::EnterKeep],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Baseline => "baseline",
            Treatment::Preferential => "preferential",
            Treatment::Prosocial => "prosocial",
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Treatment {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Treatment::Baseline),
            "preferential" => Ok(Treatment::Preferential),
            "prosocial" => Ok(Treatment::Prosocial),
            _ => Err(ModelError::Unknown { kind: "treatment", value: s.to_string() }),
        }
    }
}

/// Latent type of a sender.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SenderType {
    #[serde(rename = "f")]
    F,
    #[serde(rename = "m")]
    M,
}

impl SenderType {
    pub const BOTH: [SenderType; 2] = [SenderType::F, SenderType::M];

    /// Position in a women's game, where `f` is the rewarded type.
    pub fn index(self) -> usize {
        match self {
            SenderType::F => 0,
            SenderType::M => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SenderType::F => "f",
            SenderType::M => "m",
        }
    }
}

impl fmt::Display for SenderType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Observable action of a sender.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Message {
    Stay,
    Enter,
    EnterDonate,
    EnterKeep,
}

impl Message {
    pub const ALL: [Message; 4] = [Message::Stay, Message::Enter, Message::EnterDonate, Message::EnterKeep];

    pub fn index(self) -> usize {
        match self {
            Message::Stay => 0,
            Message::Enter => 1,
            Message::EnterDonate => 2,
            Message::EnterKeep => 3,
        }
    }

    pub fn is_entry(self) -> bool {
        !matches!(self, Message::Stay)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Message::Stay => "stay",
            Message::Enter => "enter",
            Message::EnterDonate => "enter+donate",
            Message::EnterKeep => "enter+keep",
        }
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Entry decision of a single sender.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Stay,
    Enter,
}

/// Primitives of the entry game. All money fields share one unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Tournament prize.
    #[serde(rename = "b_T")]
    pub b_t: f64,
    /// Safe (piece-rate) payoff.
    #[serde(rename = "b_P")]
    pub b_p: f64,
    /// Win probability.
    pub w: f64,
    /// Win probability under affirmative action.
    #[serde(rename = "w_A")]
    pub w_a: f64,
    pub c_f: f64,
    /// Always zero; kept so documents carry the full set of primitives.
    #[serde(default)]
    pub c_m: f64,
    pub theta_f: f64,
    pub theta_m: f64,
    /// Share of m-types.
    pub q: f64,
    pub lambda: f64,
}

impl ModelParams {
    /// Small worked example that satisfies the assumptions of all three
    /// treatments.
    pub fn example(lambda: f64) -> Self {
        Self { b_t: 3.0, b_p: 1.0, w: 0.5, w_a: 0.6, c_f: 0.6, c_m: 0.0, theta_f: 1.0, theta_m: -2.0, q: 0.5, lambda }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn win_prob(&self, treatment: Treatment) -> f64 {
        match treatment {
            Treatment::Preferential => self.w_a,
            Treatment::Baseline | Treatment::Prosocial => self.w,
        }
    }

    pub fn cost(&self, ty: SenderType) -> f64 {
        match ty {
            SenderType::F => self.c_f,
            SenderType::M => 0.0,
        }
    }

    pub fn altruism(&self, ty: SenderType) -> f64 {
        match ty {
            SenderType::F => self.theta_f,
            SenderType::M => self.theta_m,
        }
    }

    /// Prior probability of the f-type.
    pub fn prior_f(&self) -> f64 {
        1.0 - self.q
    }

    /// Payoff of a message without the image term.
    pub fn material_payoff(&self, ty: SenderType, message: Message, treatment: Treatment) -> f64 {
        let w = self.win_prob(treatment);
        let c = self.cost(ty);
        match message {
            Message::Stay => self.b_p,
            Message::Enter | Message::EnterKeep => w * self.b_t - c,
            Message::EnterDonate => w * (self.b_t + self.altruism(ty)) - c,
        }
    }

    /// The women's signaling game for one treatment.
    pub fn game(&self, treatment: Treatment) -> SignalGame {
        let mut payoff = [[0.0; 4]; 2];
        for ty in SenderType::BOTH {
            for &m in treatment.messages() {
                payoff[ty.index()][m.index()] = self.material_payoff(ty, m, treatment);
            }
        }
        SignalGame::new(treatment.messages(), payoff, self.prior_f(), self.lambda)
    }

    pub fn to_json(&self) -> String {
        let mut doc = *self;
        doc.c_m = 0.0;
        serde_json::to_string_pretty(&doc).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Looks up a field by its document name.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "b_T" => self.b_t,
            "b_P" => self.b_p,
            "w" => self.w,
            "w_A" => self.w_a,
            "c_f" => self.c_f,
            "c_m" => self.c_m,
            "theta_f" => self.theta_f,
            "theta_m" => self.theta_m,
            "q" => self.q,
            "lambda" => self.lambda,
            _ => return None,
        })
    }

    pub fn set_field(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        let slot = match name {
            "b_T" => &mut self.b_t,
            "b_P" => &mut self.b_p,
            "w" => &mut self.w,
            "w_A" => &mut self.w_a,
            "c_f" => &mut self.c_f,
            "c_m" => &mut self.c_m,
            "theta_f" => &mut self.theta_f,
            "theta_m" => &mut self.theta_m,
            "q" => &mut self.q,
            "lambda" => &mut self.lambda,
            _ => return Err(ModelError::Unknown { kind: "parameter", value: name.to_string() }),
        };
        *slot = value;
        Ok(())
    }
}

/// Violated assumptions for one treatment. Empty means the parameters pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<(), ModelError> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(ModelError::InvalidParams(self))
        }
    }

    fn require(&mut self, holds: bool, what: &str) {
        if !holds {
            self.violations.push(format!("{what} violated"));
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            f.write_str("pass")
        } else {
            f.write_str(&self.violations.join("; "))
        }
    }
}

/// Checks ranges and the ordering assumptions a treatment's closed form
/// relies on.
pub fn validate_params(params: &ModelParams, treatment: Treatment) -> ValidationReport {
    let mut report = ValidationReport::default();
    let fields = [
        ("b_T", params.b_t),
        ("b_P", params.b_p),
        ("w", params.w),
        ("w_A", params.w_a),
        ("c_f", params.c_f),
        ("c_m", params.c_m),
        ("theta_f", params.theta_f),
        ("theta_m", params.theta_m),
        ("q", params.q),
        ("lambda", params.lambda),
    ];
    let mut finite = true;
    for (name, value) in fields {
        if !value.is_finite() {
            report.violations.push(format!("{name} is not finite"));
            finite = false;
        }
    }
    if !finite {
        return report;
    }
    report.require(params.c_m == 0.0, "c_m = 0");
    report.require(params.w > 0.0 && params.w < 1.0, "0 < w < 1");
    report.require(params.w_a > 0.0 && params.w_a < 1.0, "0 < w_A < 1");
    report.require(params.q > 0.0 && params.q < 1.0, "0 < q < 1");
    report.require(params.lambda >= 0.0, "lambda ≥ 0");

    let gain = params.w * params.b_t - params.b_p;
    match treatment {
        Treatment::Baseline => {
            report.require(gain > 0.0, "w·b_T − b_P > 0");
            report.require(gain < params.c_f, "w·b_T − b_P < c_f");
        }
        Treatment::Preferential => {
            report.require(params.c_f > 0.0, "c_f > 0");
            report.require(params.c_f < params.w_a * params.b_t - params.b_p, "c_f < w_A·b_T − b_P");
        }
        Treatment::Prosocial => {
            report.require(params.theta_m < 0.0, "θ_m < 0");
            report.require(params.theta_f - params.c_f > 0.0, "θ_f − c_f > 0");
            report.require(gain > 0.0, "w·b_T − b_P > 0");
            // Needed for full participation: an f-type who enters and donates
            // beats the safe payoff, and gains more from entering than an
            // m-type who donates.
            report.require(
                params.w * (params.b_t + params.theta_f) - params.c_f > params.b_p,
                "w·(b_T + θ_f) − c_f > b_P",
            );
            report.require(params.w * (params.theta_f - params.theta_m) > params.c_f, "w·(θ_f − θ_m) > c_f");
        }
    }
    report
}

/// Women's mixed strategies. Donation probabilities are conditional on entry
/// and exist only in the prosocial treatment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub r: f64,
    pub rho: f64,
    pub r_t: Option<f64>,
    pub rho_t: Option<f64>,
}

impl StrategyProfile {
    pub fn entry(r: f64, rho: f64) -> Self {
        Self { r, rho, r_t: None, rho_t: None }
    }

    pub fn prosocial(r: f64, rho: f64, r_t: f64, rho_t: f64) -> Self {
        Self { r, rho, r_t: Some(r_t), rho_t: Some(rho_t) }
    }

    pub fn validate(&self, treatment: Treatment) -> Result<(), ModelError> {
        let prosocial = treatment == Treatment::Prosocial;
        if self.r_t.is_some() != prosocial || self.rho_t.is_some() != prosocial {
            return Err(ModelError::ProfileShape);
        }
        let fields = [("r", Some(self.r)), ("rho", Some(self.rho)), ("r_T", self.r_t), ("rho_T", self.rho_t)];
        for (field, value) in fields {
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    return Err(ModelError::InvalidProfile { field, value: v });
                }
            }
        }
        Ok(())
    }

    pub fn enter_prob(&self, ty: SenderType) -> f64 {
        match ty {
            SenderType::F => self.r,
            SenderType::M => self.rho,
        }
    }

    pub fn donate_prob(&self, ty: SenderType) -> Option<f64> {
        match ty {
            SenderType::F => self.r_t,
            SenderType::M => self.rho_t,
        }
    }

    /// Message distribution per type. Missing donation probabilities read as 0.
    pub fn to_mix(&self, treatment: Treatment) -> Mix {
        let mut mix = [[0.0; 4]; 2];
        for ty in SenderType::BOTH {
            let row = &mut mix[ty.index()];
            let enter = self.enter_prob(ty);
            row[Message::Stay.index()] = 1.0 - enter;
            match treatment {
                Treatment::Baseline | Treatment::Preferential => row[Message::Enter.index()] = enter,
                Treatment::Prosocial => {
                    let donate = self.donate_prob(ty).unwrap_or(0.0);
                    row[Message::EnterDonate.index()] = enter * donate;
                    row[Message::EnterKeep.index()] = enter * (1.0 - donate);
                }
            }
        }
        mix
    }

    /// Inverse of [`StrategyProfile::to_mix`]. A type that never enters gets
    /// donation probability 0.
    pub fn from_mix(mix: &Mix, treatment: Treatment) -> Self {
        let f = &mix[0];
        let m = &mix[1];
        match treatment {
            Treatment::Baseline | Treatment::Preferential => {
                Self::entry(f[Message::Enter.index()], m[Message::Enter.index()])
            }
            Treatment::Prosocial => {
                let split = |row: &[f64; 4]| {
                    let donate = row[Message::EnterDonate.index()];
                    let enter = donate + row[Message::EnterKeep.index()];
                    (enter, if enter > 0.0 { donate / enter } else { 0.0 })
                };
                let (r, r_t) = split(f);
                let (rho, rho_t) = split(m);
                Self::prosocial(r, rho, r_t, rho_t)
            }
        }
    }

    /// Largest coordinate difference; donation coordinates count only when both
    /// sides carry them.
    pub fn distance(&self, other: &StrategyProfile) -> f64 {
        let mut d = (self.r - other.r).abs().max((self.rho - other.rho).abs());
        if let (Some(a), Some(b)) = (self.r_t, other.r_t) {
            d = d.max((a - b).abs());
        }
        if let (Some(a), Some(b)) = (self.rho_t, other.rho_t) {
            d = d.max((a - b).abs());
        }
        d
    }
}

/// Message probabilities: `mix[type][message.index()]`.
pub type Mix = [[f64; 4]; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeliefSource {
    /// On path, Bayes' rule.
    Bayes,
    /// Off path, degenerate belief selected by D1.
    D1,
    /// Prior: off path with no elimination, `lambda = 0`, or a message that
    /// does not exist in the treatment.
    Prior,
}

impl BeliefSource {
    pub fn as_str(self) -> &'static str {
        match self {
            BeliefSource::Bayes => "bayes",
            BeliefSource::D1 => "d1",
            BeliefSource::Prior => "prior",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub value: f64,
    pub source: BeliefSource,
}

/// Audience posteriors that the sender is the rewarded type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSystem {
    pub mu_enter: Belief,
    pub mu_stay: Belief,
    pub mu_enter_donate: Belief,
    pub mu_enter_keep: Belief,
}

impl BeliefSystem {
    pub fn get(&self, message: Message) -> Belief {
        match message {
            Message::Stay => self.mu_stay,
            Message::Enter => self.mu_enter,
            Message::EnterDonate => self.mu_enter_donate,
            Message::EnterKeep => self.mu_enter_keep,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for m in Message::ALL {
            out[m.index()] = self.get(m).value;
        }
        out
    }

    /// Beliefs with fixed values, as used for counterfactual payoff comparisons.
    pub fn fixed(enter: f64, stay: f64, enter_donate: f64, enter_keep: f64) -> Self {
        let b = |value| Belief { value, source: BeliefSource::Prior };
        Self { mu_enter: b(enter), mu_stay: b(stay), mu_enter_donate: b(enter_donate), mu_enter_keep: b(enter_keep) }
    }
}

/// On-path posteriors; `None` marks a zero-probability message.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnPathBeliefs {
    pub enter: Option<f64>,
    pub stay: Option<f64>,
    pub enter_donate: Option<f64>,
    pub enter_keep: Option<f64>,
}

impl OnPathBeliefs {
    pub fn get(&self, message: Message) -> Option<f64> {
        match message {
            Message::Stay => self.stay,
            Message::Enter => self.enter,
            Message::EnterDonate => self.enter_donate,
            Message::EnterKeep => self.enter_keep,
        }
    }
}

fn bayes(prior: f64, p_rewarded: f64, p_other: f64) -> Option<f64> {
    let num = prior * p_rewarded;
    let den = num + (1.0 - prior) * p_other;
    if den > 0.0 {
        Some((num / den).clamp(0.0, 1.0))
    } else {
        None
    }
}

/// Bayes posteriors `Pr(f | message)` for every message with positive
/// probability under `profile`. Donation messages are `None` outside the
/// prosocial treatment.
pub fn posterior_beliefs(profile: &StrategyProfile, q: f64, treatment: Treatment) -> OnPathBeliefs {
    let mix = profile.to_mix(treatment);
    let prior = 1.0 - q;
    let at = |m: Message| bayes(prior, mix[0][m.index()], mix[1][m.index()]);
    let enter = bayes(prior, profile.r, profile.rho);
    match treatment {
        Treatment::Prosocial => OnPathBeliefs {
            enter,
            stay: at(Message::Stay),
            enter_donate: at(Message::EnterDonate),
            enter_keep: at(Message::EnterKeep),
        },
        _ => OnPathBeliefs { enter, stay: at(Message::Stay), enter_donate: None, enter_keep: None },
    }
}

/// Utility of one sender, including the image term.
pub fn entry_payoff(
    ty: SenderType,
    decision: Decision,
    donate: Option<bool>,
    beliefs: &BeliefSystem,
    params: &ModelParams,
    treatment: Treatment,
) -> Result<f64, ModelError> {
    let message = match (decision, treatment, donate) {
        (Decision::Stay, _, None) => Message::Stay,
        (Decision::Enter, Treatment::Prosocial, Some(true)) => Message::EnterDonate,
        (Decision::Enter, Treatment::Prosocial, Some(false)) => Message::EnterKeep,
        (Decision::Enter, Treatment::Prosocial, None) => return Err(ModelError::MissingDonation),
        (Decision::Enter, _, None) => Message::Enter,
        (_, _, Some(_)) => return Err(ModelError::UnexpectedDonation),
    };
    Ok(params.material_payoff(ty, message, treatment) + params.lambda * beliefs.get(message).value)
}

/// A two-type signaling game with an additive image term. Type 0 is the type
/// the audience rewards; `prior` is its population share.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalGame {
    pub messages: &'static [Message],
    pub payoff: [[f64; 4]; 2],
    pub prior: f64,
    pub lambda: f64,
}

impl SignalGame {
    pub fn new(messages: &'static [Message], payoff: [[f64; 4]; 2], prior: f64, lambda: f64) -> Self {
        Self { messages, payoff, prior, lambda }
    }

    pub fn has(&self, message: Message) -> bool {
        self.messages.contains(&message)
    }

    pub fn utility(&self, ty: usize, message: Message, belief: f64) -> f64 {
        self.payoff[ty][message.index()] + self.lambda * belief
    }

    pub fn posterior(&self, mix: &Mix, message: Message) -> Option<f64> {
        bayes(self.prior, mix[0][message.index()], mix[1][message.index()])
    }

    /// Expected utility of each type under `mix`, counting only on-path
    /// messages (every message a type plays is on path).
    pub fn equilibrium_utility(&self, mix: &Mix) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (ty, slot) in out.iter_mut().enumerate() {
            let mut total = 0.0;
            let mut mass = 0.0;
            for &m in self.messages {
                let p = mix[ty][m.index()];
                if p > 0.0 {
                    let belief = self.posterior(mix, m).unwrap_or(self.prior);
                    total += p * self.utility(ty, m, belief);
                    mass += p;
                }
            }
            *slot = if mass > 0.0 { total / mass } else { f64::NEG_INFINITY };
        }
        out
    }

    /// D1 belief for an off-path message, with the source that produced it.
    ///
    /// Type τ is willing to deviate for any belief above
    /// `(U_τ − payoff_τ(message)) / lambda`. The type with the strictly higher
    /// threshold is eliminated and the belief is placed on the survivor.
    pub fn d1(&self, mix: &Mix, message: Message) -> Result<Belief, ModelError> {
        if !self.has(message) {
            return Err(ModelError::MessageNotInGame { message, treatment: treatment_of(self.messages) });
        }
        if self.posterior(mix, message).is_some() {
            return Err(ModelError::OnPath(message));
        }
        let prior = Belief { value: self.prior, source: BeliefSource::Prior };
        if self.lambda == 0.0 {
            return Ok(prior);
        }
        let eq = self.equilibrium_utility(mix);
        let threshold = |ty: usize| (eq[ty] - self.payoff[ty][message.index()]) / self.lambda;
        let (t0, t1) = (threshold(0), threshold(1));
        let scale = 1.0 + t0.abs().max(t1.abs());
        if (t0 - t1).abs() <= D1_TIE_EPS * scale {
            Ok(prior)
        } else if t0 > t1 {
            Ok(Belief { value: 0.0, source: BeliefSource::D1 })
        } else {
            Ok(Belief { value: 1.0, source: BeliefSource::D1 })
        }
    }

    /// Belief for every message of the game: Bayes on path, D1 off path.
    pub fn beliefs(&self, mix: &Mix) -> [Belief; 4] {
        let prior = Belief { value: self.prior, source: BeliefSource::Prior };
        let mut out = [prior; 4];
        for &m in self.messages {
            out[m.index()] = match self.posterior(mix, m) {
                Some(value) => Belief { value, source: BeliefSource::Bayes },
                None => self.d1(mix, m).expect("off-path message of this game"),
            };
        }
        out
    }
}

fn treatment_of(messages: &'static [Message]) -> Treatment {
    if messages.contains(&Message::EnterDonate) {
        Treatment::Prosocial
    } else {
        Treatment::Baseline
    }
}

/// D1 belief `Pr(f | message)` for a message `profile` never sends.
pub fn d1_belief(
    profile: &StrategyProfile,
    message: Message,
    params: &ModelParams,
    treatment: Treatment,
) -> Result<f64, ModelError> {
    let game = params.game(treatment);
    if !game.has(message) {
        return Err(ModelError::MessageNotInGame { message, treatment });
    }
    game.d1(&profile.to_mix(treatment), message).map(|b| b.value)
}

/// Complete belief system: Bayes on path, D1 off path. In the prosocial
/// treatment `mu_enter` pools both entry messages and is informational only.
pub fn resolve_beliefs(profile: &StrategyProfile, params: &ModelParams, treatment: Treatment) -> BeliefSystem {
    let game = params.game(treatment);
    let mix = profile.to_mix(treatment);
    let b = game.beliefs(&mix);
    let mu_enter = match treatment {
        Treatment::Prosocial => match bayes(game.prior, profile.r, profile.rho) {
            Some(value) => Belief { value, source: BeliefSource::Bayes },
            None => Belief { value: game.prior, source: BeliefSource::Prior },
        },
        _ => b[Message::Enter.index()],
    };
    BeliefSystem {
        mu_enter,
        mu_stay: b[Message::Stay.index()],
        mu_enter_donate: b[Message::EnterDonate.index()],
        mu_enter_keep: b[Message::EnterKeep.index()],
    }
}

/// An equilibrium together with the beliefs that support it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub treatment: Treatment,
    /// Which characterization clause produced it, e.g. `P2-iii`.
    pub branch: String,
    pub profile: StrategyProfile,
    pub beliefs: BeliefSystem,
    pub stable: bool,
}

impl EquilibriumResult {
    /// Expected entry rate among women.
    pub fn participation(&self, q: f64) -> f64 {
        (1.0 - q) * self.profile.r + q * self.profile.rho
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::theory_params;

    #[test]
    fn baseline_assumptions_pass_and_fail() {
        let p = theory_params(0.75);
        assert!(validate_params(&p, Treatment::Baseline).is_ok());
        let low_cost = ModelParams { c_f: 0.4, ..p };
        let report = validate_params(&low_cost, Treatment::Baseline);
        assert_eq!(report.violations, vec!["w·b_T − b_P < c_f violated".to_string()]);
    }

    #[test]
    fn prosocial_requires_altruism_above_cost() {
        let p = ModelParams { theta_f: 0.5, ..theory_params(0.5) };
        let report = validate_params(&p, Treatment::Prosocial);
        assert_eq!(report.violations, vec!["θ_f − c_f > 0 violated".to_string()]);
    }

    #[test]
    fn non_finite_fields_reported_individually() {
        let p = ModelParams { w: f64::NAN, q: f64::INFINITY, ..theory_params(0.0) };
        let report = validate_params(&p, Treatment::Baseline);
        assert_eq!(report.violations, vec!["w is not finite".to_string(), "q is not finite".to_string()]);
    }

    #[test]
    fn nonzero_male_cost_rejected() {
        let p = ModelParams { c_m: 0.1, ..theory_params(0.0) };
        assert!(!validate_params(&p, Treatment::Baseline).is_ok());
    }

    #[test]
    fn payoff_examples() {
        let beliefs = BeliefSystem::fixed(0.0, 1.0, 1.0, 0.0);
        let p = theory_params(0.75);
        let u = entry_payoff(SenderType::M, Decision::Enter, None, &beliefs, &p, Treatment::Baseline).unwrap();
        assert!((u - 1.5).abs() < 1e-12);

        let p0 = theory_params(0.0);
        let u = entry_payoff(SenderType::F, Decision::Stay, None, &beliefs, &p0, Treatment::Baseline).unwrap();
        assert!((u - 1.0).abs() < 1e-12);

        let p2 = theory_params(2.0);
        let u = entry_payoff(SenderType::F, Decision::Enter, Some(true), &beliefs, &p2, Treatment::Prosocial).unwrap();
        assert!((u - 3.4).abs() < 1e-12);
    }

    #[test]
    fn payoff_donation_flag_rules() {
        let beliefs = BeliefSystem::fixed(0.5, 0.5, 0.5, 0.5);
        let p = theory_params(1.0);
        assert_eq!(
            entry_payoff(SenderType::F, Decision::Enter, None, &beliefs, &p, Treatment::Prosocial),
            Err(ModelError::MissingDonation)
        );
        assert_eq!(
            entry_payoff(SenderType::F, Decision::Enter, Some(true), &beliefs, &p, Treatment::Baseline),
            Err(ModelError::UnexpectedDonation)
        );
        assert_eq!(
            entry_payoff(SenderType::F, Decision::Stay, Some(false), &beliefs, &p, Treatment::Prosocial),
            Err(ModelError::UnexpectedDonation)
        );
    }

    #[test]
    fn preferential_uses_affirmative_win_probability() {
        let beliefs = BeliefSystem::fixed(0.0, 0.0, 0.0, 0.0);
        let p = theory_params(0.0);
        let u = entry_payoff(SenderType::M, Decision::Enter, None, &beliefs, &p, Treatment::Preferential).unwrap();
        assert!((u - 1.8).abs() < 1e-12);
    }

    #[test]
    fn posterior_examples() {
        let sep = posterior_beliefs(&StrategyProfile::entry(0.0, 1.0), 0.5, Treatment::Baseline);
        assert_eq!(sep.stay, Some(1.0));
        assert_eq!(sep.enter, Some(0.0));

        let pool = posterior_beliefs(&StrategyProfile::entry(1.0, 1.0), 0.3, Treatment::Baseline);
        assert!((pool.enter.unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(pool.stay, None);

        let mixed = posterior_beliefs(&StrategyProfile::entry(0.0, 0.5), 0.5, Treatment::Baseline);
        assert!((mixed.stay.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mixed.enter, Some(0.0));
        // m-type indifference at lambda = 0.75: 1 + 0.75 * 2/3 = 1.5
        assert!((1.0 + 0.75 * mixed.stay.unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn d1_examples_from_affirmative_action_proof() {
        let p = theory_params(0.3);
        let b = d1_belief(&StrategyProfile::entry(1.0, 1.0), Message::Stay, &p, Treatment::Preferential).unwrap();
        assert_eq!(b, 1.0);
        let p = theory_params(2.0);
        let b = d1_belief(&StrategyProfile::entry(0.0, 0.0), Message::Enter, &p, Treatment::Preferential).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn d1_with_zero_lambda_is_prior() {
        for t in Treatment::ALL {
            let p = ModelParams { q: 0.3, ..theory_params(0.0) };
            let profile = match t {
                Treatment::Prosocial => StrategyProfile::prosocial(1.0, 1.0, 1.0, 1.0),
                _ => StrategyProfile::entry(1.0, 1.0),
            };
            let b = d1_belief(&profile, Message::Stay, &p, t).unwrap();
            assert!((b - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn d1_rejects_on_path_and_foreign_messages() {
        let p = theory_params(1.0);
        let profile = StrategyProfile::entry(0.0, 0.5);
        assert_eq!(d1_belief(&profile, Message::Stay, &p, Treatment::Baseline), Err(ModelError::OnPath(Message::Stay)));
        assert!(matches!(
            d1_belief(&profile, Message::EnterDonate, &p, Treatment::Baseline),
            Err(ModelError::MessageNotInGame { .. })
        ));
    }

    #[test]
    fn d1_tie_returns_prior() {
        // Identical material payoffs for both types: symmetric deviation incentives.
        let payoff = [[1.0, 2.0, 0.0, 0.0], [1.0, 2.0, 0.0, 0.0]];
        let game = SignalGame::new(Treatment::Baseline.messages(), payoff, 0.4, 1.0);
        let mix = [[0.0, 1.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
        let b = game.d1(&mix, Message::Stay).unwrap();
        assert_eq!(b.source, BeliefSource::Prior);
        assert_eq!(b.value, 0.4);
    }

    #[test]
    fn resolved_beliefs_tag_sources() {
        let p = theory_params(2.0);
        let b = resolve_beliefs(&StrategyProfile::entry(0.0, 0.0), &p, Treatment::Baseline);
        assert_eq!(b.mu_stay.source, BeliefSource::Bayes);
        assert_eq!(b.mu_enter.source, BeliefSource::D1);
        assert_eq!(b.mu_enter.value, 0.0);
        assert_eq!(b.mu_enter_donate.source, BeliefSource::Prior);
    }

    #[test]
    fn params_json_roundtrip_and_unknown_keys() {
        let p = theory_params(0.75);
        let back = ModelParams::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let text = r#"{"b_T":3,"b_P":1,"w":0.5,"w_A":0.6,"c_f":0.6,"theta_f":1,"theta_m":-2,"q":0.5,"lambda":0}"#;
        assert_eq!(ModelParams::from_json(text).unwrap().c_m, 0.0);
        let bad = r#"{"b_T":3,"b_P":1,"w":0.5,"w_A":0.6,"c_f":0.6,"theta_f":1,"theta_m":-2,"q":0.5,"lambda":0,"mu":1}"#;
        assert!(ModelParams::from_json(bad).is_err());
    }

    #[test]
    fn mix_roundtrip_prosocial() {
        let profile = StrategyProfile::prosocial(0.7, 1.0, 0.4, 0.25);
        let back = StrategyProfile::from_mix(&profile.to_mix(Treatment::Prosocial), Treatment::Prosocial);
        assert!(profile.distance(&back) < 1e-15);
    }
}
