//! Brute-force equilibrium finder and verifier.
//!
//! Nothing here uses the closed-form characterizations. Candidate profiles are
//! generated by enumerating the support of each type's strategy; a type that
//! mixes has its mixing probability located by a grid scan of its
//! indifference gap and then pinned by solving the indifference condition,
//! which is linear in the belief at the shared message. Every candidate is
//! then checked against best responses with Bayes beliefs on path and D1
//! beliefs off path.

use serde::Serialize;

use crate::model::{
    resolve_beliefs, Belief, BeliefSource, EquilibriumResult, Message, Mix, ModelParams, SenderType, SignalGame,
    StrategyProfile, Treatment,
};

/// Profiles closer than this are the same equilibrium.
const DEDUP_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    /// Grid step for the indifference scan, in `(0, 0.01]`.
    pub grid: f64,
    /// Utility tolerance for best responses and indifference.
    pub tol: f64,
    /// Strategy perturbation used by the stability check.
    pub perturb: f64,
    pub max_iter: usize,
    /// Whether enumerated equilibria get a stability classification.
    pub classify: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { grid: 1e-3, tol: 1e-9, perturb: 1e-3, max_iter: 1000, classify: true }
    }
}

/// Optimal pure actions for one type.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestResponse {
    pub actions: Vec<Message>,
    /// More than one action is optimal within tolerance.
    pub indifferent: bool,
    /// Utility of each available action.
    pub utilities: Vec<(Message, f64)>,
}

fn best_response_game(game: &SignalGame, ty: usize, beliefs: &[f64; 4], tol: f64) -> BestResponse {
    let utilities: Vec<(Message, f64)> =
        game.messages.iter().map(|&m| (m, game.utility(ty, m, beliefs[m.index()]))).collect();
    let best = utilities.iter().map(|&(_, u)| u).fold(f64::NEG_INFINITY, f64::max);
    let actions: Vec<Message> = utilities.iter().filter(|&&(_, u)| u >= best - tol).map(|&(m, _)| m).collect();
    BestResponse { indifferent: actions.len() > 1, actions, utilities }
}

/// Argmax over the actions available in `treatment` given fixed beliefs.
pub fn best_response(
    ty: SenderType,
    beliefs: &crate::model::BeliefSystem,
    params: &ModelParams,
    treatment: Treatment,
    tol: f64,
) -> BestResponse {
    best_response_game(&params.game(treatment), ty.index(), &beliefs.values(), tol)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypeReport {
    pub best: Vec<Message>,
    pub indifferent: bool,
    /// Shortfall of the worst played action from the best action (utility units).
    pub gap: f64,
    /// Played action with the largest shortfall, when it is not a best response.
    pub worst_played: Option<Message>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub types: [TypeReport; 2],
    pub belief_sources: Vec<(Message, BeliefSource)>,
    pub max_violation: f64,
}

impl Diagnostics {
    /// One line per type that plays a non-optimal action.
    pub fn describe(&self, labels: [&str; 2]) -> Vec<String> {
        self.types
            .iter()
            .zip(labels)
            .filter_map(|(t, label)| {
                t.worst_played.map(|m| {
                    let best = t.best.iter().map(|b| b.as_str()).collect::<Vec<_>>().join("/");
                    format!("type {label} strictly prefers {best} over {m} (gap {:.6})", t.gap)
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriumCheck {
    pub ok: bool,
    pub diagnostics: Diagnostics,
}

fn check_game(game: &SignalGame, mix: &Mix, tol: f64) -> EquilibriumCheck {
    let beliefs: [Belief; 4] = game.beliefs(mix);
    let values = beliefs.map(|b| b.value);
    let mut max_violation: f64 = 0.0;
    let types = [0, 1].map(|ty| {
        let br = best_response_game(game, ty, &values, tol);
        let best = br.utilities.iter().map(|&(_, u)| u).fold(f64::NEG_INFINITY, f64::max);
        let mut gap: f64 = 0.0;
        let mut worst = None;
        for &(m, u) in &br.utilities {
            if mix[ty][m.index()] > 0.0 && best - u > gap {
                gap = best - u;
                worst = Some(m);
            }
        }
        max_violation = max_violation.max(gap);
        TypeReport { best: br.actions, indifferent: br.indifferent, gap, worst_played: worst.filter(|_| gap > tol) }
    });
    let belief_sources = game.messages.iter().map(|&m| (m, beliefs[m.index()].source)).collect();
    EquilibriumCheck { ok: max_violation <= tol, diagnostics: Diagnostics { types, belief_sources, max_violation } }
}

/// Verifies that every action played with positive probability is a best
/// response under Bayes/D1 beliefs. Interior mixes therefore need
/// indifference within `tol`.
pub fn check_equilibrium(
    profile: &StrategyProfile,
    params: &ModelParams,
    treatment: Treatment,
    tol: f64,
) -> EquilibriumCheck {
    check_game(&params.game(treatment), &profile.to_mix(treatment), tol)
}

/// Equilibrium of a generic [`SignalGame`], in message space.
#[derive(Clone, Debug, PartialEq)]
pub struct GameEquilibrium {
    pub mix: Mix,
    /// Human-readable support pattern, e.g. `f{stay} m{stay,enter}`.
    pub support: String,
    pub stable: Option<Stability>,
    pub max_violation: f64,
}

/// Outcome of [`enumerate_game`]: equilibria plus support patterns that admit
/// a continuum of equilibria and were therefore skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Enumeration {
    pub equilibria: Vec<GameEquilibrium>,
    pub degenerate: Vec<String>,
}

fn subsets(messages: &[Message]) -> Vec<Vec<Message>> {
    (1u32..(1 << messages.len()))
        .map(|bits| messages.iter().enumerate().filter(|(i, _)| bits & (1 << i) != 0).map(|(_, &m)| m).collect())
        .collect()
}

fn support_label(s0: &[Message], s1: &[Message], labels: [&str; 2]) -> String {
    let fmt = |s: &[Message]| s.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",");
    format!("{}{{{}}} {}{{{}}}", labels[0], fmt(s0), labels[1], fmt(s1))
}

/// Belief at a message shared by both types when type `mixer` puts weight `x`
/// on it and the other type plays it for sure.
fn shared_belief(prior: f64, mixer: usize, x: f64) -> f64 {
    if mixer == 0 {
        let num = prior * x;
        num / (num + (1.0 - prior))
    } else {
        prior / (prior + (1.0 - prior) * x)
    }
}

/// Weight `x` that produces belief `mu` at the shared message.
fn invert_shared_belief(prior: f64, mixer: usize, mu: f64) -> f64 {
    if mixer == 0 {
        (1.0 - prior) * mu / (prior * (1.0 - mu))
    } else {
        prior * (1.0 - mu) / ((1.0 - prior) * mu)
    }
}

/// Locates the root of the mixer's indifference gap on `[0, 1]`: grid scan for
/// a bracketing cell, then the exact solution of the linear-in-belief
/// condition, accepted only if it lies in that cell.
fn solve_single_mixer(
    game: &SignalGame,
    mixer: usize,
    shared: Message,
    exclusive: Message,
    exclusive_belief: f64,
    grid: f64,
    tol: f64,
) -> Option<f64> {
    let target = game.utility(mixer, exclusive, exclusive_belief);
    let gap = |x: f64| game.utility(mixer, shared, shared_belief(game.prior, mixer, x)) - target;
    let steps = (1.0 / grid).ceil() as usize;
    let mut bracket = None;
    let mut prev = (0.0, gap(0.0));
    for i in 1..=steps {
        let x = (i as f64 * grid).min(1.0);
        let g = gap(x);
        if prev.1.abs() <= tol || g.abs() <= tol || prev.1.signum() != g.signum() {
            bracket = Some((prev.0, x));
            break;
        }
        prev = (x, g);
    }
    let (lo, hi) = bracket?;
    let mu = (target - game.payoff[mixer][shared.index()]) / game.lambda;
    if !(mu > 0.0 && mu < 1.0) {
        return None;
    }
    let x = invert_shared_belief(game.prior, mixer, mu);
    let inside = x > 0.0 && x < 1.0 && x >= lo - grid && x <= hi + grid;
    inside.then_some(x)
}

fn build_mix(game: &SignalGame, s0: &[Message], s1: &[Message], weights: &[(usize, Message, f64)]) -> Mix {
    let mut mix = [[0.0; 4]; 2];
    for (ty, support) in [(0usize, s0), (1, s1)] {
        if support.len() == 1 {
            mix[ty][support[0].index()] = 1.0;
        }
    }
    for &(ty, m, w) in weights {
        mix[ty][m.index()] = w;
    }
    debug_assert!(game.messages.len() >= 2);
    mix
}

fn candidates_for(game: &SignalGame, s0: &[Message], s1: &[Message], cfg: &OracleConfig) -> Result<Option<Mix>, ()> {
    let shared: Vec<Message> = s0.iter().copied().filter(|m| s1.contains(m)).collect();
    let exclusive_belief = |ty: usize| if ty == 0 { 1.0 } else { 0.0 };
    match shared.len() {
        0 => {
            // Separating: all on-path beliefs are 0 or 1; a type spreading
            // over several messages with equal utility is a continuum.
            for (ty, s) in [(0usize, s0), (1, s1)] {
                if s.len() > 1 {
                    let u: Vec<f64> = s.iter().map(|&m| game.utility(ty, m, exclusive_belief(ty))).collect();
                    let spread = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                        - u.iter().cloned().fold(f64::INFINITY, f64::min);
                    return if spread <= cfg.tol { Err(()) } else { Ok(None) };
                }
            }
            Ok(Some(build_mix(game, s0, s1, &[])))
        }
        1 => {
            let s = shared[0];
            let mixers: Vec<usize> =
                [(0usize, s0), (1, s1)].iter().filter(|(_, x)| x.len() > 1).map(|(t, _)| *t).collect();
            match mixers.as_slice() {
                [] => Ok(Some(build_mix(game, s0, s1, &[]))),
                [mixer] => {
                    let mixer = *mixer;
                    let support = if mixer == 0 { s0 } else { s1 };
                    let others: Vec<Message> = support.iter().copied().filter(|&m| m != s).collect();
                    if game.lambda == 0.0 || others.len() > 1 {
                        // Indifference no longer pins the weights: with no image
                        // weight beliefs drop out, and several exclusive messages
                        // share one belief. Equal utilities mean a continuum.
                        let belief = exclusive_belief(mixer);
                        let reference = if game.lambda == 0.0 {
                            game.payoff[mixer][s.index()]
                        } else {
                            game.utility(mixer, others[0], belief)
                        };
                        let tied =
                            others.iter().all(|&m| (game.utility(mixer, m, belief) - reference).abs() <= cfg.tol);
                        return if tied { Err(()) } else { Ok(None) };
                    }
                    let e = others[0];
                    match solve_single_mixer(game, mixer, s, e, exclusive_belief(mixer), cfg.grid, cfg.tol) {
                        Some(x) => Ok(Some(build_mix(game, s0, s1, &[(mixer, s, x), (mixer, e, 1.0 - x)]))),
                        None => Ok(None),
                    }
                }
                _ => {
                    // Both types mix around one shared message: two indifference
                    // conditions on a single belief, consistent only on a
                    // knife edge where the weights form a continuum.
                    let implied: Vec<f64> = [(0usize, s0), (1usize, s1)]
                        .iter()
                        .flat_map(|&(ty, support)| {
                            support.iter().filter(move |&&m| m != s).map(move |&m| {
                                (game.utility(ty, m, exclusive_belief(ty)) - game.payoff[ty][s.index()]) / game.lambda
                            })
                        })
                        .collect();
                    let consistent = game.lambda > 0.0
                        && implied.iter().all(|v| (v - implied[0]).abs() <= cfg.tol)
                        && implied[0] > 0.0
                        && implied[0] < 1.0;
                    if consistent {
                        Err(())
                    } else {
                        Ok(None)
                    }
                }
            }
        }
        _ => {
            // Both types indifferent across several shared messages: their
            // material payoff differences must coincide.
            let base = shared[0];
            let consistent = shared[1..].iter().all(|&m| {
                let d0 = game.payoff[0][m.index()] - game.payoff[0][base.index()];
                let d1 = game.payoff[1][m.index()] - game.payoff[1][base.index()];
                (d0 - d1).abs() <= cfg.tol
            });
            if consistent {
                Err(())
            } else {
                Ok(None)
            }
        }
    }
}

fn mix_distance(a: &Mix, b: &Mix) -> f64 {
    let mut d: f64 = 0.0;
    for ty in 0..2 {
        for m in 0..4 {
            d = d.max((a[ty][m] - b[ty][m]).abs());
        }
    }
    d
}

/// All equilibria of a signaling game, in canonical order.
pub fn enumerate_game(game: &SignalGame, cfg: &OracleConfig, labels: [&str; 2]) -> Enumeration {
    let grid = if cfg.grid > 0.0 && cfg.grid <= 0.01 { cfg.grid } else { 1e-3 };
    let cfg = OracleConfig { grid, ..*cfg };
    let sets = subsets(game.messages);
    let mut out = Enumeration::default();
    for s0 in &sets {
        for s1 in &sets {
            match candidates_for(game, s0, s1, &cfg) {
                Err(()) => out.degenerate.push(support_label(s0, s1, labels)),
                Ok(None) => {}
                Ok(Some(mix)) => {
                    let check = check_game(game, &mix, cfg.tol);
                    if check.ok && !out.equilibria.iter().any(|e| mix_distance(&e.mix, &mix) <= DEDUP_EPS) {
                        out.equilibria.push(GameEquilibrium {
                            mix,
                            support: support_label(s0, s1, labels),
                            stable: None,
                            max_violation: check.diagnostics.max_violation,
                        });
                    }
                }
            }
        }
    }
    if cfg.classify {
        for eq in &mut out.equilibria {
            eq.stable = Some(classify_game_stability(game, &eq.mix, cfg.perturb, cfg.max_iter, cfg.tol));
        }
    }
    out.equilibria.sort_by(|a, b| canonical_key(game, &a.mix).partial_cmp(&canonical_key(game, &b.mix)).unwrap());
    out
}

/// Sort key: entry of type 0, entry of type 1, then donation weights.
fn canonical_key(game: &SignalGame, mix: &Mix) -> [f64; 4] {
    let enter = |ty: usize| game.messages.iter().filter(|m| m.is_entry()).map(|m| mix[ty][m.index()]).sum::<f64>();
    let donate = |ty: usize| mix[ty][Message::EnterDonate.index()];
    [enter(0), enter(1), donate(0), donate(1)]
}

/// Every equilibrium of the women's game for `treatment`, sorted by `(r, rho)`.
pub fn enumerate_equilibria(params: &ModelParams, treatment: Treatment, cfg: &OracleConfig) -> Vec<EquilibriumResult> {
    let game = params.game(treatment);
    enumerate_game(&game, cfg, ["f", "m"])
        .equilibria
        .into_iter()
        .map(|eq| {
            let profile = StrategyProfile::from_mix(&eq.mix, treatment);
            EquilibriumResult {
                treatment,
                branch: eq.support,
                beliefs: resolve_beliefs(&profile, params, treatment),
                stable: eq.stable.map(|s| s.stable).unwrap_or(true),
                profile,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stability {
    pub stable: bool,
    /// The dynamics were still moving when the iteration budget ran out.
    pub oscillating: bool,
    /// Largest distance from the equilibrium at the end of any perturbed run.
    pub max_return_distance: f64,
}

/// One step of partial best-response adjustment. Indifferent types keep
/// their current mix over the optimal set.
fn adjust(game: &SignalGame, mix: &Mix, step: f64, tol: f64) -> Mix {
    let beliefs = game.beliefs(mix).map(|b| b.value);
    let mut next = *mix;
    for ty in 0..2 {
        let br = best_response_game(game, ty, &beliefs, tol);
        let mut target = [0.0; 4];
        let mass: f64 = br.actions.iter().map(|m| mix[ty][m.index()]).sum();
        if br.actions.len() == 1 {
            target[br.actions[0].index()] = 1.0;
        } else if mass > 0.0 {
            for m in &br.actions {
                target[m.index()] = mix[ty][m.index()] / mass;
            }
        } else {
            for m in &br.actions {
                target[m.index()] = 1.0 / br.actions.len() as f64;
            }
        }
        let mut close = true;
        for &m in game.messages {
            let i = m.index();
            next[ty][i] = mix[ty][i] + step * (target[i] - mix[ty][i]);
            close &= (target[i] - next[ty][i]).abs() < step;
        }
        if close && br.actions.len() == 1 {
            next[ty] = target;
        }
    }
    next
}

fn perturbations(game: &SignalGame, mix: &Mix, delta: f64) -> Vec<Mix> {
    // Perturb in profile coordinates: entry probability, then the donation
    // split where the game has one.
    let prosocial = game.has(Message::EnterDonate);
    let mut out = Vec::new();
    for ty in 0..2 {
        let row = mix[ty];
        let stay = row[Message::Stay.index()];
        let enter = 1.0 - stay;
        for sign in [-1.0, 1.0] {
            let e = (enter + sign * delta).clamp(0.0, 1.0);
            if e != enter {
                let mut m = *mix;
                m[ty][Message::Stay.index()] = 1.0 - e;
                if prosocial {
                    let d = row[Message::EnterDonate.index()];
                    let share = if enter > 0.0 { d / enter } else { 1.0 };
                    m[ty][Message::EnterDonate.index()] = e * share;
                    m[ty][Message::EnterKeep.index()] = e * (1.0 - share);
                } else {
                    m[ty][Message::Enter.index()] = e;
                }
                out.push(m);
            }
            if prosocial && enter > 0.0 {
                let share = row[Message::EnterDonate.index()] / enter;
                let s = (share + sign * delta).clamp(0.0, 1.0);
                if s != share {
                    let mut m = *mix;
                    m[ty][Message::EnterDonate.index()] = enter * s;
                    m[ty][Message::EnterKeep.index()] = enter * (1.0 - s);
                    out.push(m);
                }
            }
        }
    }
    out
}

/// Stability under perturbation followed by partial best-response dynamics
/// with step `delta`. Stable iff every perturbed run ends within `10·delta`.
pub fn classify_game_stability(game: &SignalGame, mix: &Mix, delta: f64, max_iter: usize, tol: f64) -> Stability {
    let mut worst: f64 = 0.0;
    let mut oscillating = false;
    for start in perturbations(game, mix, delta) {
        let mut cur = start;
        let mut settled = false;
        for _ in 0..max_iter {
            let next = adjust(game, &cur, delta, tol);
            let moved = mix_distance(&next, &cur);
            cur = next;
            if moved == 0.0 {
                settled = true;
                break;
            }
        }
        let d = mix_distance(&cur, mix);
        if d > 10.0 * delta && !settled {
            oscillating = true;
        }
        worst = worst.max(d);
    }
    let stable = worst <= 10.0 * delta;
    Stability { stable, oscillating: oscillating && !stable, max_return_distance: worst }
}

pub fn classify_stability(result: &EquilibriumResult, params: &ModelParams, delta: f64, max_iter: usize) -> Stability {
    let game = params.game(result.treatment);
    classify_game_stability(
        &game,
        &result.profile.to_mix(result.treatment),
        delta,
        max_iter,
        OracleConfig::default().tol,
    )
}

/// Response of an equilibrium to a small change in `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaResponse {
    /// An equilibrium with the same support exists at `lambda ± eps`.
    pub persists: bool,
    /// Along that branch, participation (or donation) rises with `lambda`,
    /// against the direction of every other branch.
    pub perverse: bool,
}

impl LambdaResponse {
    pub fn stable(&self) -> bool {
        self.persists && !self.perverse
    }
}

/// Recomputes the equilibrium set at `lambda ± eps` and follows the branch
/// with the same support.
pub fn lambda_response(result: &EquilibriumResult, params: &ModelParams, eps: f64) -> LambdaResponse {
    let cfg = OracleConfig { classify: false, ..OracleConfig::default() };
    let t = result.treatment;
    let own = params.game(t);
    let support = enumerate_game(&own, &cfg, ["f", "m"])
        .equilibria
        .into_iter()
        .min_by(|a, b| {
            let pa = StrategyProfile::from_mix(&a.mix, t).distance(&result.profile);
            let pb = StrategyProfile::from_mix(&b.mix, t).distance(&result.profile);
            pa.partial_cmp(&pb).unwrap()
        })
        .map(|e| e.support);
    let Some(support) = support else {
        return LambdaResponse { persists: false, perverse: false };
    };
    let follow = |lambda: f64| {
        let p = params.with_lambda(lambda.max(0.0));
        enumerate_game(&p.game(t), &cfg, ["f", "m"])
            .equilibria
            .into_iter()
            .find(|e| e.support == support)
            .map(|e| StrategyProfile::from_mix(&e.mix, t))
    };
    match (follow(params.lambda - eps), follow(params.lambda + eps)) {
        (Some(lo), Some(hi)) => {
            let level = |p: &StrategyProfile| {
                let q = params.q;
                let entry = (1.0 - q) * p.r + q * p.rho;
                let donate = (1.0 - q) * p.r * p.r_t.unwrap_or(0.0) + q * p.rho * p.rho_t.unwrap_or(0.0);
                (entry, donate)
            };
            let (e_lo, d_lo) = level(&lo);
            let (e_hi, d_hi) = level(&hi);
            // Donation rising in lambda is the normal prosocial response;
            // entry rising in lambda is not.
            let perverse = e_hi > e_lo + 1e-12 || (t == Treatment::Prosocial && d_hi < d_lo - 1e-12);
            LambdaResponse { persists: true, perverse }
        }
        _ => LambdaResponse { persists: false, perverse: false },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BeliefSystem;
    use crate::testutil::theory_params;

    #[test]
    fn best_response_examples() {
        let p = theory_params(0.75);
        let beliefs = BeliefSystem::fixed(0.0, 2.0 / 3.0, 0.0, 0.0);
        let br = best_response(SenderType::M, &beliefs, &p, Treatment::Baseline, 1e-9);
        assert!(br.indifferent);
        assert_eq!(br.actions, vec![Message::Stay, Message::Enter]);

        let br = best_response(SenderType::F, &beliefs, &p, Treatment::Baseline, 1e-9);
        assert_eq!(br.actions, vec![Message::Stay]);
        assert!(!br.indifferent);

        let p0 = theory_params(0.0);
        let br =
            best_response(SenderType::F, &BeliefSystem::fixed(0.5, 0.5, 0.5, 0.5), &p0, Treatment::Prosocial, 1e-9);
        assert_eq!(br.actions, vec![Message::EnterDonate]);
        let u: Vec<f64> = br.utilities.iter().map(|x| x.1).collect();
        for (a, b) in u.iter().zip([1.0, 1.4, 0.9]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn check_examples() {
        let p = theory_params(0.75);
        let c = check_equilibrium(&StrategyProfile::entry(0.0, 0.5), &p, Treatment::Baseline, 1e-9);
        assert!(c.ok, "{:?}", c.diagnostics);
        assert!(c.diagnostics.max_violation < 1e-12);

        // Pooling on entry at lambda = 2: stay is off path, D1 assigns it to f.
        // f: 0.9 + 2·0.5 = 1.9 against 1 + 2 = 3.
        let p = theory_params(2.0);
        let c = check_equilibrium(&StrategyProfile::entry(1.0, 1.0), &p, Treatment::Baseline, 1e-9);
        assert!(!c.ok);
        assert!((c.diagnostics.types[0].gap - 1.1).abs() < 1e-12);
        assert_eq!(c.diagnostics.types[0].worst_played, Some(Message::Enter));
        assert!((c.diagnostics.max_violation - 1.1).abs() < 1e-12);
        let lines = c.diagnostics.describe(["f", "m"]);
        assert!(lines[0].starts_with("type f strictly prefers stay"));

        let p = theory_params(0.5);
        let c = check_equilibrium(&StrategyProfile::prosocial(1.0, 1.0, 1.0, 0.0), &p, Treatment::Prosocial, 1e-9);
        assert!(c.ok);
    }

    #[test]
    fn enumerate_baseline_unique_mixed() {
        let eqs = enumerate_equilibria(&theory_params(0.75), Treatment::Baseline, &OracleConfig::default());
        assert_eq!(eqs.len(), 1);
        assert!(eqs[0].profile.distance(&StrategyProfile::entry(0.0, 0.5)) < 1e-12);
    }

    #[test]
    fn enumerate_preferential_three_equilibria() {
        let eqs = enumerate_equilibria(&theory_params(0.3), Treatment::Preferential, &OracleConfig::default());
        let got: Vec<(f64, f64, bool)> = eqs.iter().map(|e| (e.profile.r, e.profile.rho, e.stable)).collect();
        assert_eq!(got.len(), 3, "{got:?}");
        assert!((got[0].0).abs() < 1e-12 && (got[0].1 - 1.0).abs() < 1e-12 && got[0].2);
        assert!((got[1].0 - 0.5).abs() < 1e-12 && (got[1].1 - 1.0).abs() < 1e-12 && !got[1].2);
        assert!((got[2].0 - 1.0).abs() < 1e-12 && (got[2].1 - 1.0).abs() < 1e-12 && got[2].2);
    }

    #[test]
    fn enumerate_prosocial_full_entry() {
        for (lambda, rho_t) in [(0.0, 0.0), (1.2, 0.2), (3.0, 1.0)] {
            let eqs = enumerate_equilibria(&theory_params(lambda), Treatment::Prosocial, &OracleConfig::default());
            assert_eq!(eqs.len(), 1, "lambda {lambda}: {eqs:?}");
            let want = StrategyProfile::prosocial(1.0, 1.0, 1.0, rho_t);
            assert!(eqs[0].profile.distance(&want) < 1e-12, "lambda {lambda}: {:?}", eqs[0].profile);
        }
    }

    #[test]
    fn stability_examples() {
        let p = theory_params(0.3);
        let unstable = EquilibriumResult {
            treatment: Treatment::Preferential,
            branch: "mix".into(),
            profile: StrategyProfile::entry(0.5, 1.0),
            beliefs: resolve_beliefs(&StrategyProfile::entry(0.5, 1.0), &p, Treatment::Preferential),
            stable: true,
        };
        assert!(!classify_stability(&unstable, &p, 1e-3, 1000).stable);
        let pool = EquilibriumResult { profile: StrategyProfile::entry(1.0, 1.0), ..unstable.clone() };
        assert!(classify_stability(&pool, &p, 1e-3, 1000).stable);

        let p = theory_params(2.0);
        let none =
            EquilibriumResult { treatment: Treatment::Baseline, profile: StrategyProfile::entry(0.0, 0.0), ..unstable };
        assert!(classify_stability(&none, &p, 1e-3, 1000).stable);
    }

    #[test]
    fn lambda_perturbation_flags_interior_affirmative_branch() {
        let p = theory_params(0.3);
        let eqs = enumerate_equilibria(&p, Treatment::Preferential, &OracleConfig::default());
        let flags: Vec<bool> = eqs.iter().map(|e| lambda_response(e, &p, 1e-4).stable()).collect();
        assert_eq!(flags, vec![true, false, true]);
    }

    #[test]
    fn zero_lambda_ties_are_reported_as_degenerate() {
        // Zero material gain for the m-type and no image weight: any mix is an
        // equilibrium for that type.
        let p = ModelParams { w: 1.0 / 3.0, lambda: 0.0, ..theory_params(0.0) };
        let game = p.game(Treatment::Baseline);
        let e = enumerate_game(&game, &OracleConfig::default(), ["f", "m"]);
        assert!(!e.degenerate.is_empty());
        assert_eq!(e.equilibria.len(), 2);
    }
}
