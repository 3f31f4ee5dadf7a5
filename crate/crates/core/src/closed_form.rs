//! Piecewise closed-form equilibria for the three treatments.
//!
//! Branch labels follow the clause numbering of the characterization:
//! `P1-*` for the baseline, `P2-*` for affirmative action, `P3-*` for the
//! prosocial incentive.

use serde::Serialize;

use crate::model::{
    resolve_beliefs, validate_params, EquilibriumResult, ModelError, ModelParams, StrategyProfile, Treatment,
};
use crate::oracle::{classify_stability, OracleConfig};

/// Profiles closer than this are reported once.
const DEDUP_EPS: f64 = 1e-12;

/// How a single series is picked out of a multi-equilibrium treatment.
pub const SELECTION_RULE: &str = "max-participation stable: among stable equilibria, the highest expected \
women's entry rate (1-q)r + q*rho; unstable equilibria are considered only if none is stable";

fn finish(
    params: &ModelParams,
    treatment: Treatment,
    branch: &str,
    profile: StrategyProfile,
    stable: Option<bool>,
) -> EquilibriumResult {
    let mut result = EquilibriumResult {
        treatment,
        branch: branch.to_string(),
        beliefs: resolve_beliefs(&profile, params, treatment),
        profile,
        stable: true,
    };
    result.stable = match stable {
        Some(s) => s,
        None => {
            let cfg = OracleConfig::default();
            classify_stability(&result, params, cfg.perturb, cfg.max_iter).stable
        }
    };
    result
}

/// Baseline: f-types never enter; m-type entry falls from 1 to 0 as the image
/// weight rises past `w·b_T − b_P`.
pub fn solve_baseline(params: &ModelParams) -> Result<EquilibriumResult, ModelError> {
    validate_params(params, Treatment::Baseline).into_result()?;
    let gain = params.w * params.b_t - params.b_p;
    let (q, lambda) = (params.q, params.lambda);
    let (branch, rho) = if lambda <= gain {
        ("P1-i", 1.0)
    } else if lambda >= gain / (1.0 - q) {
        ("P1-iii", 0.0)
    } else {
        ("P1-ii", (1.0 / q) * (1.0 - lambda * (1.0 - q) / gain))
    };
    Ok(finish(params, Treatment::Baseline, branch, StrategyProfile::entry(0.0, rho), None))
}

/// Affirmative action: every clause whose condition holds, deduplicated and
/// sorted by `(r, rho)`. The interior-`r` clause is always unstable.
pub fn solve_preferential(params: &ModelParams) -> Result<Vec<EquilibriumResult>, ModelError> {
    validate_params(params, Treatment::Preferential).into_result()?;
    let gain = params.w_a * params.b_t - params.b_p;
    let net = gain - params.c_f;
    let (q, lambda) = (params.q, params.lambda);

    // The interior clause goes last so that at its endpoints the coinciding
    // pure clause keeps the label.
    let mut candidates: Vec<(&str, StrategyProfile)> = Vec::new();
    if lambda <= net / q {
        candidates.push(("P2-i", StrategyProfile::entry(1.0, 1.0)));
    }
    if net <= lambda && lambda <= gain {
        candidates.push(("P2-iii", StrategyProfile::entry(0.0, 1.0)));
    }
    if gain <= lambda && lambda <= gain / (1.0 - q) {
        let rho = (1.0 / q) * (1.0 - lambda * (1.0 - q) / gain);
        candidates.push(("P2-iv", StrategyProfile::entry(0.0, rho)));
    }
    if lambda >= gain / (1.0 - q) {
        candidates.push(("P2-v", StrategyProfile::entry(0.0, 0.0)));
    }
    if net <= lambda && lambda <= net / q {
        let r = (q / (1.0 - q)) * (lambda - net) / net;
        candidates.push(("P2-ii", StrategyProfile::entry(r, 1.0)));
    }

    let mut kept: Vec<(&str, StrategyProfile)> = Vec::new();
    for (branch, profile) in candidates {
        if !kept.iter().any(|(_, p)| p.distance(&profile) <= DEDUP_EPS) {
            kept.push((branch, profile));
        }
    }
    let mut results: Vec<EquilibriumResult> = kept
        .into_iter()
        .map(|(branch, profile)| {
            let stable = (branch == "P2-ii").then_some(false);
            finish(params, Treatment::Preferential, branch, profile, stable)
        })
        .collect();
    results.sort_by(|a, b| (a.profile.r, a.profile.rho).partial_cmp(&(b.profile.r, b.profile.rho)).unwrap());
    Ok(results)
}

/// Prosocial incentive: full participation; only m-type donation responds to
/// the image weight.
pub fn solve_prosocial(params: &ModelParams) -> Result<EquilibriumResult, ModelError> {
    validate_params(params, Treatment::Prosocial).into_result()?;
    let (q, lambda) = (params.q, params.lambda);
    let lower = -params.w * params.theta_m;
    let (branch, rho_t) = if lambda <= lower {
        ("P3-i", 0.0)
    } else if lambda >= lower / (1.0 - q) {
        ("P3-iii", 1.0)
    } else {
        ("P3-ii", 1.0 - (1.0 / q) * (1.0 + lambda * (1.0 - q) / (params.w * params.theta_m)))
    };
    Ok(finish(params, Treatment::Prosocial, branch, StrategyProfile::prosocial(1.0, 1.0, 1.0, rho_t), None))
}

/// All closed-form equilibria for one treatment.
pub fn solve(params: &ModelParams, treatment: Treatment) -> Result<Vec<EquilibriumResult>, ModelError> {
    match treatment {
        Treatment::Baseline => solve_baseline(params).map(|r| vec![r]),
        Treatment::Preferential => solve_preferential(params),
        Treatment::Prosocial => solve_prosocial(params).map(|r| vec![r]),
    }
}

/// Picks the series used for plots and simulation (see [`SELECTION_RULE`]).
pub fn select_max_participation(results: &[EquilibriumResult], q: f64) -> Option<&EquilibriumResult> {
    let pick = |stable_only: bool| {
        results.iter().filter(|r| r.stable || !stable_only).fold(None::<&EquilibriumResult>, |best, r| match best {
            Some(b) if b.participation(q) >= r.participation(q) => Some(b),
            _ => Some(r),
        })
    };
    pick(true).or_else(|| pick(false))
}

/// Flat output row for one equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub treatment: String,
    pub branch: String,
    pub lambda: f64,
    pub r: f64,
    pub rho: f64,
    pub r_t: Option<f64>,
    pub rho_t: Option<f64>,
    pub stable: bool,
    pub mu_enter: f64,
    pub mu_stay: f64,
}

impl ResultRow {
    pub const HEADER: [&'static str; 10] =
        ["treatment", "branch", "lambda", "r", "rho", "r_T", "rho_T", "stable", "mu_enter", "mu_stay"];

    pub fn new(result: &EquilibriumResult, lambda: f64) -> Self {
        Self {
            treatment: result.treatment.as_str().to_string(),
            branch: result.branch.clone(),
            lambda,
            r: result.profile.r,
            rho: result.profile.rho,
            r_t: result.profile.r_t,
            rho_t: result.profile.rho_t,
            stable: result.stable,
            mu_enter: result.beliefs.mu_enter.value,
            mu_stay: result.beliefs.mu_stay.value,
        }
    }

    /// Fields formatted with six decimals for probabilities and beliefs.
    pub fn fields(&self) -> Vec<String> {
        let p = |x: f64| format!("{x:.6}");
        let opt = |x: Option<f64>| x.map(p).unwrap_or_default();
        vec![
            self.treatment.clone(),
            self.branch.clone(),
            p(self.lambda),
            p(self.r),
            p(self.rho),
            opt(self.r_t),
            opt(self.rho_t),
            self.stable.to_string(),
            p(self.mu_enter),
            p(self.mu_stay),
        ]
    }
}
