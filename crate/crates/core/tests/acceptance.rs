//! Acceptance suite. One line per criterion; exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use signal_entry::analysis::{entry_rates, two_proportion_test, GroupKey, RateTable};
use signal_entry::cli::{lambda_grid, sample_params, sweep, verify, SweepSpec};
use signal_entry::closed_form::{solve, solve_baseline, solve_preferential, solve_prosocial};
use signal_entry::model::{ModelParams, StrategyProfile, Treatment};
use signal_entry::simulator::{
    estimate_win_prob, simulate_experiment, Condition, ExperimentConfig, Gender, ScorePools,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn equivalence() -> Outcome {
    let (draws, seed) = (200, 7);
    let start = Instant::now();
    let rows = verify(draws, seed);
    let secs = start.elapsed().as_secs_f64();
    let mismatches = rows.iter().filter(|r| !r.matched).count();
    ensure(rows.len() == draws * 3 * 11, format!("{} cells, expected {}", rows.len(), draws * 33))?;
    ensure(mismatches == 0, format!("{mismatches} mismatches"))?;
    ensure(secs <= 60.0, format!("took {secs:.1}s"))?;

    // The grid has to reach every branch of every treatment.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut branches = BTreeSet::new();
    for _ in 0..draws {
        let p = sample_params(&mut rng);
        for t in Treatment::ALL {
            for lambda in lambda_grid(&p, t) {
                for r in solve(&p.with_lambda(lambda), t).map_err(|e| e.to_string())? {
                    branches.insert(r.branch);
                }
            }
        }
    }
    ensure(branches.len() == 11, format!("branches reached: {branches:?}"))?;
    Ok(format!("{} cells, 0 mismatches, 11 branches, {secs:.2}s", rows.len()))
}

fn spot_checks() -> Outcome {
    let p = ModelParams::example;
    let err = |e: signal_entry::model::ModelError| e.to_string();

    let b = |lambda| solve_baseline(&p(lambda)).map(|r| r.profile).map_err(err);
    ensure(b(0.0)? == StrategyProfile::entry(0.0, 1.0), "baseline λ=0")?;
    let x = b(0.75)?;
    ensure(x.r == 0.0 && close(x.rho, 0.5), format!("baseline λ=0.75: {x:?}"))?;
    ensure(b(2.0)? == StrategyProfile::entry(0.0, 0.0), "baseline λ=2")?;

    let rs = solve_preferential(&p(0.2)).map_err(err)?;
    ensure(rs.iter().any(|r| r.profile == StrategyProfile::entry(1.0, 1.0)), "preferential λ=0.2")?;
    let rs = solve_preferential(&p(0.3)).map_err(err)?;
    let triple: Vec<(f64, f64, bool)> = rs.iter().map(|r| (r.profile.r, r.profile.rho, r.stable)).collect();
    ensure(triple.len() == 3, format!("preferential λ=0.3: {triple:?}"))?;
    let has = |r: f64, stable: bool| triple.iter().any(|t| close(t.0, r) && close(t.1, 1.0) && t.2 == stable);
    ensure(has(1.0, true) && has(0.5, false) && has(0.0, true), format!("preferential λ=0.3: {triple:?}"))?;
    let rs = solve_preferential(&p(1.2)).map_err(err)?;
    ensure(rs.len() == 1 && rs[0].profile.r == 0.0 && close(rs[0].profile.rho, 0.5), "preferential λ=1.2")?;

    let s = |lambda| solve_prosocial(&p(lambda)).map(|r| r.profile).map_err(err);
    ensure(s(0.5)? == StrategyProfile::prosocial(1.0, 1.0, 1.0, 0.0), "prosocial λ=0.5")?;
    let x = s(1.2)?;
    ensure(
        (x.r, x.rho, x.r_t) == (1.0, 1.0, Some(1.0)) && close(x.rho_t.unwrap_or(f64::NAN), 0.2),
        format!("prosocial λ=1.2: {x:?}"),
    )?;
    ensure(s(3.0)? == StrategyProfile::prosocial(1.0, 1.0, 1.0, 1.0), "prosocial λ=3")?;
    Ok("9 examples within 1e-9".into())
}

fn comparative_statics() -> Outcome {
    let spec =
        SweepSpec { param: "lambda".into(), from: 0.0, to: 3.0, steps: 301, treatments: Treatment::ALL.to_vec() };
    let rows = sweep(&ModelParams::example(0.0), &spec).map_err(|e| e.to_string())?;
    for t in Treatment::ALL {
        let picked: Vec<_> = rows.iter().filter(|r| r.selected && r.row.treatment == t.as_str()).collect();
        ensure(picked.len() == 301, format!("{t}: {} selected rows", picked.len()))?;
        for w in picked.windows(2) {
            let (a, b) = (&w[0].row, &w[1].row);
            match t {
                Treatment::Prosocial => {
                    ensure(b.r == 1.0 && b.rho == 1.0, format!("prosocial entry below 1 at λ={}", b.lambda))?;
                    ensure(b.rho_t >= a.rho_t, format!("rho_T falls at λ={}", b.lambda))?;
                }
                _ => ensure(b.rho <= a.rho, format!("{t}: rho rises at λ={}", b.lambda))?,
            }
        }
    }
    Ok("301 points x 3 treatments monotone".into())
}

/// Exact win probability by enumerating every equally likely draw.
fn exact_win_prob(score: u32, gender: Gender, pools: &ScorePools, treatment: Treatment) -> f64 {
    let bonus = |g: Gender| u32::from(treatment == Treatment::Preferential && g == Gender::Female);
    let own = score + bonus(gender);
    let same: Vec<u32> = pools.get(gender).iter().map(|s| s + bonus(gender)).collect();
    let other: Vec<u32> = pools.get(gender.other()).iter().map(|s| s + bonus(gender.other())).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut rivals = [0u32; 5];
    let sizes = [same.len(), same.len(), other.len(), other.len(), other.len()];
    let cells: usize = sizes.iter().product();
    for mut k in 0..cells {
        for (i, &n) in sizes.iter().enumerate() {
            rivals[i] = if i < 2 { same[k % n] } else { other[k % n] };
            k /= n;
        }
        let above = rivals.iter().filter(|&&s| s > own).count() as f64;
        let tied = rivals.iter().filter(|&&s| s == own).count() as f64;
        total += ((2.0 - above) / (tied + 1.0)).clamp(0.0, 1.0);
        count += 1;
    }
    total / count as f64
}

fn win_probability() -> Outcome {
    let draws = 100_000;
    let flat = ScorePools { men: vec![10; 4], women: vec![10; 4] };
    let w =
        estimate_win_prob(10, Gender::Female, &flat, Treatment::Baseline, draws, 1, 1).map_err(|e| e.to_string())?;
    ensure((w - 1.0 / 3.0).abs() <= 0.01, format!("identical scores: {w}"))?;

    // Same pool for both genders: averaging over the focal score gives 1/3.
    let pool = vec![6, 9, 9, 12, 15];
    let sym = ScorePools { men: pool.clone(), women: pool.clone() };
    let mut avg = 0.0;
    for (i, &s) in pool.iter().enumerate() {
        avg += estimate_win_prob(s, Gender::Male, &sym, Treatment::Baseline, draws, 10 + i as u64, 1)
            .map_err(|e| e.to_string())?;
    }
    avg /= pool.len() as f64;
    ensure((avg - 1.0 / 3.0).abs() <= 0.01, format!("symmetric pool average: {avg}"))?;

    let cases = [
        ScorePools { men: vec![8, 10, 10, 12], women: vec![9, 10, 11] },
        ScorePools { men: vec![10, 11], women: vec![10, 10, 11] },
        ScorePools { men: vec![5, 7, 9], women: vec![6] },
    ];
    let mut worst: f64 = 0.0;
    let mut seed = 100;
    for pools in &cases {
        for t in [Treatment::Baseline, Treatment::Preferential] {
            for g in [Gender::Female, Gender::Male] {
                for s in 4..14 {
                    seed += 1;
                    let est = estimate_win_prob(s, g, pools, t, draws, seed, 1).map_err(|e| e.to_string())?;
                    worst = worst.max((est - exact_win_prob(s, g, pools, t)).abs());
                }
            }
        }
    }
    ensure(worst <= 0.005, format!("largest gap to enumeration {worst:.4}"))?;
    Ok(format!("flat {w:.4}, symmetric {avg:.4}, max enumeration gap {worst:.4}"))
}

fn rates(condition: Condition, seed: u64) -> Result<RateTable, String> {
    let config = ExperimentConfig { sessions: 1000, condition, ..ExperimentConfig::default() };
    let data = simulate_experiment(&config, seed).map_err(|e| e.to_string())?;
    Ok(entry_rates(&data.records, &[GroupKey::Gender, GroupKey::Treatment]))
}

fn entry_pattern() -> Outcome {
    let public = rates(Condition::Public, 1)?;
    let private = rates(Condition::Private, 2)?;
    let get = |table: &RateTable, g: Gender, t: Treatment| {
        let row = table.find(&[g.as_str(), t.as_str()]).expect("row present");
        (row.rate.unwrap_or(f64::NAN), row.n as f64)
    };
    let w = |table: &RateTable, t| get(table, Gender::Female, t).0;
    let (bp, bv) = (w(&public, Treatment::Baseline), w(&private, Treatment::Baseline));
    let (pp, pv) = (w(&public, Treatment::Preferential), w(&private, Treatment::Preferential));
    let (sp, sv) = (w(&public, Treatment::Prosocial), w(&private, Treatment::Prosocial));
    let summary = format!(
        "women public/private: baseline {bp:.3}/{bv:.3}, preferential {pp:.3}/{pv:.3}, prosocial {sp:.3}/{sv:.3}"
    );
    ensure((bv - 0.46).abs() <= 0.05, format!("private baseline {bv:.3}; {summary}"))?;
    ensure(bv - bp >= 0.15, format!("(a) baseline gap {:.3}; {summary}", bv - bp))?;
    ensure(pp < pv && pp > bp && pv > bv, format!("(b) {summary}"))?;
    ensure((sp - sv).abs() <= 0.05, format!("(c) {summary}"))?;
    let mut men = Vec::new();
    for t in Treatment::ALL {
        let (a, na) = get(&public, Gender::Male, t);
        let (b, nb) = get(&private, Gender::Male, t);
        let se = (a * (1.0 - a) / na + b * (1.0 - b) / nb).sqrt();
        ensure((a - b).abs() <= 3.0 * se, format!("(d) men {t}: {a:.3} vs {b:.3}, se {se:.4}"))?;
        men.push(format!("{t} {:+.3}", a - b));
    }
    Ok(format!("{summary}; men gaps {}", men.join(", ")))
}

fn proportion_anchor() -> Outcome {
    let t = two_proportion_test(21, 46, 11, 45).map_err(|e| e.to_string())?;
    ensure((t.z - 2.118356495057887).abs() <= 1e-10, format!("z = {}", t.z))?;
    ensure((t.p - 0.0341448873816323).abs() <= 1e-10, format!("p = {}", t.p))?;
    ensure((0.01..=0.06).contains(&t.p), format!("p = {} outside [0.01, 0.06]", t.p))?;
    Ok(format!("z = {:.6}, p = {:.6}", t.z, t.p))
}

fn run_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_signal-entry")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name);
    let config = ExperimentConfig { sessions: 60, condition: Condition::Public, ..ExperimentConfig::default() };
    std::fs::write(path("config.json"), config.to_json()).map_err(|e| e.to_string())?;
    let cfg = path("config.json");
    let cfg = cfg.to_str().unwrap_or_default();

    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (tag, threads) in runs {
        let sim = path(&format!("sim_{tag}.csv"));
        let ver = path(&format!("verify_{tag}.csv"));
        run_bin(&[
            "simulate",
            "--config",
            cfg,
            "--seed",
            "11",
            "--threads",
            threads,
            "--out",
            sim.to_str().unwrap_or_default(),
        ])?;
        run_bin(&[
            "verify",
            "--draws",
            "40",
            "--seed",
            "5",
            "--threads",
            threads,
            "--out",
            ver.to_str().unwrap_or_default(),
        ])?;
    }
    for name in ["sim_{}.csv", "sim_{}.csv.meta.json", "verify_{}.csv"] {
        let reference = read(&path(&name.replace("{}", "a")))?;
        for (tag, _) in &runs[1..] {
            ensure(
                read(&path(&name.replace("{}", tag)))? == reference,
                format!("{} differs", name.replace("{}", tag)),
            )?;
        }
    }
    Ok("simulate CSV, metadata and verify CSV identical across repeats and 1 vs 4 threads".into())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 closed form matches oracle", equivalence),
        ("2 worked examples", spot_checks),
        ("3 comparative statics", comparative_statics),
        ("4 win probability estimator", win_probability),
        ("5 entry pattern by condition", entry_pattern),
        ("6 proportion test anchor", proportion_anchor),
        ("7 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
