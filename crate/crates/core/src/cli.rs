//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when `verify` finds a mismatch, 2 on bad
//! arguments or unreadable inputs.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis;
use crate::closed_form::{self, ResultRow};
use crate::model::{validate_params, EquilibriumResult, ModelParams, Treatment};
use crate::oracle::{check_equilibrium, enumerate_equilibria, OracleConfig};
use crate::simulator::{self, Calibrator, ExperimentConfig, Gender};

/// Closed-form and oracle profiles closer than this agree.
pub const MATCH_TOL: f64 = 1e-6;

/// Number of image weights checked per parameter draw and treatment.
pub const LAMBDAS_PER_DRAW: usize = 11;

#[derive(Debug, Parser)]
#[command(name = "signal-entry", version, about = "Tournament entry under social image concerns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form equilibria for one parameter set.
    Solve {
        #[arg(long)]
        treatment: Treatment,
        /// Parameter JSON; the built-in example when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Overrides `lambda` from the parameter file.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check closed forms against the oracle on random parameter draws.
    Verify {
        #[arg(long, default_value_t = 200)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equilibrium correspondence over a parameter grid.
    #[command(allow_negative_numbers = true)]
    Sweep {
        #[arg(long, default_value = "lambda")]
        param: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        steps: usize,
        /// One or more treatments (repeat or comma-separate).
        #[arg(long, value_delimiter = ',', required = true)]
        treatment: Vec<Treatment>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the experiment and write the record CSV.
    Simulate {
        /// Experiment JSON; the calibrated defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Single win-probability estimate.
    Winprob {
        #[arg(long)]
        score: u32,
        #[arg(long)]
        gender: Gender,
        #[arg(long, default_value = "baseline")]
        treatment: Treatment,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Experiment JSON supplying the reference pools.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Entry-rate and proportion-test tables from simulated records.
    Report {
        /// Record CSVs (repeatable).
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        rates: PathBuf,
        #[arg(long)]
        tests: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "gender,treatment,condition")]
        keys: Vec<String>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Sim(#[from] simulator::SimError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
}

/// Parses `argv` and runs the command, returning the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn load_params(path: Option<&Path>) -> Result<ModelParams, CliError> {
    match path {
        None => Ok(ModelParams::example(0.0)),
        Some(p) => {
            ModelParams::from_json(&read_to_string(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => ExperimentConfig::from_json(&read_to_string(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Solve { treatment, params, lambda, out } => {
            let mut p = load_params(params.as_deref())?;
            if let Some(l) = lambda {
                p.lambda = l;
            }
            let results = closed_form::solve(&p, treatment)?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(ResultRow::HEADER)?;
            for r in &results {
                w.write_record(ResultRow::new(r, p.lambda).fields())?;
            }
            w.flush()?;
            Ok(0)
        }
        Command::Verify { draws, seed, threads, out } => {
            let rows = with_threads(threads, || verify(draws, seed))?;
            let mismatches = rows.iter().filter(|r| !r.matched).count();
            write_verify_rows(&rows, output(out.as_deref())?)?;
            if mismatches > 0 {
                eprintln!("{mismatches} mismatches");
                Ok(1)
            } else {
                Ok(0)
            }
        }
        Command::Sweep { param, from, to, steps, treatment, params, out } => {
            let base = load_params(params.as_deref())?;
            let spec = SweepSpec { param, from, to, steps, treatments: treatment };
            let rows = sweep(&base, &spec)?;
            write_sweep_rows(&spec.param, &rows, output(out.as_deref())?)?;
            Ok(0)
        }
        Command::Simulate { config, seed, out, threads } => {
            let config = load_config(config.as_deref())?;
            let data = with_threads(threads, || simulator::simulate_experiment(&config, seed))??;
            simulator::write_dataset(&data, &out)?;
            Ok(0)
        }
        Command::Winprob { score, gender, treatment, draws, seed, config } => {
            let config = load_config(config.as_deref())?;
            let cal = Calibrator::new(&config);
            let w = simulator::estimate_win_prob(
                score,
                gender,
                cal.pools(),
                treatment,
                draws,
                seed,
                config.preferential_bonus,
            )?;
            println!("score,gender,treatment,draws,win_prob");
            println!("{score},{gender},{treatment},{draws},{w:.6}");
            Ok(0)
        }
        Command::Report { data, rates, tests, keys } => {
            let names: Vec<&str> = keys.iter().map(String::as_str).collect();
            let keys = analysis::parse_keys(&names)?;
            let mut records = Vec::new();
            for path in &data {
                records.extend(simulator::read_records(path)?);
            }
            analysis::entry_rates(&records, &keys).write_csv(output(Some(&rates))?)?;
            analysis::write_tests_csv(&analysis::headline_tests(&records), output(Some(&tests))?)?;
            Ok(0)
        }
    }
}

/// One cell of the closed-form vs oracle comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyRow {
    pub draw: usize,
    pub treatment: Treatment,
    pub lambda: f64,
    pub closed_form: usize,
    pub oracle: usize,
    pub matched: bool,
    /// Largest best-response violation of any closed-form profile.
    pub max_violation: f64,
}

/// Rejection sample from the region where every treatment's assumptions hold.
pub fn sample_params(rng: &mut ChaCha8Rng) -> ModelParams {
    loop {
        let b_p = rng.random_range(0.5..2.0);
        let p = ModelParams {
            b_t: b_p * rng.random_range(1.2..6.0),
            b_p,
            w: rng.random_range(0.05..0.95),
            w_a: rng.random_range(0.05..0.99),
            c_f: rng.random_range(0.01..2.0),
            c_m: 0.0,
            theta_f: rng.random_range(0.01..4.0),
            theta_m: -rng.random_range(0.01..4.0),
            q: rng.random_range(0.05..0.95),
            lambda: 0.0,
        };
        if Treatment::ALL.iter().all(|&t| validate_params(&p, t).is_ok()) {
            return p;
        }
    }
}

/// Branch thresholds of `lambda` for one treatment, in increasing order.
pub fn thresholds(p: &ModelParams, treatment: Treatment) -> Vec<f64> {
    let q = p.q;
    let mut t = match treatment {
        Treatment::Baseline => {
            let g = p.w * p.b_t - p.b_p;
            vec![g, g / (1.0 - q)]
        }
        Treatment::Preferential => {
            let gain = p.w_a * p.b_t - p.b_p;
            let h = gain - p.c_f;
            vec![h, h / q, gain, gain / (1.0 - q)]
        }
        Treatment::Prosocial => {
            let lo = -p.w * p.theta_m;
            vec![lo, lo / (1.0 - q)]
        }
    };
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// `LAMBDAS_PER_DRAW` image weights covering every branch: zero, each
/// threshold, the midpoints between them, and points below and above.
pub fn lambda_grid(p: &ModelParams, treatment: Treatment) -> Vec<f64> {
    let t = thresholds(p, treatment);
    let max = *t.last().expect("thresholds");
    let mut grid = vec![0.0, t[0] / 2.0];
    grid.extend(&t);
    grid.extend(t.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    grid.extend([1.25 * max, 2.0 * max]);
    let mut k = 1;
    while grid.len() < LAMBDAS_PER_DRAW {
        grid.push(max * (0.1 + 0.37 * k as f64));
        k += 1;
    }
    grid.sort_by(f64::total_cmp);
    grid.truncate(LAMBDAS_PER_DRAW);
    grid
}

fn matches(a: &[EquilibriumResult], b: &[EquilibriumResult]) -> bool {
    let covered = |xs: &[EquilibriumResult], ys: &[EquilibriumResult]| {
        xs.iter().all(|x| ys.iter().any(|y| x.profile.distance(&y.profile) <= MATCH_TOL))
    };
    covered(a, b) && covered(b, a)
}

/// Compares closed form and oracle at one parameter set.
pub fn verify_cell(draw: usize, p: &ModelParams, treatment: Treatment) -> VerifyRow {
    let cfg = OracleConfig { classify: false, ..OracleConfig::default() };
    let cf = closed_form::solve(p, treatment).unwrap_or_default();
    let oracle = enumerate_equilibria(p, treatment, &cfg);
    let max_violation = cf
        .iter()
        .map(|r| check_equilibrium(&r.profile, p, treatment, cfg.tol).diagnostics.max_violation)
        .fold(0.0, f64::max);
    VerifyRow {
        draw,
        treatment,
        lambda: p.lambda,
        closed_form: cf.len(),
        oracle: oracle.len(),
        matched: !cf.is_empty() && matches(&cf, &oracle),
        max_violation,
    }
}

/// Full verification run: `draws` parameter sets, every treatment, and
/// [`LAMBDAS_PER_DRAW`] image weights each. Rows come out in draw order.
pub fn verify(draws: usize, seed: u64) -> Vec<VerifyRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<ModelParams> = (0..draws).map(|_| sample_params(&mut rng)).collect();
    params
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, p)| {
            Treatment::ALL.into_iter().flat_map(move |t| {
                lambda_grid(p, t).into_iter().map(move |lambda| verify_cell(i, &p.with_lambda(lambda), t))
            })
        })
        .collect()
}

pub fn write_verify_rows<W: Write>(rows: &[VerifyRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["draw", "treatment", "lambda", "closed_form", "oracle", "status", "max_violation"])?;
    for r in rows {
        w.write_record([
            r.draw.to_string(),
            r.treatment.to_string(),
            format!("{:.6}", r.lambda),
            r.closed_form.to_string(),
            r.oracle.to_string(),
            (if r.matched { "match" } else { "mismatch" }).to_string(),
            format!("{:.3e}", r.max_violation),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: String,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
    pub treatments: Vec<Treatment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub row: ResultRow,
    /// This equilibrium is the max-participation stable selection.
    pub selected: bool,
}

/// Closed-form equilibria at `steps` evenly spaced values of one parameter.
pub fn sweep(base: &ModelParams, spec: &SweepSpec) -> Result<Vec<SweepRow>, CliError> {
    if spec.from.is_nan() || spec.to.is_nan() || spec.from > spec.to || spec.steps < 2 {
        return Err(CliError::Usage("sweep needs from ≤ to and steps ≥ 2".into()));
    }
    let mut probe = *base;
    probe.set_field(&spec.param, spec.from)?;
    let mut rows = Vec::new();
    for &t in &spec.treatments {
        for i in 0..spec.steps {
            let value = spec.from + (spec.to - spec.from) * i as f64 / (spec.steps - 1) as f64;
            let mut p = *base;
            p.set_field(&spec.param, value)?;
            let results = closed_form::solve(&p, t)?;
            let pick = closed_form::select_max_participation(&results, p.q).map(|r| r.profile);
            for r in &results {
                rows.push(SweepRow { value, row: ResultRow::new(r, p.lambda), selected: Some(r.profile) == pick });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_rows<W: Write>(param: &str, rows: &[SweepRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["param", "value"];
    header.extend(ResultRow::HEADER);
    header.push("selected");
    w.write_record(&header)?;
    for r in rows {
        let mut fields = vec![param.to_string(), format!("{:.6}", r.value)];
        fields.extend(r.row.fields());
        fields.push(r.selected.to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
