//! The three subcommands. Each writes its human-readable summary to `stdout`
//! and its files to the output directory, and returns whether every check passed.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use limper::analysis::{
    gordon_check, hausdorff_sum, ledger_spectrum_distance, lyapunov_convergence, CoverEstimate,
};
use limper::construction::{iterate, ConstructionLedger};
use limper::periodic::{band_spectrum_coupled, EnergyGrid};

use crate::error::{CliError, Result};
use crate::input::{parse_config, parse_ledger, parse_sampler};

/// Points of the default energy grid for the Lyapunov check.
const CONVERGENCE_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Gordon,
    Hausdorff,
    Lyapunov,
    Distance,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Gordon => "gordon",
            Check::Hausdorff => "hausdorff",
            Check::Lyapunov => "lyapunov",
            Check::Distance => "distance",
        }
    }
}

/// Parses a comma-separated check list, keeping first occurrences in order.
pub fn parse_checks(list: &str) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let check = match name {
            "gordon" => Check::Gordon,
            "hausdorff" => Check::Hausdorff,
            "lyapunov" => Check::Lyapunov,
            "distance" => Check::Distance,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown check `{other}` (expected gordon, hausdorff, lyapunov, distance)"
                )))
            }
        };
        if !checks.contains(&check) {
            checks.push(check);
        }
    }
    if checks.is_empty() {
        return Err(CliError::Usage("--checks needs at least one check".into()));
    }
    Ok(checks)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn with_path(path: &Path, err: limper::Error) -> CliError {
    match err {
        limper::Error::Parse { line, column, message } => CliError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        },
        other => CliError::Core(other),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn say(stdout: &mut dyn Write, line: std::fmt::Arguments) -> Result<()> {
    writeln!(stdout, "{line}").map_err(|e| CliError::io("<stdout>", e))
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must be positive and finite, got {x}")))
    }
}

/// Band table of `λf`; passes when every band is at most `2π/p` long.
pub fn cmd_spectrum(
    sampler: &Path,
    lambda: f64,
    tol: f64,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<bool> {
    positive("tol", tol)?;
    if !lambda.is_finite() {
        return Err(CliError::Usage(format!("--lambda must be finite, got {lambda}")));
    }
    let f = parse_sampler(&read(sampler)?).map_err(|e| with_path(sampler, e))?;
    let spectrum = band_spectrum_coupled(&f, lambda, tol)?;
    let p = f.period();
    say(stdout, format_args!("# period {p}, lambda {lambda}, tol {tol:e}"))?;
    for (i, b) in spectrum.bands.iter().enumerate() {
        say(stdout, format_args!("{i:>6}  [{}, {}]  length {}", b.left, b.right, b.length()))?;
    }
    let law = 2.0 * PI / p as f64;
    let longest = spectrum.max_band_length();
    let ok = longest <= law + 2.0 * tol;
    say(stdout, format_args!("total measure {}", spectrum.total_measure()))?;
    say(
        stdout,
        format_args!(
            "longest band {longest} vs 2π/p = {law}: {}",
            if ok { "ok" } else { "VIOLATED" }
        ),
    )?;
    if let Some(dir) = out {
        write_file(dir, "spectrum.csv", &spectrum.to_csv())?;
        write_file(dir, "spectrum.json", &(spectrum.to_json() + "\n"))?;
    }
    Ok(ok)
}

/// Runs the construction and writes `ledger.json`; passes when every required
/// certificate passed and no stage was cut short.
pub fn cmd_construct(
    config: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    stdout: &mut dyn Write,
) -> Result<bool> {
    let run = parse_config(&read(config)?).map_err(|e| with_path(config, e))?;
    let mut construction = run.construction()?;
    if let Some(seed) = seed {
        construction.seed = seed;
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| run.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let ledger = iterate(&construction, construction.stage_count)?;
    let path = write_file(&dir, "ledger.json", &ledger.to_json())?;
    summarize(&ledger, stdout)?;
    say(stdout, format_args!("ledger written to {}", path.display()))?;
    Ok(ledger.all_passed())
}

fn summarize(ledger: &ConstructionLedger, stdout: &mut dyn Write) -> Result<()> {
    for stage in &ledger.stages {
        let records = stage.enlargement.iter().map(|b| b.as_ref()).chain(std::iter::once(stage));
        for record in records {
            let p = &record.params;
            say(
                stdout,
                format_args!(
                    "stage {}: period {}, block {}, eps {}, floor {:e}, {} members materialized",
                    p.stage, p.period, p.tilde_period, p.eps, p.delta, record.materialized
                ),
            )?;
            for c in &record.certificates {
                let tag = match (c.passed, c.required) {
                    (true, _) => "pass",
                    (false, true) => "FAIL",
                    (false, false) => "fail (informational)",
                };
                say(
                    stdout,
                    format_args!("  {:<20} {:<22} {:e} vs {:e}", c.name, tag, c.value, c.threshold),
                )?;
            }
        }
    }
    say(stdout, format_args!("candidate evaluations: {}", ledger.evaluations))?;
    if let Some(f) = &ledger.failure {
        say(stdout, format_args!("stopped early: {f}"))?;
    }
    say(
        stdout,
        format_args!("result: {}", if ledger.all_passed() { "all certificates passed" } else { "certificates failed" }),
    )
}

pub struct VerifyOptions {
    pub alpha: f64,
    /// Coupling for the cover and convergence checks; defaults to the ledger's
    /// measurement coupling.
    pub lambda: Option<f64>,
    pub tol: f64,
}

/// Runs the requested checks on a ledger and writes one report per check.
pub fn cmd_verify(
    ledger_path: &Path,
    checks: &[Check],
    options: &VerifyOptions,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<bool> {
    if checks.is_empty() {
        return Err(CliError::Usage("--checks needs at least one check".into()));
    }
    if !(options.alpha > 0.0 && options.alpha <= 1.0) {
        return Err(CliError::Usage(format!("--alpha must be in (0, 1], got {}", options.alpha)));
    }
    positive("tol", options.tol)?;
    let ledger = parse_ledger(&read(ledger_path)?).map_err(|e| with_path(ledger_path, e))?;
    let lambda = options.lambda.unwrap_or(ledger.config.grid.measure_lambda);
    if !lambda.is_finite() {
        return Err(CliError::Usage(format!("--lambda must be finite, got {lambda}")));
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let mut all = true;
    for &check in checks {
        let passed = match check {
            Check::Gordon => {
                let q_max = ledger.gordon_periods().iter().map(|&(_, q)| q).max().unwrap_or(1);
                let report = gordon_check(&ledger, 3 * q_max)?;
                write_file(&dir, "gordon.json", &to_json(&report))?;
                write_file(&dir, "gordon.csv", &report.to_csv())?;
                for r in &report.rows {
                    say(
                        stdout,
                        format_args!(
                            "gordon q_{} = {}: deviation {:e} vs threshold {:e}, budget {}",
                            r.index,
                            r.q,
                            r.deviation,
                            r.threshold,
                            r.budget.map_or("n/a".to_string(), |b| format!("{b:e}"))
                        ),
                    )?;
                }
                report.passed()
            }
            Check::Hausdorff => {
                let covers = (1..=ledger.stages.len())
                    .map(|i| hausdorff_sum(&ledger, i, options.alpha, lambda))
                    .collect::<limper::Result<Vec<CoverEstimate>>>()?;
                write_file(&dir, "hausdorff.json", &to_json(&covers))?;
                let mut csv = String::from("stage,alpha,lambda,inflation,band_measure,cover_sum,closed_form\n");
                for c in &covers {
                    csv.push_str(&format!(
                        "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                        c.stage, c.alpha, c.lambda, c.inflation, c.band_measure, c.cover_sum, c.closed_form
                    ));
                    say(
                        stdout,
                        format_args!(
                            "hausdorff stage {}: measure {:e}, cover sum {:e} (α = {}), closed form {:e}",
                            c.stage, c.band_measure, c.cover_sum, c.alpha, c.closed_form
                        ),
                    )?;
                }
                write_file(&dir, "hausdorff.csv", &csv)?;
                covers.windows(2).all(|w| w[1].cover_sum < w[0].cover_sum)
            }
            Check::Lyapunov => {
                let deepest = ledger.family(ledger.stages.len())?;
                let norm = lambda.abs() * deepest.sup_norm().max(ledger.family(1)?.sup_norm());
                let grid = EnergyGrid::covering(norm, CONVERGENCE_POINTS)?;
                let report = lyapunov_convergence(&ledger, &grid, lambda)?;
                write_file(&dir, "lyapunov.json", &to_json(&report))?;
                write_file(&dir, "lyapunov.csv", &report.to_csv())?;
                for r in &report.rows {
                    say(
                        stdout,
                        format_args!(
                            "lyapunov stage {}: sup |ΔL| {:e} at E = {} vs eps {}",
                            r.stage, r.sup_difference, r.at_energy, r.eps
                        ),
                    )?;
                }
                report.passed()
            }
            Check::Distance => {
                let report = ledger_spectrum_distance(&ledger, options.tol)?;
                write_file(&dir, "distance.json", &to_json(&report))?;
                say(
                    stdout,
                    format_args!(
                        "distance: {:e} vs ‖f - g‖ = {:e} (+2·tol)",
                        report.distance, report.sup_distance
                    ),
                )?;
                report.passed
            }
        };
        say(stdout, format_args!("{}: {}", check.name(), if passed { "pass" } else { "FAIL" }))?;
        all &= passed;
    }
    Ok(all)
}
