use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use barchain::scenario::{run_experiments, run_scenario, sweep, Scenario, Seeds};
use barchain::strategies::Verdict;
use clap::{Parser, Subcommand};

/// Exit statuses. Stable for scripts and CI.
const EXIT_OK: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(name = "barchain", version, about = "Run consensus simulations from scenario files")]
struct Cli {
    /// Directory for reports when no explicit path is given.
    #[arg(long, env = "BARCHAIN_REPORT_DIR", global = true)]
    report_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and check its invariants.
    Run {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a range of seeds and aggregate invariant results.
    Sweep {
        file: PathBuf,
        /// Half-open range `A..B`.
        #[arg(long)]
        seeds: String,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every deviation experiment the scenario declares.
    Equilibrium {
        file: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// A failure with the exit status it maps to.
struct Failure(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_CONFIG, e.into())
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(|e| Failure(EXIT_CONFIG, anyhow::anyhow!("{}: {e}", path.display())))
}

fn emit(json: &str, explicit: Option<PathBuf>, dir: Option<&Path>, default_name: &str) -> Result<(), Failure> {
    let path = explicit.or_else(|| dir.map(|d| d.join(default_name)));
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(&p, format!("{json}\n")).with_context(|| format!("writing {}", p.display()))?;
            eprintln!("report written to {}", p.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn stem(sc: &Scenario, file: &Path) -> String {
    if sc.name.is_empty() {
        file.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned())
    } else {
        sc.name.clone()
    }
}

fn cmd_run(
    file: PathBuf,
    seed: Option<u64>,
    trace: Option<PathBuf>,
    report: Option<PathBuf>,
    dir: Option<&Path>,
) -> Result<u8, Failure> {
    let sc = load(&file)?;
    let r = run_scenario(&sc, seed)?;
    warn(&r.warnings);
    if let Some(t) = trace {
        std::fs::write(&t, r.trace_jsonl()).with_context(|| format!("writing {}", t.display()))?;
    }
    emit(&r.to_json(), report, dir, &format!("{}-{}.json", stem(&sc, &file), r.seed))?;
    let decided = r.sim.canonical.len().saturating_sub(1);
    eprintln!(
        "{}: seed {}, {decided}/{} heights decided by t = {}",
        stem(&sc, &file),
        r.seed,
        r.sim.heights,
        r.sim.end_time
    );
    let mut code = EXIT_OK;
    for (name, c) in r.invariants.iter() {
        if c.passed {
            eprintln!("  {name:<20} pass ({} checked)", c.checked);
        } else {
            code = EXIT_VIOLATION;
            eprintln!("  {name:<20} FAIL");
            for f in &c.failures {
                eprintln!("    {f}");
            }
        }
    }
    Ok(code)
}

fn cmd_sweep(file: PathBuf, seeds: &str, jobs: usize, report: Option<PathBuf>, dir: Option<&Path>) -> Result<u8, Failure> {
    let range = Seeds::parse_range(seeds).map_err(|e| Failure(EXIT_CONFIG, anyhow::anyhow!("--seeds: {e}")))?;
    let sc = load(&file)?;
    let seeds: Vec<u64> = range.collect();
    let r = sweep(&sc, &seeds, jobs)?;
    warn(&r.warnings);
    let json = serde_json::to_string_pretty(&r).context("serializing report")?;
    emit(&json, report, dir, &format!("{}-sweep.json", stem(&sc, &file)))?;
    let total = seeds.len();
    for (name, ok) in &r.passed {
        eprintln!("  {name:<20} {ok}/{total}");
    }
    if r.all_passed() {
        return Ok(EXIT_OK);
    }
    let failed: Vec<String> = r.failures.iter().map(|f| f.seed.to_string()).collect();
    eprintln!("failing seeds: {}", failed.join(", "));
    for f in &r.failures {
        for line in &f.failed {
            eprintln!("    seed {}: {line}", f.seed);
        }
    }
    Ok(EXIT_VIOLATION)
}

fn cmd_equilibrium(file: PathBuf, report: Option<PathBuf>, dir: Option<&Path>) -> Result<u8, Failure> {
    let sc = load(&file)?;
    let r = run_experiments(&sc)?;
    warn(&r.warnings);
    let json = serde_json::to_string_pretty(&r).context("serializing report")?;
    emit(&json, report, dir, &format!("{}-equilibrium.json", stem(&sc, &file)))?;
    eprintln!("{:<8} {:<22} {:>6} {:>14}  verdict", "deviant", "strategy", "seeds", "mean gap");
    for e in &r.experiments {
        let verdict = match &e.verdict {
            Verdict::Pass => "pass (no profitable deviation found)".to_string(),
            Verdict::Fail => "FAIL".to_string(),
            Verdict::Inconclusive { seed } => format!("INCONCLUSIVE (seed {seed} did not finish)"),
        };
        eprintln!(
            "{:<8} {:<22} {:>6} {:>14.6}  {verdict}",
            e.deviant.to_string(),
            e.strategy.name(),
            e.pairs.len(),
            e.mean_gap
        );
    }
    Ok(if r.experiments.iter().any(|e| e.verdict == Verdict::Fail) {
        EXIT_VIOLATION
    } else if r.any_inconclusive() {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = cli.report_dir.as_deref();
    let res = match cli.cmd {
        Cmd::Run {
            file,
            seed,
            trace,
            report,
        } => cmd_run(file, seed, trace, report, dir),
        Cmd::Sweep {
            file,
            seeds,
            jobs,
            report,
        } => cmd_sweep(file, &seeds, jobs, report, dir),
        Cmd::Equilibrium { file, report } => cmd_equilibrium(file, report, dir),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
