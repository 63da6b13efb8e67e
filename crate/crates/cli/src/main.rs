use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fusedflow::mapper::{self, MapperError, MapspaceSpec, Shapes, Study};
use fusedflow::mapping::parse_mapping;
use fusedflow::workload::parse_workload;
use fusedflow::{bind, compare, fuzz, report, simulate, Architecture, EvalError, FusionSet, Mapping};

const DEFAULT_ARCH: &str = include_str!("../../../configs/arch/two_level.json");

#[derive(Parser)]
#[command(name = "fusedflow", version, about = "Cost model and mapspace search for fused-layer dataflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    arch: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one mapping and write a JSON metrics report.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate a mapspace and write its Pareto front as CSV.
    Search {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        mapspace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run a named case study and write every evaluated mapping as CSV.
    CaseStudy {
        name: String,
        /// Defaults to the built-in two-level architecture.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Rank-shape config; defaults to the study's built-in shapes.
        #[arg(long)]
        shapes: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare the analytical counters against the brute-force oracle.
    OracleCheck {
        #[arg(long, requires_all = ["arch", "mapping"])]
        workload: Option<PathBuf>,
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Check this many seeded random cases instead of the given files.
        #[arg(long, conflicts_with = "workload")]
        fuzz: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000_000)]
        op_limit: u64,
        /// Occupancy trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_mismatch: bool,
    },
    /// Print per-level action counts and headline metrics as text.
    Report {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_workload(path: &Path) -> Result<FusionSet> {
    parse_workload(&read(path)?).with_context(|| path.display().to_string())
}

fn load_arch(path: &Path) -> Result<Architecture> {
    Architecture::parse(&read(path)?).with_context(|| path.display().to_string())
}

fn load_mapping(path: &Path) -> Result<Mapping> {
    parse_mapping(&read(path)?).with_context(|| path.display().to_string())
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Validation failures name the mapping file, the field and the rule.
fn evaluation_error(mapping: &Path, e: EvalError) -> anyhow::Error {
    match e {
        EvalError::Invalid(violations) => {
            let lines: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
            anyhow::anyhow!("{}: invalid mapping\n{}", mapping.display(), lines.join("\n"))
        }
        other => anyhow::anyhow!("{}: {other}", mapping.display()),
    }
}

fn evaluate_cmd(inputs: &Inputs, mapping: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let w = load_workload(&inputs.workload)?;
    let a = load_arch(&inputs.arch)?;
    let m = load_mapping(mapping)?;
    let ev = fusedflow::evaluate(&w, &m, &a).map_err(|e| evaluation_error(mapping, e))?;
    write_out(out, &report::metrics_json(&w, &a, &ev))?;
    if ev.metrics.feasible {
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &ev.metrics.capacity_violations {
            eprintln!("infeasible: {v}");
        }
        Ok(ExitCode::from(2))
    }
}

fn search_cmd(inputs: &Inputs, mapspace: &Path, out: Option<&Path>, jobs: Option<usize>) -> Result<ExitCode> {
    let w = load_workload(&inputs.workload)?;
    let a = load_arch(&inputs.arch)?;
    let spec = MapspaceSpec::parse(&read(mapspace)?).with_context(|| mapspace.display().to_string())?;
    let front = match mapper::search(&spec, &w, &a, jobs) {
        Err(MapperError::EmptyMapspace) => bail!("{}: empty mapspace", mapspace.display()),
        r => r.with_context(|| mapspace.display().to_string())?,
    };
    let rows: Vec<(String, _)> = front.into_iter().map(|p| ("search".to_string(), p)).collect();
    write_out(out, &mapper::to_csv(&rows))?;
    Ok(ExitCode::SUCCESS)
}

fn case_study_cmd(name: &str, arch: Option<&Path>, shapes: Option<&Path>, out: Option<&Path>, jobs: Option<usize>) -> Result<ExitCode> {
    let study: Study = name.parse()?;
    let a = match arch {
        Some(p) => load_arch(p)?,
        None => Architecture::parse(DEFAULT_ARCH)?,
    };
    let shapes: Shapes = match shapes {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| p.display().to_string())?,
        None => study.default_shapes(),
    };
    let rows = mapper::case_study(study, &shapes, &a, jobs)?;
    write_out(out, &mapper::to_csv(&rows))?;
    Ok(ExitCode::SUCCESS)
}

/// Runs both paths on one case; `Some(diagnostic)` on a mismatch.
fn check_case(w: &FusionSet, a: &Architecture, m: &Mapping, op_limit: u64, inject: bool, trace: Option<&Path>) -> Result<Option<String>> {
    if w.total_ops() > op_limit {
        bail!("workload has {} ops, above --op-limit {op_limit}", w.total_ops());
    }
    let bm = bind(m, w, a).map_err(|v| evaluation_error(Path::new("mapping"), EvalError::Invalid(v)))?;
    let mut ev = fusedflow::metrics::evaluate_bound(w, &bm, a)?;
    if inject {
        ev.counts.compute_ops += 1;
    }
    let or = simulate(w, &bm, a, op_limit)?;
    if let Some(p) = trace {
        write_out(Some(p), &or.trace_csv())?;
    }
    Ok(compare(w, a, &ev, &or)
        .err()
        .map(|mm| format!("mismatch in {}: analytic {} oracle {}", mm.counter, mm.analytic, mm.oracle)))
}

fn oracle_cmd(
    files: Option<(&Path, &Path, &Path)>,
    fuzz_cases: Option<u64>,
    seed: u64,
    op_limit: u64,
    trace: Option<&Path>,
    inject: bool,
) -> Result<ExitCode> {
    match (files, fuzz_cases) {
        (Some((wp, ap, mp)), _) => {
            let (w, a, m) = (load_workload(wp)?, load_arch(ap)?, load_mapping(mp)?);
            if let Some(msg) = check_case(&w, &a, &m, op_limit, inject, trace).with_context(|| mp.display().to_string())? {
                eprintln!("{msg}");
                return Ok(ExitCode::from(3));
            }
            println!("all counters match");
        }
        (None, Some(n)) => {
            for s in seed..seed + n {
                let c = fuzz::generate(s);
                log::debug!("seed {s}: {} ops", c.workload.total_ops());
                if let Some(msg) = check_case(&c.workload, &c.arch, &c.mapping, op_limit, inject, None)? {
                    eprintln!("seed {s}: {msg}");
                    eprintln!("mapping: {}", c.mapping.to_json());
                    return Ok(ExitCode::from(3));
                }
            }
            println!("{n} fuzz cases match");
        }
        (None, None) => bail!("oracle-check needs --workload, --arch and --mapping, or --fuzz N"),
    }
    Ok(ExitCode::SUCCESS)
}

fn report_cmd(inputs: &Inputs, mapping: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let w = load_workload(&inputs.workload)?;
    let a = load_arch(&inputs.arch)?;
    let m = load_mapping(mapping)?;
    let ev = fusedflow::evaluate(&w, &m, &a).map_err(|e| evaluation_error(mapping, e))?;
    write_out(out, &report::action_table(&w, &a, &ev))?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Evaluate { inputs, mapping, out } => evaluate_cmd(&inputs, &mapping, out.as_deref()),
        Command::Search { inputs, mapspace, out, jobs } => search_cmd(&inputs, &mapspace, out.as_deref(), jobs),
        Command::CaseStudy { name, arch, shapes, out, jobs } => case_study_cmd(&name, arch.as_deref(), shapes.as_deref(), out.as_deref(), jobs),
        Command::OracleCheck { workload, arch, mapping, fuzz, seed, op_limit, trace, inject_mismatch } => {
            let files = match (&workload, &arch, &mapping) {
                (Some(w), Some(a), Some(m)) => Some((w.as_path(), a.as_path(), m.as_path())),
                _ => None,
            };
            oracle_cmd(files, fuzz, seed, op_limit, trace.as_deref(), inject_mismatch)
        }
        Command::Report { inputs, mapping, out } => report_cmd(&inputs, &mapping, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FUSEDFLOW_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
