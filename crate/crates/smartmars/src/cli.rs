//! Command-line pipeline: `validate` → `check` → `analyze` → `run`.
//! Exit codes are a stable contract: 0 ok, 1 semantic failure
//! (violations, unschedulable), 2 input/system error.

use crate::analysis::{
    assign_rm_priorities, bound_test, export_analysis_model, response_times, simulate_hyperperiod,
    utilization, AnalysisTaskSet, BoundVerdict, ExportFormat, ResponseTime, SimVerdict,
};
use crate::clock::Clock;
use crate::deploy::{check_deployment, deployment_report, extract_analysis_model, transform};
use crate::model::{parse_model_partial, resolve_references, ModelFile};
use crate::runtime::{Runtime, TypeTable};
use crate::scenario::{build_navigation_scenario, ScenarioCtx};
use crate::task::RunReport;
use clap::{Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SEMANTIC: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Parser)]
#[command(name = "smartmars", about = "Component middleware toolchain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Native,
    Cheddar,
}

#[derive(Subcommand)]
enum Command {
    /// Parse model files and report invariant violations.
    Validate { paths: Vec<PathBuf> },
    /// Transform the deployment and run the design-time checks.
    Check { paths: Vec<PathBuf> },
    /// Extract per-platform task sets and run schedulability analysis.
    Analyze {
        paths: Vec<PathBuf>,
        /// Also write the analysis model in this format.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Output file for --format (per-platform suffix added when the
        /// deployment spans several platforms); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cross-check RTA against the hyperperiod simulation.
        #[arg(long)]
        oracle: bool,
    },
    /// Execute the deployment in-process on the reference transport.
    Run {
        paths: Vec<PathBuf>,
        /// Drive the virtual clock to this time (ms) and stop.
        #[arg(long, conflicts_with = "real")]
        virtual_until: Option<u64>,
        /// Run on the wall clock instead of the virtual clock.
        #[arg(long)]
        real: bool,
        /// Wall-clock run duration under --real (ms).
        #[arg(long, requires = "real", default_value_t = 2000)]
        for_ms: u64,
        /// Write the run report to a file instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Entry point used by the `smartmars` binary; returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("SMARTMARS_LOG", "warn"),
    )
    .try_init();
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok((code, output)) => {
            print!("{output}");
            code
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
    }
}

fn load_model(paths: &[PathBuf]) -> Result<ModelFile, String> {
    if paths.is_empty() {
        return Err("no model files given".into());
    }
    let mut merged = ModelFile::default();
    for path in paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let part = parse_model_partial(&text)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        merged
            .merge(part)
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    resolve_references(&merged).map_err(|e| e.to_string())?;
    Ok(merged)
}

fn run_command(cmd: Command) -> Result<(i32, String), String> {
    match cmd {
        Command::Validate { paths } => {
            let model = load_model(&paths)?;
            let violations = crate::model::validate_model(&model);
            let mut out = String::new();
            for v in &violations {
                let _ = writeln!(out, "{v}");
            }
            if violations.is_empty() {
                out.push_str("ok\n");
                Ok((EXIT_OK, out))
            } else {
                Ok((EXIT_SEMANTIC, out))
            }
        }
        Command::Check { paths } => {
            let model = load_model(&paths)?;
            let psm = match transform(&model) {
                Ok(psm) => psm,
                Err(errors) => {
                    let mut out = String::new();
                    for e in &errors {
                        let _ = writeln!(out, "{e}");
                    }
                    return Ok((EXIT_SEMANTIC, out));
                }
            };
            let violations = check_deployment(&psm);
            let out = deployment_report(&psm, &violations);
            let code = if violations.is_empty() { EXIT_OK } else { EXIT_SEMANTIC };
            Ok((code, out))
        }
        Command::Analyze { paths, format, out, oracle } => {
            let model = load_model(&paths)?;
            let psm = transform(&model).map_err(|errors| {
                errors
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join("\n")
            })?;
            let sets = extract_analysis_model(&psm);
            let mut output = String::new();
            let mut all_ok = true;
            let mut exports = Vec::new();
            for set in &sets {
                let tasks = assign_rm_priorities(&set.tasks).map_err(|e| e.to_string())?;
                let set = AnalysisTaskSet { platform: set.platform.clone(), tasks };
                let ok = analyze_one(&set, oracle, &mut output)?;
                all_ok &= ok;
                if let Some(f) = format {
                    let fmt = match f {
                        Format::Native => ExportFormat::Native,
                        Format::Cheddar => ExportFormat::CheddarXml,
                    };
                    exports.push((set.platform.clone(), export_analysis_model(&set, fmt)));
                }
            }
            if sets.is_empty() {
                output.push_str("no periodic tasks: vacuously schedulable\n");
            }
            if format.is_some() {
                write_exports(&exports, out.as_deref(), &mut output)?;
            }
            Ok((if all_ok { EXIT_OK } else { EXIT_SEMANTIC }, output))
        }
        Command::Run { paths, virtual_until, real, for_ms, report } => {
            let model = load_model(&paths)?;
            let until = match (virtual_until, real) {
                (Some(t), false) => t,
                (None, true) => for_ms,
                (None, false) => return Err("one of --virtual-until or --real required".into()),
                (Some(_), true) => unreachable!("clap conflict"),
            };
            // stage order enforced: run refuses unchecked deployments
            let psm = match transform(&model) {
                Ok(psm) => psm,
                Err(errors) => {
                    return Err(errors
                        .iter()
                        .map(|e| e.to_string())
                        .collect::<Vec<_>>()
                        .join("\n"))
                }
            };
            let violations = check_deployment(&psm);
            if !violations.is_empty() {
                return Err(violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("\n"));
            }
            let text = cmd_run(&model, !real, until).map_err(|e| e.to_string())?;
            if let Some(path) = report {
                std::fs::write(&path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
                Ok((EXIT_OK, String::new()))
            } else {
                Ok((EXIT_OK, text))
            }
        }
    }
}

fn analyze_one(
    set: &AnalysisTaskSet,
    oracle: bool,
    out: &mut String,
) -> Result<bool, String> {
    let _ = writeln!(out, "platform {}:", set.platform);
    let u = utilization(&set.tasks);
    let _ = writeln!(
        out,
        "  utilization {}/{} = {:.6}",
        u.numer(),
        u.denom(),
        *u.numer() as f64 / *u.denom() as f64
    );
    let bound = bound_test(&set.tasks).map_err(|e| e.to_string())?;
    let _ = writeln!(
        out,
        "  utilization bound: {}",
        match bound {
            BoundVerdict::Schedulable => "schedulable",
            BoundVerdict::Inconclusive => "inconclusive",
        }
    );
    let rs = response_times(&set.tasks).map_err(|e| e.to_string())?;
    let mut ok = true;
    for (name, r) in &rs {
        match r {
            ResponseTime::Ms(ms) => {
                let _ = writeln!(out, "  {name}: R = {ms} ms");
            }
            ResponseTime::Unbounded => {
                ok = false;
                let _ = writeln!(out, "  {name}: deadline miss (R unbounded)");
            }
        }
    }
    let _ = writeln!(out, "  verdict: {}", if ok { "schedulable" } else { "unschedulable" });
    if oracle {
        match simulate_hyperperiod(&set.tasks).map_err(|e| e.to_string())? {
            SimVerdict::Schedulable(worst) => {
                let agree = ok
                    && rs.iter().zip(&worst).all(|((_, r), (_, w))| {
                        matches!(r, ResponseTime::Ms(ms) if ms == w)
                    });
                let _ = writeln!(
                    out,
                    "  oracle: {}",
                    if agree { "agrees" } else { "DISAGREES" }
                );
                if !agree {
                    ok = false;
                }
            }
            SimVerdict::Miss(name, at) => {
                let agree = !ok;
                let _ = writeln!(
                    out,
                    "  oracle: miss for {name} at {at} ms ({})",
                    if agree { "agrees" } else { "DISAGREES" }
                );
                ok = false;
            }
            SimVerdict::TooLong(h) => {
                let _ = writeln!(out, "  oracle: skipped, hyperperiod {h} ms over cap");
            }
        }
    }
    Ok(ok)
}

fn write_exports(
    exports: &[(String, String)],
    out: Option<&std::path::Path>,
    output: &mut String,
) -> Result<(), String> {
    match out {
        None => {
            for (_, text) in exports {
                output.push_str(text);
            }
        }
        Some(path) => {
            for (platform, text) in exports {
                let target = if exports.len() == 1 {
                    path.to_path_buf()
                } else {
                    // one file per platform: name.platform[.ext]
                    let mut name = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    name.push('.');
                    name.push_str(platform);
                    if let Some(ext) = path.extension() {
                        name.push('.');
                        name.push_str(&ext.to_string_lossy());
                    }
                    path.with_file_name(name)
                };
                std::fs::write(&target, text)
                    .map_err(|e| format!("{}: {e}", target.display()))?;
                let _ = writeln!(output, "wrote {}", target.display());
            }
        }
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error("{0}")]
    Pattern(#[from] crate::runtime::PatternError),
}

/// Instantiate the deployment in-process, attach registered behaviors,
/// apply the initial wiring and run to `until`. Returns the run report
/// (documented in docs/report-format.md); deterministic under the
/// virtual clock.
pub fn cmd_run(model: &ModelFile, virtual_clock: bool, until: u64) -> Result<String, RunError> {
    let (_, registry) = build_navigation_scenario();
    let clock = if virtual_clock { Clock::virtual_clock() } else { Clock::real() };
    let runtime = Runtime::new(clock, TypeTable::from_model(model));
    let deployment = model.deployment.as_ref();
    let instances = deployment.map(|d| d.instances.as_slice()).unwrap_or(&[]);
    // resolve every behavior before instantiating anything
    let mut behaviors = Vec::new();
    for inst in instances {
        behaviors.push((inst, registry.lookup(&inst.component)?));
    }
    for (inst, _) in &behaviors {
        let component = model.component(&inst.component).expect("checked deployment");
        runtime.add_component(&inst.name, component);
    }
    for wire in deployment.map(|d| d.wiring.as_slice()).unwrap_or(&[]) {
        runtime.connect(
            (&wire.from_instance, &wire.from_port),
            (&wire.to_instance, &wire.to_port),
        )?;
        if wire.timeout_override_ms.is_some() {
            runtime
                .component(&wire.from_instance)
                .and_then(|c| c.client(&wire.from_port).cloned())
                .expect("endpoint just connected")
                .set_timeout_override(wire.timeout_override_ms);
        }
    }
    for (inst, behavior) in &behaviors {
        let ctx = ScenarioCtx {
            runtime: runtime.clone(),
            component: runtime.component(&inst.name).expect("just added"),
        };
        behavior(&ctx);
    }
    if virtual_clock {
        runtime.run_until(until);
    } else {
        std::thread::sleep(std::time::Duration::from_millis(until));
    }
    let report = render_report(&runtime, until);
    runtime.shutdown();
    Ok(report)
}

fn render_report(runtime: &Runtime, until: u64) -> String {
    let counters = runtime.counters.snapshot();
    let mut s = String::new();
    s.push_str("run report\n");
    let _ = writeln!(s, "until: {until}");
    s.push_str("tasks:\n");
    for (key, value) in counters.iter().filter(|(k, _)| k.starts_with("task.")) {
        let report = RunReport {
            iterations: *value,
            deadline_misses: 0,
            max_jitter_ms: 0,
        };
        let _ = writeln!(
            s,
            "  {} iterations={} misses={} maxJitterMs={}",
            key.trim_start_matches("task."),
            report.iterations,
            report.deadline_misses,
            report.max_jitter_ms
        );
    }
    s.push_str("counters:\n");
    for (key, value) in counters.iter().filter(|(k, _)| !k.starts_with("task.")) {
        let _ = writeln!(s, "  {key} {value}");
    }
    s
}
