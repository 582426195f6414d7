//! `unicol`: plan trajectories, query primitive distances, audit derivatives and run the
//! benchmark studies.
//!
//! Exit codes: 0 success, 1 input error, 2 planner did not converge, 3 derivative check failed.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use unicol::bench::{approx_study, kind_pair_study};
use unicol::distance::solve_inner;
use unicol::gradcheck::{gradcheck, GradcheckSettings, Quantity};
use unicol::scene_io::{
    apply_override, export_trajectory, parse_document, scene_from_value, ExportFormat,
};
use unicol::trajopt::{solve, Scene, StepGeometry};

/// Prints a line to standard output. A reader that closed the pipe early is not an error.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "unicol",
    version,
    about = "Differentiable primitive distances and trajectory optimization"
)]
struct Cli {
    /// Worker threads; 1 gives bit-identical results across runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize the scene's trajectory and write it together with a run report.
    Plan {
        scene: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Run report path. Defaults to the output path with `.report.json` appended.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Recorded in the report. Planning itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override a scene field, e.g. `settings.max_outer_iters=1` or `weights.w_ca=500`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Closest points between two primitives at the scene's initial states.
    Distance {
        scene: PathBuf,
        /// Two primitives as `robot/i` or `obstacle/i` labels or global indices, e.g. `arm/2:obstacle/0`.
        #[arg(long)]
        pair: String,
        #[arg(long)]
        json: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare analytic derivatives against central finite differences.
    Gradcheck {
        scene: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        samples: usize,
        #[arg(long)]
        json: bool,
        /// Flip the sign of one analytic quantity to exercise the failure path.
        #[arg(long, hide = true, value_parser = parse_quantity)]
        corrupt: Option<Quantity>,
    },
    /// Benchmark studies, written as CSV to standard output.
    Bench {
        #[arg(value_enum)]
        study: Study,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest sphere or capsule count in the approximation study.
        #[arg(long, default_value_t = 12)]
        max_count: usize,
        /// Trajectory steps of the approximation study scene.
        #[arg(long, default_value_t = 30)]
        steps: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Study {
    Pairs,
    Approx,
}

fn parse_quantity(s: &str) -> Result<Quantity, String> {
    Quantity::ALL
        .iter()
        .copied()
        .find(|q| q.name() == s)
        .ok_or_else(|| {
            let names: Vec<_> = Quantity::ALL.iter().map(|q| q.name()).collect();
            format!(
                "unknown quantity {s:?}, expected one of {}",
                names.join(", ")
            )
        })
}

/// A failure that ends the command with a nonzero exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }
}

impl From<unicol::Error> for Failure {
    fn from(e: unicol::Error) -> Self {
        Failure::input(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let result = match cli.command {
        Command::Plan {
            scene,
            out,
            format,
            report,
            seed,
            overrides,
        } => {
            let report = report.unwrap_or_else(|| {
                let mut name = out.clone().into_os_string();
                name.push(".report.json");
                PathBuf::from(name)
            });
            cmd_plan(&scene, &out, format, &report, seed, &overrides)
        }
        Command::Distance {
            scene,
            pair,
            json,
            overrides,
        } => cmd_distance(&scene, &pair, json, &overrides),
        Command::Gradcheck {
            scene,
            tol,
            seed,
            samples,
            json,
            corrupt,
        } => cmd_gradcheck(&scene, tol, seed, samples, json, corrupt),
        Command::Bench {
            study,
            reps,
            seed,
            max_count,
            steps,
        } => cmd_bench(study, reps, seed, max_count, steps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_scene(path: &Path, overrides: &[String]) -> Result<Scene, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let context = |e: unicol::Error| Failure::input(format!("{}: {e}", path.display()));
    let mut doc = parse_document(&text).map_err(context)?;
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("override {item:?} is not KEY=VALUE")))?;
        apply_override(&mut doc, key.trim(), value.trim())
            .map_err(|e| Failure::input(format!("override {item:?}: {e}")))?;
    }
    scene_from_value(doc).map_err(context)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn cmd_plan(
    scene_path: &Path,
    out: &Path,
    format: Format,
    report_path: &Path,
    seed: u64,
    overrides: &[String],
) -> Result<(), Failure> {
    let scene = read_scene(scene_path, overrides)?;
    let (traj, report) = solve(&scene, None).map_err(|e| Failure {
        code: EXIT_NOT_CONVERGED,
        message: format!("planning aborted: {e}"),
    })?;
    let export_format = match format {
        Format::Csv => ExportFormat::Csv,
        Format::Json => ExportFormat::Json,
    };
    write_file(
        out,
        &export_trajectory(&traj, &scene, export_format, Some(&report.min_clearance))?,
    )?;
    let run = json!({
        "seed": seed,
        "scene": scene_path.display().to_string(),
        "status": report.status,
        "converged": report.converged(),
        "iterations": report.iterations,
        "final_objective": report.final_objective,
        "final_grad_inf_norm": report.final_grad_inf_norm,
        "max_violation": report.max_violation,
        "objective_history": report.objective_history,
        "min_clearance": report.min_clearance,
    });
    write_file(report_path, &pretty(&run))?;
    let worst = report
        .min_clearance
        .iter()
        .flatten()
        .copied()
        .reduce(f64::min);
    out!(
        "seed {seed}: {:?} after {} iterations, objective {:.6e}, min clearance {}",
        report.status,
        report.iterations,
        report.final_objective,
        worst.map_or_else(|| "n/a".to_string(), |c| format!("{c:.6}")),
    );
    if report.converged() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: format!(
                "planner stopped with {:?}; report written to {}",
                report.status,
                report_path.display()
            ),
        })
    }
}

fn pretty(value: &Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    text
}

/// Resolves a primitive label or global index.
fn find_primitive(scene: &Scene, selector: &str) -> Result<usize, Failure> {
    let selector = selector.trim();
    let count = scene.primitive_count();
    if let Ok(g) = selector.parse::<usize>() {
        return if g < count {
            Ok(g)
        } else {
            Err(Failure::input(format!(
                "primitive index {g} out of range, scene has {count}"
            )))
        };
    }
    (0..count)
        .find(|&g| scene.primitive_label(g) == selector)
        .ok_or_else(|| {
            let labels: Vec<_> = (0..count).map(|g| scene.primitive_label(g)).collect();
            Failure::input(format!(
                "unknown primitive {selector:?}, known: {}",
                labels.join(", ")
            ))
        })
}

fn cmd_distance(
    scene_path: &Path,
    pair: &str,
    as_json: bool,
    overrides: &[String],
) -> Result<(), Failure> {
    let scene = read_scene(scene_path, overrides)?;
    let (sa, sb) = pair
        .split_once(':')
        .ok_or_else(|| Failure::input(format!("pair {pair:?} is not A:B")))?;
    let (a, b) = (find_primitive(&scene, sa)?, find_primitive(&scene, sb)?);
    let geometry = StepGeometry::new(&scene, &scene.initial_state());
    let result = solve_inner(
        &geometry.world[a],
        &geometry.world[b],
        &scene.inner_settings(),
        None,
    )?;
    let margins = scene.primitive(a).margin() + scene.primitive(b).margin();
    let distance = result.distance();
    let dim_a = scene.primitive(a).dim();
    let t_star = result.t_star.as_slice();
    let out = json!({
        "a": scene.primitive_label(a),
        "b": scene.primitive_label(b),
        "d_sq": result.d_sq,
        "distance": distance,
        "clearance": distance - margins,
        "t_a": &t_star[..dim_a],
        "t_b": &t_star[dim_a..],
        "closest_a": result.closest_a.coords.as_slice(),
        "closest_b": result.closest_b.coords.as_slice(),
        "newton_steps": result.newton_steps,
        "converged": result.converged,
    });
    if as_json {
        out!("{}", pretty(&out).trim_end());
    } else {
        out!(
            "pair          {} : {}",
            out["a"].as_str().unwrap_or(""),
            out["b"].as_str().unwrap_or("")
        );
        out!("d_sq          {:e}", result.d_sq);
        out!("distance      {distance}");
        out!("clearance     {}", distance - margins);
        out!("t*            {:?}", t_star);
        out!("closest_a     {:?}", result.closest_a.coords.as_slice());
        out!("closest_b     {:?}", result.closest_b.coords.as_slice());
        out!("newton_steps  {}", result.newton_steps);
        out!("converged     {}", result.converged);
    }
    if result.converged {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: format!(
                "inner solve stopped at gradient norm {:e}",
                result.grad_norm
            ),
        })
    }
}

fn cmd_gradcheck(
    scene_path: &Path,
    tol: f64,
    seed: u64,
    samples: usize,
    as_json: bool,
    corrupt: Option<Quantity>,
) -> Result<(), Failure> {
    if !(tol > 0.0) {
        return Err(Failure::input(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let scene = read_scene(scene_path, &[])?;
    let settings = GradcheckSettings {
        samples,
        seed,
        tol,
        corrupt,
        ..GradcheckSettings::default()
    };
    let report = gradcheck(&scene, &settings)?;
    if as_json {
        out!(
            "{}",
            pretty(&serde_json::to_value(&report).expect("report serializes")).trim_end()
        );
    } else {
        out!("seed {seed}, tolerance {tol:e}, {samples} samples");
        for q in &report.quantities {
            let verdict = if q.passed(tol) { "ok" } else { "FAIL" };
            match (&q.skipped, q.worst) {
                (Some(reason), _) => out!("{:<18} {reason}", q.quantity.name()),
                (None, Some(worst)) => out!(
                    "{:<18} {verdict:<4} worst {worst:.3e} over {} checks{}",
                    q.quantity.name(),
                    q.checks,
                    q.worst_at
                        .as_deref()
                        .map(|w| format!(" at {w}"))
                        .unwrap_or_default(),
                ),
                (None, None) => out!("{:<18} no checks", q.quantity.name()),
            }
        }
    }
    let failures = report.failures();
    if failures.is_empty() {
        Ok(())
    } else {
        let names: Vec<_> = failures.iter().map(|q| q.name()).collect();
        Err(Failure {
            code: EXIT_CHECK_FAILED,
            message: format!("derivative check failed for {}", names.join(", ")),
        })
    }
}

fn cmd_bench(
    study: Study,
    reps: Option<usize>,
    seed: u64,
    max_count: usize,
    steps: usize,
) -> Result<(), Failure> {
    out!("# seed={seed}");
    match study {
        Study::Pairs => {
            let reps = reps.unwrap_or(1000);
            let settings = unicol::distance::InnerSettings::default();
            out!("kind_a,kind_b,runs,min_steps,max_steps,mean_steps,mean_micros,converged");
            for s in kind_pair_study(reps, seed, &settings) {
                out!(
                    "{},{},{},{},{},{},{},{}",
                    s.kind_a.name(),
                    s.kind_b.name(),
                    s.runs,
                    s.min_steps,
                    s.max_steps,
                    s.mean_steps,
                    s.mean_micros,
                    s.converged
                );
            }
        }
        Study::Approx => {
            let reps = reps.unwrap_or(25);
            out!("family,count,pairs,evaluated_pairs,min_clearance,hausdorff,micros_per_iteration");
            for r in approx_study(max_count, reps, steps)? {
                out!(
                    "{},{},{},{},{},{},{}",
                    r.family.name(),
                    r.count,
                    r.pairs,
                    r.evaluated_pairs,
                    r.min_clearance,
                    r.hausdorff,
                    r.micros_per_iteration
                );
            }
        }
    }
    Ok(())
}
