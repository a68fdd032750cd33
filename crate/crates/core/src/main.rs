use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use jumpbsde::condexp::RegressionBasis;
use jumpbsde::forward::{PathBundle, TimeGrid};
use jumpbsde::harness::{
    emit_report, estimate_rate, run_study, BackendChoice, Pipeline, QuadratureSettings, ReportMeta,
    StudyConfig,
};
use jumpbsde::model::{validate_assumptions, Preset, ProbePlan, Problem, ProblemConfig};
use jumpbsde::oracles::{cole_hopf_reference, linear_jump_reference, OracleResult, Provenance};
use jumpbsde::truncation::{gradient_bound_catalog, truncation_radius};
use jumpbsde::{Error, Result};

#[derive(Parser)]
#[command(
    name = "jumpbsde",
    version,
    about = "Quadratic FBSDE solver with a single jump time"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probe the standing assumptions; exits 1 if any check fails.
    Validate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
    },
    /// Print the gradient bounds and the truncation radius M.
    Bounds {
        #[command(flatten)]
        problem: ProblemArgs,
    },
    /// Print the reference value of a preset.
    Oracle {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Fine grid for presets without a closed form.
        #[arg(long, default_value_t = 1024)]
        n_ref: usize,
    },
    /// Solve on one grid and print Yπ_0, optionally dumping paths.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Per-path dump `path_id,t_i,y,z,u,jumped` on evaluation paths.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        dump_paths: usize,
    },
    /// Simulate forward paths and write `path_id,t_i,x0,tau`.
    Simulate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error report for a single grid against the fine reference.
    Run {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Convergence study over several grids; exits 1 if a gate fails.
    Convergence {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
        n: Vec<usize>,
        #[command(flatten)]
        study: StudyArgs,
        /// Smallest acceptable log-log slope of the total error.
        #[arg(long, default_value_t = 0.8)]
        min_slope: f64,
    },
}

#[derive(Args)]
struct ProblemArgs {
    /// JSON problem config.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Preset id with default parameters.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
}

impl ProblemArgs {
    fn config(&self) -> Result<ProblemConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ProblemConfig::from_path(path),
            (None, Some(id)) => Ok(ProblemConfig::preset(Preset::from_id(id)?, self.horizon)),
            (None, None) => Err(Error::InvalidConfig(
                "either --config or --preset is required".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Quadrature,
    Lsmc,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Quadrature)]
    backend: BackendKind,
    /// Gauss–Hermite order (quadrature).
    #[arg(long, default_value_t = 16)]
    order: usize,
    /// Table nodes per step (quadrature).
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    /// Hat-function bins (lsmc).
    #[arg(long, default_value_t = 32)]
    bins: usize,
    /// Override the truncation radius M.
    #[arg(long)]
    radius: Option<f64>,
}

impl SolverArgs {
    fn choice(&self) -> BackendChoice {
        match self.backend {
            BackendKind::Quadrature => BackendChoice::Quadrature(QuadratureSettings {
                order: self.order,
                nodes: self.nodes,
                ..QuadratureSettings::default()
            }),
            BackendKind::Lsmc => BackendChoice::Lsmc(RegressionBasis::piecewise_linear(self.bins)),
        }
    }

    fn pipeline(&self, config: &ProblemConfig) -> Result<Pipeline> {
        let problem = Problem::from_config(config)?;
        Ok(match self.radius {
            Some(r) => {
                let m = truncation_radius(&problem.constants);
                if r < m {
                    eprintln!("warning: radius {r} is below the a priori bound M = {m}");
                }
                Pipeline::with_radius(problem, r)
            }
            None => Pipeline::new(problem),
        })
    }
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 1024)]
    n_ref: usize,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV report; a JSON sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write runtime_s = 0 so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (e.g. `| head`) is not an error of the solver
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn closed_form(problem: &Problem) -> Option<OracleResult> {
    let p = |k: &str| problem.params[k];
    match problem.preset {
        Preset::ColeHopf => {
            let (a, w) = (p("amplitude"), p("frequency"));
            cole_hopf_reference(
                |x| a * (w * x).sin(),
                problem.x0,
                &problem.coeffs.diffusion,
                problem.horizon(),
                p("gamma"),
                64,
            )
            .ok()
        }
        Preset::LinearJump => {
            let rate = match problem.jump {
                jumpbsde::model::JumpModel::CoxConstantIntensity { rate } => rate,
                _ => f64::NAN,
            };
            Some(linear_jump_reference(
                p("a_y"),
                p("a_u"),
                p("terminal"),
                rate,
                problem.horizon(),
            ))
        }
        Preset::Constant => Some(OracleResult {
            y0_at_origin: p("value"),
            provenance: Provenance::ClosedForm,
            tolerance: 0.0,
            tables: None,
        }),
        _ => None,
    }
}

fn study(
    problem: &ProblemArgs,
    solver: &SolverArgs,
    ns: Vec<usize>,
    args: &StudyArgs,
    min_slope: Option<f64>,
) -> Result<bool> {
    let config = problem.config()?;
    let pipeline = solver.pipeline(&config)?;
    let cfg = StudyConfig {
        backend: solver.choice(),
        timing: !args.no_timing,
        ..StudyConfig::new(ns, args.n_ref, args.paths, args.seed)
    };
    let reports = run_study(&pipeline, &cfg)?;
    let rate = if reports.len() >= 4 {
        estimate_rate(&reports).ok()
    } else {
        None
    };
    let reference_y0 = pipeline
        .solve(
            &pipeline.grid(args.n_ref)?,
            &pipeline.quadrature(&cfg.reference)?,
        )?
        .y0_at_origin()?;
    let meta = ReportMeta {
        config: pipeline.problem.to_config(),
        backend: cfg.backend.name().into(),
        n_ref: args.n_ref,
        radius: pipeline.radius,
        reference_y0: Some(reference_y0),
        closed_form_y0: closed_form(&pipeline.problem).map(|o| o.y0_at_origin),
    };
    if let Some(out) = &args.out {
        emit_report(&reports, rate.as_ref(), Some(&meta), out)?;
    }
    print_json(&json!({ "meta": meta, "rate": rate, "reports": reports }))?;

    let mut ok = reports.iter().all(|r| {
        [r.err_x, r.err_y, r.err_z, r.err_u]
            .iter()
            .all(|e| e.is_finite() && *e >= 0.0)
            && r.total == r.err_x + r.err_y + r.err_z + r.err_u
    });
    if let Some(min) = min_slope {
        match &rate {
            Some(fit) => {
                if !fit.monotone {
                    eprintln!("warning: totals are not monotone in n");
                }
                if fit.slope < min {
                    eprintln!("gate failed: slope {:.3} < {min}", fit.slope);
                    ok = false;
                }
            }
            None => {
                eprintln!("gate failed: rate fit needs at least 4 positive totals");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate {
            problem,
            samples,
            seed,
        } => {
            let p = Problem::from_config(&problem.config()?)?;
            let plan = ProbePlan {
                samples,
                seed,
                ..ProbePlan::around(p.x0)
            };
            let report = validate_assumptions(&p.coeffs, &p.jump, &p.constants, &plan)?;
            print_json(&report)?;
            for c in report.failures() {
                eprintln!("failed: {} (worst ratio {:.4e})", c.name, c.worst_ratio);
            }
            Ok(report.passed())
        }
        Command::Bounds { problem } => {
            let p = Problem::from_config(&problem.config()?)?;
            print_json(&json!({
                "constants": p.constants,
                "catalog": gradient_bound_catalog(&p.constants),
                "radius": truncation_radius(&p.constants),
            }))?;
            Ok(true)
        }
        Command::Oracle {
            preset,
            horizon,
            n_ref,
        } => {
            let problem = Problem::preset(Preset::from_id(&preset)?, horizon)?;
            let result = match closed_form(&problem) {
                Some(r) => r,
                None => {
                    let pipeline = Pipeline::new(problem);
                    let grid = pipeline.grid(n_ref)?;
                    let y = pipeline
                        .solve(&grid, &pipeline.quadrature(&QuadratureSettings::default())?)?
                        .y0_at_origin()?;
                    OracleResult {
                        y0_at_origin: y,
                        provenance: Provenance::FineGrid,
                        tolerance: f64::NAN,
                        tables: None,
                    }
                }
            };
            print_json(&result)?;
            Ok(true)
        }
        Command::Solve {
            problem,
            solver,
            n,
            dump,
            dump_paths,
        } => {
            let config = problem.config()?;
            let pipeline = solver.pipeline(&config)?;
            let grid = pipeline.grid(n)?;
            let choice = solver.choice();
            let sol = pipeline.solve_with(&grid, &choice, 10_000, 42)?;
            print_json(&json!({
                "preset": config.preset_id,
                "n": n,
                "backend": choice.name(),
                "radius": pipeline.radius,
                "y0": sol.y0_at_origin()?,
            }))?;
            if let Some(path) = dump {
                let p = &pipeline.problem;
                let bundle =
                    PathBundle::simulate(pipeline.coeffs(), &p.jump, &grid, p.x0, dump_paths, 42)?;
                sol.write_dump(&bundle, path)?;
            }
            Ok(true)
        }
        Command::Simulate {
            problem,
            n,
            paths,
            seed,
            out,
        } => {
            let p = Problem::from_config(&problem.config()?)?;
            let grid = TimeGrid::uniform(p.horizon(), n)?;
            PathBundle::simulate(&p.coeffs, &p.jump, &grid, p.x0, paths, seed)?.write_dump(out)?;
            Ok(true)
        }
        Command::Run {
            problem,
            solver,
            n,
            study: args,
        } => study(&problem, &solver, vec![n], &args, None),
        Command::Convergence {
            problem,
            solver,
            n,
            study: args,
            min_slope,
        } => study(&problem, &solver, n, &args, Some(min_slope)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
