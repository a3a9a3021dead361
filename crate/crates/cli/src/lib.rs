//! Batch front end: reads a `deltavar/1` problem file, runs one command and
//! writes a JSON report.
//!
//! Exit codes: [`EXIT_OK`], [`EXIT_CERTIFICATION`] when a residual exceeds
//! its tolerance, [`EXIT_ERROR`] for I/O, schema and solver errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use deltavar::control::{detect_abnormal, solve_lagrange_with, wmp_residuals};
use deltavar::higher_order::{
    discrete_el_residual, evaluate_ho_functional, ho_el_residual, reduce_to_control, reduced_trajectory,
    solve_higher_order_with, HoElReport,
};
use deltavar::io::{ControlSpec, HigherOrderSpec};
use deltavar::optimize::SolverOptions;
use deltavar::oracle::{brute_force_minimize, costate_from_multipliers, BruteForceResult};
use deltavar::refine::{refine_study, ConvergenceTable};
use deltavar::report::{all_pass, CERTIFICATE_RTOL};
use deltavar::variational::{certify_basic, evaluate_functional, solve_basic_with};
use deltavar::{
    BasicProblem, Check, ControlProblem, CostateTrajectory, ExtremalReport, GridFunction, GridSearchSpec,
    OracleProblem, ProblemFile, ProblemSpec, ReportFile, WmpReport,
};
use serde::Serialize;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CERTIFICATION: u8 = 2;
pub const EXIT_ERROR: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "deltavar", version, about = "Variational problems and optimal control on finite time scales")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Solve the problem and certify the result.
    Solve(IoArgs),
    /// Certify the trajectory stored in the file.
    Check {
        #[command(flatten)]
        io: IoArgs,
        /// Compare the solver against the file's grid oracle instead.
        #[arg(long)]
        oracle: bool,
    },
    /// List abnormal multipliers (ψ0 = 0) along the stored or solved trajectory.
    Abnormal(IoArgs),
    /// Convergence study on uniform scales (basic problems only).
    Refine {
        #[command(flatten)]
        io: IoArgs,
        /// Subinterval counts, strictly increasing.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<usize>>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Exhaustive grid search over the file's oracle axes.
    Oracle(IoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IoArgs {
    /// Problem file.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Report file; standard output if omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Relative tolerance for certificates.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Check,
    CheckOracle,
    Abnormal,
    Refine,
    Oracle,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Check => "check",
            Command::CheckOracle => "check --oracle",
            Command::Abnormal => "abnormal",
            Command::Refine => "refine",
            Command::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub tol: f64,
    pub ladder: Option<Vec<usize>>,
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command, input: impl Into<PathBuf>) -> Self {
        Self {
            command,
            input: input.into(),
            output: None,
            tol: CERTIFICATE_RTOL,
            ladder: None,
            csv: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            bail!("tolerance must be positive, got {}", self.tol);
        }
        if let Some(l) = &self.ladder {
            if l.windows(2).any(|w| w[0] >= w[1]) {
                bail!("ladder must be strictly increasing");
            }
        }
        Ok(())
    }
}

impl TryFrom<Cli> for RunConfig {
    type Error = anyhow::Error;

    fn try_from(cli: Cli) -> Result<Self> {
        let (command, io, ladder, csv) = match cli.command {
            CliCommand::Solve(io) => (Command::Solve, io, None, None),
            CliCommand::Check { io, oracle } => (if oracle { Command::CheckOracle } else { Command::Check }, io, None, None),
            CliCommand::Abnormal(io) => (Command::Abnormal, io, None, None),
            CliCommand::Refine { io, ladder, csv } => (Command::Refine, io, ladder, csv),
            CliCommand::Oracle(io) => (Command::Oracle, io, None, None),
        };
        let config = RunConfig {
            command,
            input: io.input,
            output: io.out,
            tol: io.tol.unwrap_or(CERTIFICATE_RTOL),
            ladder,
            csv,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Runs one command and returns the process exit code. Diagnostics go to
/// standard error.
pub fn run(config: &RunConfig) -> u8 {
    match execute(config) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CERTIFICATION,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

/// Writes the report and returns whether every certificate passed.
pub fn execute(config: &RunConfig) -> Result<bool> {
    config.validate()?;
    let text = fs::read_to_string(&config.input).with_context(|| format!("reading {}", config.input.display()))?;
    let file = ProblemFile::from_json(&text)?;
    let kind = file.problem.kind();
    let (pass, json) = match config.command {
        Command::Solve => solve(&file.problem, config.tol)?.finish(kind, config.command)?,
        Command::Check => check(&file.problem, config.tol)?.finish(kind, config.command)?,
        Command::CheckOracle => check_oracle(&file.problem, config.tol)?.finish(kind, config.command)?,
        Command::Abnormal => abnormal(&file.problem, config.tol)?.finish(kind, config.command)?,
        Command::Oracle => oracle(&file.problem)?.finish(kind, config.command)?,
        Command::Refine => {
            let ProblemSpec::Basic(spec) = &file.problem else {
                bail!("refine needs a basic problem, got `{kind}`");
            };
            let table = refine_study(&spec.refine_spec(config.ladder.clone())?)?;
            if let Some(path) = &config.csv {
                write_csv(path, &table)?;
            }
            Outcome::info(table).finish(kind, config.command)?
        }
    };
    match &config.output {
        Some(path) => fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{json}").context("writing report to standard output")?;
        }
    }
    Ok(pass)
}

struct Outcome<T> {
    pass: Option<bool>,
    body: T,
}

impl<T: Serialize> Outcome<T> {
    fn certified(pass: bool, body: T) -> Self {
        Self { pass: Some(pass), body }
    }

    fn info(body: T) -> Self {
        Self { pass: None, body }
    }

    fn finish(self, kind: &str, command: Command) -> Result<(bool, String)> {
        let json = ReportFile::new(kind, command.name(), self.pass, self.body).to_json()?;
        Ok((self.pass.unwrap_or(true), json))
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum Body {
    Basic(BasicBody),
    Control(Box<deltavar::ControlSolution>),
    HigherOrder(Box<deltavar::HoSolution>),
}

#[derive(Serialize)]
struct BasicBody {
    y: Vec<Vec<f64>>,
    objective: f64,
    report: ExtremalReport,
}

fn solve(spec: &ProblemSpec, tol: f64) -> Result<Outcome<Body>> {
    let opts = SolverOptions::default();
    Ok(match spec {
        ProblemSpec::Basic(s) => {
            let p = s.build()?;
            let (y, report) = solve_basic_with(&p, &opts, tol)?;
            Outcome::certified(
                report.pass,
                Body::Basic(BasicBody {
                    objective: evaluate_functional(&p, &y)?,
                    y: y.to_rows(),
                    report,
                }),
            )
        }
        ProblemSpec::Control(s) => {
            let sol = solve_lagrange_with(&s.build()?, &opts, tol)?;
            Outcome::certified(sol.report.pass, Body::Control(Box::new(sol)))
        }
        ProblemSpec::HigherOrder(s) => {
            let sol = solve_higher_order_with(&s.build()?, &opts, tol)?;
            Outcome::certified(sol.report.pass, Body::HigherOrder(Box::new(sol)))
        }
    })
}

#[derive(Serialize)]
#[serde(untagged)]
enum CheckBody {
    Basic {
        objective: f64,
        report: ExtremalReport,
    },
    Control {
        objective: f64,
        costate: CostateTrajectory,
        report: WmpReport,
    },
    HigherOrder {
        objective: f64,
        report: HoElReport,
        /// `max |residual|` of the Δ-differentiated equation (unit spacing only).
        discrete_residual: Option<f64>,
        checks: Vec<Check>,
    },
}

fn check(spec: &ProblemSpec, tol: f64) -> Result<Outcome<CheckBody>> {
    let missing = || anyhow!("check needs a `trajectory` in the problem file");
    Ok(match spec {
        ProblemSpec::Basic(s) => {
            let p = s.build()?;
            let y = s.trajectory(&p)?.ok_or_else(missing)?;
            let report = certify_basic(&p, &y, tol)?;
            Outcome::certified(
                report.pass,
                CheckBody::Basic {
                    objective: evaluate_functional(&p, &y)?,
                    report,
                },
            )
        }
        ProblemSpec::Control(s) => {
            let p = s.build()?;
            let (y, u) = control_trajectory(s, &p)?.ok_or_else(missing)?;
            let costate = stored_costate(s, &p)?.map_or_else(|| recovered_costate(&p, &y, &u), Ok)?;
            let report = wmp_residuals(&p, &y, &u, &costate, tol)?;
            Outcome::certified(
                report.pass,
                CheckBody::Control {
                    objective: deltavar::control::transcribed_objective(&p, &y, &u)?,
                    costate,
                    report,
                },
            )
        }
        ProblemSpec::HigherOrder(s) => {
            let hp = s.build()?;
            let y = s.trajectory(&hp)?.ok_or_else(missing)?;
            let report = ho_el_residual(&hp, &y, tol)?;
            let mut checks = vec![Check::flag("euler_lagrange_integral", report.pass)];
            let discrete = if hp.scale().is_unit_spaced() {
                let d = discrete_el_residual(&hp, &y)?.max_abs();
                checks.push(Check::new("euler_lagrange_differentiated", d, tol * report.magnitude));
                Some(d)
            } else {
                None
            };
            Outcome::certified(
                all_pass(&checks),
                CheckBody::HigherOrder {
                    objective: evaluate_ho_functional(&hp, &y)?,
                    report,
                    discrete_residual: discrete,
                    checks,
                },
            )
        }
    })
}

fn control_trajectory(s: &ControlSpec, p: &ControlProblem) -> Result<Option<(GridFunction, GridFunction)>> {
    if s.isoperimetric.is_some() && s.trajectory.is_some() {
        bail!("trajectories for isoperimetric problems must include the integral state; give the reduced problem instead");
    }
    Ok(s.trajectory(p)?)
}

fn stored_costate(s: &ControlSpec, p: &ControlProblem) -> Result<Option<CostateTrajectory>> {
    let Some(t) = &s.trajectory else { return Ok(None) };
    let Some(psi) = &t.psi else { return Ok(None) };
    Ok(Some(CostateTrajectory {
        psi0: t.psi0.unwrap_or(1.0),
        psi: GridFunction::from_rows(p.scale().clone(), psi)?,
    }))
}

/// Costate from the transcription multipliers; where those are undefined
/// (infeasible or rank-deficient), the sweep from a zero terminal value.
fn recovered_costate(p: &ControlProblem, y: &GridFunction, u: &GridFunction) -> Result<CostateTrajectory> {
    match costate_from_multipliers(p, y, u) {
        Ok(c) => Ok(c),
        Err(deltavar::Error::Infeasible(_) | deltavar::Error::Degenerate(_)) => {
            Ok(deltavar::control::costate_sweep(p, y, u, 1.0, &vec![0.0; p.n()])?)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct OracleComparison {
    solver_objective: f64,
    solver_unknowns: Vec<f64>,
    oracle: BruteForceResult,
    /// Largest `|solver − oracle| / step` over the axes.
    argmin_distance_in_steps: f64,
    checks: Vec<Check>,
}

fn check_oracle(spec: &ProblemSpec, tol: f64) -> Result<Outcome<OracleComparison>> {
    let opts = SolverOptions::default();
    let (grid, objective, unknowns, result) = match spec {
        ProblemSpec::Basic(s) => {
            let p = s.build()?;
            let grid = oracle_spec(&s.oracle)?;
            let (y, _) = solve_basic_with(&p, &opts, tol)?;
            let problem = OracleProblem::Basic(&p);
            (grid, evaluate_functional(&p, &y)?, problem.unknowns_of(&y, None)?, brute_force_minimize(problem, grid)?)
        }
        ProblemSpec::Control(s) => {
            let p = s.build()?;
            let grid = oracle_spec(&s.oracle)?;
            let sol = solve_lagrange_with(&p, &opts, tol)?;
            let problem = OracleProblem::Control(&p);
            (grid, sol.objective, problem.unknowns_of(&sol.y, Some(&sol.u))?, brute_force_minimize(problem, grid)?)
        }
        ProblemSpec::HigherOrder(s) => {
            let hp = s.build()?;
            let grid = oracle_spec(&s.oracle)?;
            let sol = solve_higher_order_with(&hp, &opts, tol)?;
            let problem = OracleProblem::HigherOrder(&hp);
            (grid, sol.objective, problem.unknowns_of(&sol.y, None)?, brute_force_minimize(problem, grid)?)
        }
    };
    let distance = unknowns
        .iter()
        .zip(&result.assignment)
        .zip(&grid.axes)
        .map(|((s, o), a)| (s - o).abs() / a.step)
        .fold(0.0f64, f64::max);
    let checks = vec![
        Check::new(
            "objective_not_above_oracle",
            (objective - result.objective).max(0.0),
            tol * (1.0 + result.objective.abs()),
        ),
        Check::new("argmin_within_one_step", distance, 1.0 + 1e-9),
    ];
    Ok(Outcome::certified(
        all_pass(&checks),
        OracleComparison {
            solver_objective: objective,
            solver_unknowns: unknowns,
            oracle: result,
            argmin_distance_in_steps: distance,
            checks,
        },
    ))
}

fn oracle_spec(grid: &Option<GridSearchSpec>) -> Result<&GridSearchSpec> {
    grid.as_ref().ok_or_else(|| anyhow!("the problem file has no `oracle` grid"))
}

fn oracle(spec: &ProblemSpec) -> Result<Outcome<BruteForceResult>> {
    let result = match spec {
        ProblemSpec::Basic(s) => brute_force_minimize(OracleProblem::Basic(&s.build()?), oracle_spec(&s.oracle)?)?,
        ProblemSpec::Control(s) => brute_force_minimize(OracleProblem::Control(&s.build()?), oracle_spec(&s.oracle)?)?,
        ProblemSpec::HigherOrder(s) => {
            brute_force_minimize(OracleProblem::HigherOrder(&s.build()?), oracle_spec(&s.oracle)?)?
        }
    };
    Ok(Outcome::info(result))
}

#[derive(Serialize)]
struct Candidate {
    costate: CostateTrajectory,
    report: WmpReport,
}

#[derive(Serialize)]
struct AbnormalBody {
    /// Dimension of the space of abnormal multipliers.
    dimension: usize,
    candidates: Vec<Candidate>,
}

fn abnormal(spec: &ProblemSpec, tol: f64) -> Result<Outcome<AbnormalBody>> {
    let opts = SolverOptions::default();
    let (p, y, u) = match spec {
        ProblemSpec::Basic(s) => {
            let bp: BasicProblem = s.build()?;
            let y = match s.trajectory(&bp)? {
                Some(y) => y,
                None => solve_basic_with(&bp, &opts, tol)?.0,
            };
            let u = y.delta_derivative(1)?;
            (ControlProblem::from_basic(&bp)?, y, u)
        }
        ProblemSpec::Control(s) => {
            let p = s.build()?;
            let (y, u) = match control_trajectory(s, &p)? {
                Some(pair) => pair,
                None => {
                    let sol = solve_lagrange_with(&p, &opts, tol)?;
                    (sol.y, sol.u)
                }
            };
            (p, y, u)
        }
        ProblemSpec::HigherOrder(s) => higher_order_reference(s, &opts, tol)?,
    };
    let candidates = detect_abnormal(&p, &y, &u)?
        .into_iter()
        .map(|costate| {
            let report = wmp_residuals(&p, &y, &u, &costate, tol)?;
            Ok(Candidate { costate, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Outcome::certified(
        candidates.iter().all(|c| c.report.pass),
        AbnormalBody {
            dimension: candidates.len(),
            candidates,
        },
    ))
}

fn higher_order_reference(
    s: &HigherOrderSpec,
    opts: &SolverOptions,
    tol: f64,
) -> Result<(ControlProblem, GridFunction, GridFunction)> {
    let hp = s.build()?;
    let cp = reduce_to_control(&hp)?;
    let (x, u) = match s.trajectory(&hp)? {
        Some(y) => reduced_trajectory(&hp, &y)?,
        None => {
            let sol = solve_higher_order_with(&hp, opts, tol)?;
            (sol.control.y, sol.control.u)
        }
    };
    Ok((cp, x, u))
}

fn write_csv(path: &Path, table: &ConvergenceTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["subintervals", "h", "error", "ratio", "order", "sup_error", "sup_ratio", "sup_order"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &table.rows {
        w.write_record([
            r.subintervals.to_string(),
            r.h.to_string(),
            r.error.to_string(),
            opt(r.ratio),
            opt(r.order),
            r.sup_error.to_string(),
            opt(r.sup_ratio),
            opt(r.sup_order),
        ])?;
    }
    w.flush()?;
    Ok(())
}
