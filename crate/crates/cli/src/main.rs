use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curveform::curve::{fit_coefficients, fit_residuals, BasisFamily, ParametricCurve};
use curveform::output::{self, evaluate_points};
use curveform::scenario::{self, FitRecord};
use curveform::simulation::{
    run_scenario, sweep, validate_scenario, ParameterGrid, Scenario, SweepAxis,
};
use curveform::topology::{
    build_laplacian, has_rooted_spanning_tree, leader_selector, theorem1_matrices, LEADER,
};
use curveform::Error;

const EXIT_VALIDATION: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

/// Formation control of disturbed unicycle agents along parametric curves.
#[derive(Parser)]
#[command(name = "curveform", version, about)]
#[command(
    after_help = "Exit status: 0 ok, 2 usage, 3 invalid input, 4 I/O, 5 numerical failure.\n\
Set CURVEFORM_LOG (error, warn, info, debug) for diagnostics on stderr."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Least-squares fit of sampled points (CSV columns s,x,y) to a basis family.
    Fit {
        /// Samples CSV.
        samples: PathBuf,
        /// `fourier:<harmonics>` or `polynomial:<degree>`.
        #[arg(long)]
        family: String,
        /// Curve file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Spanning-tree check and Lyapunov matrices of a topology file.
    CheckGraph {
        /// Topology file.
        topology: PathBuf,
    },
    /// Run a scenario and write trajectory, metrics and summary files.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a curve at given parameters.
    EvalCurve {
        /// Curve file.
        #[arg(
            long,
            conflicts_with = "scenario",
            required_unless_present = "scenario"
        )]
        curve: Option<PathBuf>,
        /// Take the curve from a scenario file instead.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// 1-based curve index within the scenario.
        #[arg(long, default_value_t = 1)]
        index: usize,
        /// Comma-separated parameter values.
        #[arg(
            long,
            value_delimiter = ',',
            conflicts_with = "count",
            required_unless_present = "count",
            allow_hyphen_values = true
        )]
        s: Vec<f64>,
        /// Number of uniform parameters k/count.
        #[arg(long)]
        count: Option<usize>,
        /// Points CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario over a parameter grid.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// `name=v1,v2,...` with name one of k1, k2, dt, duration, ell, seed. Repeatable.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        /// Sweep CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
}

impl Overrides {
    fn apply(&self, sc: &mut Scenario) {
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(dt) = self.dt {
            sc.dt = dt;
        }
        if let Some(duration) = self.duration {
            sc.duration = duration;
        }
    }
}

enum Failure {
    Lib(Error),
    Io(PathBuf, io::Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(..) => EXIT_IO,
            Failure::Usage(_) => EXIT_VALIDATION,
            Failure::Lib(e) => match e {
                Error::Io { .. } => EXIT_IO,
                Error::Diverged { .. } | Error::SingularSystem { .. } => EXIT_NUMERICAL,
                _ => EXIT_VALIDATION,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Io(p, e) => write!(f, "{}: {e}", p.display()),
            Failure::Usage(m) => write!(f, "{m}"),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn parse_family(spec: &str) -> Result<BasisFamily, Failure> {
    let bad = || {
        Failure::Usage(format!(
            "family must be fourier:<m> or polynomial:<d>, got {spec:?}"
        ))
    };
    let (kind, num) = spec.split_once(':').ok_or_else(bad)?;
    let num: usize = num.trim().parse().map_err(|_| bad())?;
    match kind.trim() {
        "fourier" => Ok(BasisFamily::fourier(num)?),
        "polynomial" => Ok(BasisFamily::polynomial(num)),
        _ => Err(bad()),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Io(p.to_path_buf(), e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn out_name(path: Option<&Path>) -> PathBuf {
    path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf)
}

fn cmd_fit(samples: &Path, family: &str, out: &Path) -> CmdResult {
    let family = parse_family(family)?;
    let set = scenario::read_samples_csv(samples)?;
    let xi = fit_coefficients(&set, &family)?;
    let res = fit_residuals(&set, &family, &xi)?;
    let curve = ParametricCurve::new(family, xi)?;
    scenario::write_curve_file(
        out,
        &curve,
        Some(FitRecord {
            samples: set.len(),
            residual_max: res.max,
            residual_rms: res.rms,
        }),
    )?;
    println!("fitted {family} to {} samples", set.len());
    println!("residual_max = {}", res.max);
    println!("residual_rms = {}", res.rms);
    Ok(())
}

fn fmt_vec(v: impl IntoIterator<Item = f64>) -> String {
    let items: Vec<String> = v.into_iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn cmd_check_graph(path: &Path) -> CmdResult {
    let topology = scenario::load_topology_file(path)?;
    let n = topology.agents();
    let rooted = has_rooted_spanning_tree(&topology, LEADER);
    println!("agents = {n}");
    println!("rooted_spanning_tree = {rooted}");
    if !rooted {
        return Err(Failure::Usage("no rooted spanning tree at agent 1".into()));
    }
    let lap = build_laplacian(&topology);
    let m = theorem1_matrices(&lap, &leader_selector(n).diagonal())?;
    println!("q = {}", fmt_vec(m.q.iter().copied()));
    println!("p = {}", fmt_vec(m.p.iter().copied()));
    println!("P_diag = {}", fmt_vec(m.p_diag.iter().copied()));
    println!("min_eig_P = {}", m.min_eig_p);
    println!("min_eig_Q = {}", m.min_eig_q);
    println!("positive_definite = {}", m.is_positive_definite());
    Ok(())
}

fn cmd_simulate(path: &Path, out: &Path, overrides: &Overrides) -> CmdResult {
    let mut sc = scenario::load_scenario(path)?;
    overrides.apply(&mut sc);
    let validated = validate_scenario(&sc)?;
    match run_scenario(&validated) {
        Ok(log) => {
            let art = output::write_run(out, &sc, &log)?;
            let s = &log.summary;
            println!("steps = {}", s.steps);
            println!("terminal_err_norm = {}", s.terminal_error_norm);
            println!(
                "terminal_disturbance_error = {}",
                s.terminal_disturbance_error
            );
            println!("lyapunov_max_increase = {}", s.lyapunov_max_increase);
            println!("trajectory = {}", art.trajectory.display());
            println!("metrics = {}", art.metrics.display());
            println!("summary = {}", art.summary.display());
            Ok(())
        }
        Err(Error::Diverged {
            step,
            time,
            partial,
        }) => {
            output::write_run(out, &sc, &partial)?;
            Err(Error::Diverged {
                step,
                time,
                partial,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_eval_curve(
    curve: Option<&Path>,
    scenario_path: Option<&Path>,
    index: usize,
    s: &[f64],
    count: Option<usize>,
    out: Option<&Path>,
) -> CmdResult {
    let curve = match (curve, scenario_path) {
        (Some(p), _) => scenario::load_curve_file(p)?,
        (None, Some(p)) => {
            let sc = scenario::load_scenario(p)?;
            let len = sc.curve_schedule.len();
            sc.curve_schedule
                .into_iter()
                .nth(index.wrapping_sub(1))
                .ok_or_else(|| Failure::Usage(format!("curve index {index} outside 1..={len}")))?
                .curve
        }
        (None, None) => return Err(Failure::Usage("--curve or --scenario is required".into())),
    };
    let s_values: Vec<f64> = match count {
        Some(0) => return Err(Failure::Usage("count must be at least 1".into())),
        Some(c) => (0..c).map(|k| k as f64 / c as f64).collect(),
        None => s.to_vec(),
    };
    let points = evaluate_points(&curve, &s_values)?;
    let w = open_output(out)?;
    output::write_points_csv(w, &points).map_err(|e| Failure::Io(out_name(out), e))
}

fn parse_param(spec: &str) -> Result<(SweepAxis, Vec<f64>), Failure> {
    let (name, values) = spec.split_once('=').ok_or_else(|| {
        Failure::Usage(format!("--param must look like name=v1,v2, got {spec:?}"))
    })?;
    let axis = SweepAxis::parse(name.trim())?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("{name}: {v:?} is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((axis, values))
}

fn cmd_sweep(
    path: &Path,
    params: &[String],
    out: Option<&Path>,
    overrides: &Overrides,
) -> CmdResult {
    let mut sc = scenario::load_scenario(path)?;
    overrides.apply(&mut sc);
    let mut grid = ParameterGrid::new();
    for p in params {
        let (axis, values) = parse_param(p)?;
        grid = grid.with(axis, values);
    }
    let outcomes = sweep(&sc, &grid)?;
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} of {} sweep runs failed", outcomes.len());
    }
    let w = open_output(out)?;
    output::write_sweep_csv(w, &outcomes).map_err(|e| Failure::Io(out_name(out), e))
}

fn run(cli: Cli) -> CmdResult {
    match &cli.command {
        Command::Fit {
            samples,
            family,
            out,
        } => cmd_fit(samples, family, out),
        Command::CheckGraph { topology } => cmd_check_graph(topology),
        Command::Simulate {
            scenario,
            out,
            overrides,
        } => cmd_simulate(scenario, out, overrides),
        Command::EvalCurve {
            curve,
            scenario,
            index,
            s,
            count,
            out,
        } => cmd_eval_curve(
            curve.as_deref(),
            scenario.as_deref(),
            *index,
            s,
            *count,
            out.as_deref(),
        ),
        Command::Sweep {
            scenario,
            params,
            out,
            overrides,
        } => cmd_sweep(scenario, params, out.as_deref(), overrides),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CURVEFORM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
