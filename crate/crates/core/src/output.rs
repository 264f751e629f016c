//! CSV and TOML run artifacts.
//!
//! Every CSV starts with a `# curveform-<kind> v1` line followed by a fixed
//! header row. Floats are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::control::ControllerForm;
use crate::curve::{ParametricCurve, Point};
use crate::error::{Error, Result};
use crate::simulation::{
    AgentRecord, MetricRecord, Scenario, StepRecord, SweepOutcome, TrajectoryLog,
};

pub const TRAJECTORY_MARKER: &str = "# curveform-trajectory v1";
pub const METRICS_MARKER: &str = "# curveform-metrics v1";
pub const POINTS_MARKER: &str = "# curveform-points v1";
pub const SUMMARY_FORMAT: &str = "curveform-summary/1";

pub const TRAJECTORY_HEADER: [&str; 11] = [
    "t",
    "agent",
    "x",
    "y",
    "theta_wrapped",
    "xbar",
    "ybar",
    "v",
    "omega",
    "dhat1",
    "dhat2",
];
pub const METRICS_HEADER: [&str; 3] = ["t", "err_norm", "V"];
pub const POINTS_HEADER: [&str; 3] = ["s", "x", "y"];

/// Paths of the files written by one simulation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub trajectory: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
}

impl RunArtifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            trajectory: dir.join("trajectory.csv"),
            metrics: dir.join("metrics.csv"),
            summary: dir.join("summary.toml"),
        }
    }
}

fn csv_writer<W: Write>(
    mut out: W,
    marker: &str,
    header: &[&str],
) -> std::io::Result<csv::Writer<W>> {
    writeln!(out, "{marker}")?;
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn csv_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

pub fn write_trajectory_csv<W: Write>(out: W, log: &TrajectoryLog) -> std::io::Result<()> {
    let mut w = csv_writer(out, TRAJECTORY_MARKER, &TRAJECTORY_HEADER)?;
    for rec in &log.records {
        let t = rec.t.to_string();
        for (i, a) in rec.agents.iter().enumerate() {
            let agent = (i + 1).to_string();
            let fields = [
                a.x,
                a.y,
                a.theta_wrapped,
                a.xbar,
                a.ybar,
                a.v,
                a.omega,
                a.dhat1,
                a.dhat2,
            ]
            .map(|v| v.to_string());
            w.write_field(&t).map_err(csv_io)?;
            w.write_field(&agent).map_err(csv_io)?;
            w.write_record(&fields).map_err(csv_io)?;
        }
    }
    w.flush()
}

pub fn write_metrics_csv<W: Write>(out: W, log: &TrajectoryLog) -> std::io::Result<()> {
    let mut w = csv_writer(out, METRICS_MARKER, &METRICS_HEADER)?;
    for m in &log.metrics {
        w.write_record([m.t, m.err_norm, m.lyapunov].map(|v| v.to_string()))
            .map_err(csv_io)?;
    }
    w.flush()
}

pub fn write_points_csv<W: Write>(out: W, points: &[(f64, Point)]) -> std::io::Result<()> {
    let mut w = csv_writer(out, POINTS_MARKER, &POINTS_HEADER)?;
    for (s, p) in points {
        w.write_record([*s, p.x, p.y].map(|v| v.to_string()))
            .map_err(csv_io)?;
    }
    w.flush()
}

pub const SWEEP_MARKER: &str = "# curveform-sweep v1";

/// One row per grid point: parameter values, status, then summary scalars.
/// Settling time is that of the last curve segment, empty when unsettled.
pub fn write_sweep_csv<W: Write>(out: W, outcomes: &[SweepOutcome]) -> std::io::Result<()> {
    let mut header: Vec<&str> = outcomes
        .first()
        .map(|o| o.point.iter().map(|(a, _)| a.name()).collect())
        .unwrap_or_default();
    header.extend([
        "status",
        "terminal_err_norm",
        "terminal_disturbance_error",
        "settling_time",
        "lyapunov_max_increase",
    ]);
    let mut w = csv_writer(out, SWEEP_MARKER, &header)?;
    for o in outcomes {
        let mut row: Vec<String> = o.point.iter().map(|(_, v)| v.to_string()).collect();
        match &o.result {
            Ok(s) => row.extend([
                "ok".to_string(),
                s.terminal_error_norm.to_string(),
                s.terminal_disturbance_error.to_string(),
                s.settling_times
                    .last()
                    .copied()
                    .flatten()
                    .map_or(String::new(), |t| t.to_string()),
                s.lyapunov_max_increase.to_string(),
            ]),
            Err(e) => {
                let msg = e.to_string().replace('\n', " ");
                row.extend([
                    format!("error: {msg}"),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
            }
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()
}

/// `(s, c(s))` at the given parameters.
pub fn evaluate_points(curve: &ParametricCurve, s_values: &[f64]) -> Result<Vec<(f64, Point)>> {
    s_values.iter().map(|&s| Ok((s, curve.point(s)?))).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    f(create(path)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct SummaryDoc<'a> {
    format: &'static str,
    seed: u64,
    completed: bool,
    steps: usize,
    initial_error_norm: f64,
    terminal_error_norm: f64,
    terminal_max_agent_error: f64,
    terminal_disturbance_error: f64,
    lyapunov_max_increase: f64,
    /// Seconds; negative when the segment never settled.
    settling_time: Vec<f64>,
    settling_threshold: &'a [f64],
    terminal_theta: &'a [f64],
    config: ConfigEcho,
}

#[derive(Debug, Serialize)]
struct ConfigEcho {
    agents: usize,
    k1: f64,
    k2: f64,
    offset: f64,
    dt: f64,
    duration: f64,
    integrator: String,
    form: String,
    saturation: Option<f64>,
    log_stride: usize,
    curve_starts: Vec<f64>,
    curve_families: Vec<String>,
    disturbances: Vec<[f64; 2]>,
}

pub fn summary_toml(scenario: &Scenario, log: &TrajectoryLog) -> Result<String> {
    let s = &log.summary;
    let doc = SummaryDoc {
        format: SUMMARY_FORMAT,
        seed: scenario.seed,
        completed: s.completed,
        steps: s.steps,
        initial_error_norm: s.initial_error_norm,
        terminal_error_norm: s.terminal_error_norm,
        terminal_max_agent_error: s.terminal_max_agent_error,
        terminal_disturbance_error: s.terminal_disturbance_error,
        lyapunov_max_increase: s.lyapunov_max_increase,
        settling_time: s.settling_times.iter().map(|t| t.unwrap_or(-1.0)).collect(),
        settling_threshold: &s.settling_thresholds,
        terminal_theta: &s.terminal_theta,
        config: ConfigEcho {
            agents: scenario.agents(),
            k1: scenario.gains.k1,
            k2: scenario.gains.k2,
            offset: scenario.ell,
            dt: scenario.dt,
            duration: scenario.duration,
            integrator: format!("{:?}", scenario.integrator).to_lowercase(),
            form: match scenario.form {
                ControllerForm::CoefficientError => "coefficient-error",
                ControllerForm::NeighborDifference => "neighbor-difference",
            }
            .into(),
            saturation: scenario.saturation,
            log_stride: scenario.log_stride,
            curve_starts: scenario.curve_schedule.iter().map(|c| c.start).collect(),
            curve_families: scenario
                .curve_schedule
                .iter()
                .map(|c| c.curve.family.to_string())
                .collect(),
            disturbances: scenario.disturbances.iter().map(|d| [d.d1, d.d2]).collect(),
        },
    };
    toml::to_string(&doc)
        .map_err(|e| Error::Configuration(format!("cannot serialize summary: {e}")))
}

/// Writes trajectory, metrics and summary files into `dir`.
pub fn write_run(dir: &Path, scenario: &Scenario, log: &TrajectoryLog) -> Result<RunArtifacts> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let art = RunArtifacts::in_dir(dir);
    write_file(&art.trajectory, |w| write_trajectory_csv(w, log))?;
    write_file(&art.metrics, |w| write_metrics_csv(w, log))?;
    let summary = summary_toml(scenario, log)?;
    std::fs::write(&art.summary, summary).map_err(|e| Error::io(&art.summary, e))?;
    Ok(art)
}

fn csv_reader<R: Read>(
    mut input: R,
    marker: &str,
    header: &[&str],
    path: &Path,
) -> Result<csv::Reader<R>> {
    let mut first = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match input.read(&mut byte) {
            Ok(0) => break,
            Ok(_) if byte[0] == b'\n' => break,
            Ok(_) => first.push(byte[0]),
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if String::from_utf8_lossy(&first).trim_end() != marker {
        return Err(parse_err(1, format!("expected {marker:?}")));
    }
    let mut rdr = csv::Reader::from_reader(input);
    let found = rdr.headers().map_err(|e| parse_err(2, e.to_string()))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            2,
            format!("expected header {}", header.join(",")),
        ));
    }
    Ok(rdr)
}

fn read_rows<R: Read>(rdr: csv::Reader<R>, width: usize, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for rec in rdr.into_records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize + 1),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize + 1);
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("{f:?} is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a trajectory CSV back into step records; `step` is the row-group index.
pub fn read_trajectory_csv<R: Read>(input: R, path: &Path) -> Result<Vec<StepRecord>> {
    let rdr = csv_reader(input, TRAJECTORY_MARKER, &TRAJECTORY_HEADER, path)?;
    let mut out: Vec<StepRecord> = Vec::new();
    for r in read_rows(rdr, TRAJECTORY_HEADER.len(), path)? {
        let rec = AgentRecord {
            x: r[2],
            y: r[3],
            theta_wrapped: r[4],
            xbar: r[5],
            ybar: r[6],
            v: r[7],
            omega: r[8],
            dhat1: r[9],
            dhat2: r[10],
        };
        match out.last_mut() {
            Some(last) if last.t == r[0] => last.agents.push(rec),
            _ => out.push(StepRecord {
                step: out.len(),
                t: r[0],
                agents: vec![rec],
            }),
        }
    }
    Ok(out)
}

pub fn read_metrics_csv<R: Read>(input: R, path: &Path) -> Result<Vec<MetricRecord>> {
    let rdr = csv_reader(input, METRICS_MARKER, &METRICS_HEADER, path)?;
    Ok(read_rows(rdr, METRICS_HEADER.len(), path)?
        .into_iter()
        .map(|r| MetricRecord {
            t: r[0],
            err_norm: r[1],
            lyapunov: r[2],
        })
        .collect())
}

pub fn read_points_csv<R: Read>(input: R, path: &Path) -> Result<Vec<(f64, Point)>> {
    let rdr = csv_reader(input, POINTS_MARKER, &POINTS_HEADER, path)?;
    Ok(read_rows(rdr, POINTS_HEADER.len(), path)?
        .into_iter()
        .map(|r| (r[0], Point::new(r[1], r[2])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{BasisFamily, CurveCoefficients};
    use crate::simulation::simulate;
    use crate::topology::DirectedTopology;
    use nalgebra::DVector;

    fn small_log() -> (Scenario, TrajectoryLog) {
        let family = BasisFamily::fourier(2).unwrap();
        let mut xi = DVector::zeros(10);
        xi[0] = 1.0;
        xi[3] = 1.0;
        let curve =
            ParametricCurve::new(family, CurveCoefficients::new(&family, xi).unwrap()).unwrap();
        let mut sc = Scenario::new(DirectedTopology::chain(3).unwrap(), curve);
        sc.dt = 0.01;
        sc.duration = 0.5;
        sc.ell = 0.3;
        let log = simulate(&sc).unwrap();
        (sc, log)
    }

    #[test]
    fn trajectory_round_trip() {
        let (_, log) = small_log();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &log).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_MARKER));
        assert_eq!(
            lines.next(),
            Some("t,agent,x,y,theta_wrapped,xbar,ybar,v,omega,dhat1,dhat2")
        );
        assert_eq!(text.lines().count(), 2 + 51 * 3);
        let back = read_trajectory_csv(buf.as_slice(), Path::new("t.csv")).unwrap();
        assert_eq!(back, log.records);
    }

    #[test]
    fn metrics_round_trip() {
        let (_, log) = small_log();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &log).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("# curveform-metrics v1\nt,err_norm,V\n"));
        let back = read_metrics_csv(buf.as_slice(), Path::new("m.csv")).unwrap();
        assert_eq!(back, log.metrics);
    }

    #[test]
    fn reader_rejects_wrong_marker() {
        let text = "# something else\nt,err_norm,V\n0,1,2\n";
        assert!(matches!(
            read_metrics_csv(text.as_bytes(), Path::new("m.csv")),
            Err(Error::Parse { line: 1, .. })
        ));
        let text = "# curveform-metrics v1\nt,err,V\n";
        assert!(matches!(
            read_metrics_csv(text.as_bytes(), Path::new("m.csv")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn summary_parses_as_toml() {
        let (sc, log) = small_log();
        let text = summary_toml(&sc, &log).unwrap();
        let v: toml::Table = toml::from_str(&text).unwrap();
        assert_eq!(v["format"].as_str(), Some(SUMMARY_FORMAT));
        assert_eq!(
            v["terminal_error_norm"].as_float(),
            Some(log.summary.terminal_error_norm)
        );
        assert_eq!(v["config"]["agents"].as_integer(), Some(3));
    }

    #[test]
    fn sweep_rows_follow_grid() {
        use crate::simulation::{sweep, ParameterGrid, SweepAxis};
        let (sc, _) = small_log();
        let grid = ParameterGrid::new().with(SweepAxis::Ell, vec![0.0, 0.3]);
        let out = sweep(&sc, &grid).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_MARKER);
        assert_eq!(
            lines[1],
            "ell,status,terminal_err_norm,terminal_disturbance_error,settling_time,lyapunov_max_increase"
        );
        assert!(lines[2].starts_with("0,\"error: "));
        assert!(lines[2].ends_with(",,,,"));
        assert!(lines[3].starts_with("0.3,ok,"));
    }

    #[test]
    fn points_round_trip() {
        let pts = vec![(0.0, Point::new(3.5, 3.0)), (1.0, Point::new(-2.0, -1.0))];
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &pts).unwrap();
        assert_eq!(
            String::from_utf8_lossy(&buf),
            "# curveform-points v1\ns,x,y\n0,3.5,3\n1,-2,-1\n"
        );
        assert_eq!(
            read_points_csv(buf.as_slice(), Path::new("p.csv")).unwrap(),
            pts
        );
    }
}
