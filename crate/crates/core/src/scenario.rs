//! TOML scenario, curve and topology files.
//!
//! A scenario file looks like
//!
//! ```toml
//! format = "curveform-scenario/1"
//! agents = 6
//! seed = 7
//!
//! [[curve]]
//! start = 0.0
//! family = { kind = "fourier", harmonics = 6 }
//! source = { type = "modulated-ring", center = [4.0, 4.0], radius_x = [{ harmonic = 0, cos = 8.0 }], radius_y = [{ harmonic = 0, cos = 8.0 }] }
//!
//! [topology]
//! kind = "chain"
//!
//! [gains]
//! k1 = 1.0
//! k2 = 1.0
//! ```
//!
//! Agents are numbered from 1 in files and from 0 in code.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerForm, Gains};
use crate::curve::{
    bernstein_point, bezier_to_polynomial, fit_coefficients, fit_residuals, BasisFamily,
    CurveCoefficients, ModulatedRing, ParameterSpacing, ParametricCurve, Point, RadialTerm,
    ResidualStats, SampleSet,
};
use crate::dynamics::{AgentState, Disturbance, Integrator};
use crate::error::{Error, Result};
use crate::simulation::{CurveSegment, InitialStates, Scenario, DEFAULT_BOX_INFLATION};
use crate::topology::{DirectedTopology, Edge};

pub const SCENARIO_FORMAT: &str = "curveform-scenario/1";
pub const CURVE_FORMAT: &str = "curveform-curve/1";
pub const TOPOLOGY_FORMAT: &str = "curveform-topology/1";

const DEFAULT_SAMPLES: usize = 200;

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

/// Where a curve's coefficients come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CurveSource {
    Coefficients {
        values: Vec<f64>,
    },
    ModulatedRing {
        center: [f64; 2],
        radius_x: Vec<RadialTerm>,
        radius_y: Vec<RadialTerm>,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    /// Cubic Bézier; expanded exactly for polynomial families, fitted otherwise.
    Bezier {
        control: [[f64; 2]; 4],
        #[serde(default = "default_samples")]
        samples: usize,
    },
    /// CSV with columns `s,x,y`, relative to the referencing file.
    SamplesCsv {
        path: PathBuf,
    },
}

/// Turns a source into coefficients; returns fit residuals when a fit was made.
pub fn resolve_curve(
    family: BasisFamily,
    source: &CurveSource,
    base_dir: &Path,
) -> Result<(ParametricCurve, Option<ResidualStats>)> {
    let fit = |samples: SampleSet| -> Result<(ParametricCurve, Option<ResidualStats>)> {
        let xi = fit_coefficients(&samples, &family)?;
        let res = fit_residuals(&samples, &family, &xi)?;
        Ok((ParametricCurve::new(family, xi)?, Some(res)))
    };
    match source {
        CurveSource::Coefficients { values } => {
            let xi = CurveCoefficients::new(&family, DVector::from_column_slice(values))?;
            Ok((ParametricCurve::new(family, xi)?, None))
        }
        CurveSource::ModulatedRing {
            center,
            radius_x,
            radius_y,
            samples,
        } => {
            let ring = ModulatedRing {
                center: *center,
                radius_x: radius_x.clone(),
                radius_y: radius_y.clone(),
            };
            fit(SampleSet::from_fn(*samples, |s| ring.point(s))?)
        }
        CurveSource::Bezier { control, samples } => {
            let pts: [Point; 4] = std::array::from_fn(|k| Point::new(control[k][0], control[k][1]));
            match family {
                BasisFamily::Polynomial { degree } => {
                    let xi = bezier_to_polynomial(&pts, degree)?;
                    Ok((ParametricCurve::new(family, xi)?, None))
                }
                BasisFamily::Fourier { .. } => {
                    let s: Vec<f64> = (0..*samples)
                        .map(|k| k as f64 / (*samples - 1).max(1) as f64)
                        .collect();
                    let p = s.iter().map(|&s| bernstein_point(&pts, s)).collect();
                    fit(SampleSet::new(s, p)?)
                }
            }
        }
        CurveSource::SamplesCsv { path } => fit(read_samples_csv(&base_dir.join(path))?),
    }
}

/// Reads `s,x,y` samples; `#` lines are comments.
pub fn read_samples_csv(path: &Path) -> Result<SampleSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_samples_csv(file, path)
}

pub fn parse_samples_csv(reader: impl std::io::Read, path: &Path) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(e.position().map_or(1, |p| p.line()), e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["s", "x", "y"] {
        return Err(parse_err(
            1,
            format!(
                "expected header s,x,y, found {:?}",
                headers.iter().collect::<Vec<_>>()
            ),
        ));
    }
    let mut s_values = Vec::new();
    let mut points = Vec::new();
    for record in rdr.records() {
        let record =
            record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut vals = [0.0; 3];
        for (k, name) in ["s", "x", "y"].iter().enumerate() {
            let field = record.get(k).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| {
                parse_err(line, format!("column {name}: {field:?} is not a number"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("column {name}: value {field} is not finite"),
                ));
            }
            vals[k] = v;
        }
        if !(0.0..=1.0).contains(&vals[0]) {
            return Err(parse_err(
                line,
                format!("parameter s = {} outside [0, 1]", vals[0]),
            ));
        }
        s_values.push(vals[0]);
        points.push(Point::new(vals[1], vals[2]));
    }
    SampleSet::new(s_values, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    #[serde(default)]
    pub start: f64,
    pub family: BasisFamily,
    pub source: CurveSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    #[default]
    Chain,
    ChainShortcut,
    Edges,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default)]
    pub kind: TopologyKind,
    /// `(receiver, sender, weight)`, 1-based.
    #[serde(default)]
    pub edges: Vec<(usize, usize, f64)>,
}

impl TopologySpec {
    pub fn build(&self, n: usize) -> Result<DirectedTopology> {
        if self.kind != TopologyKind::Edges && !self.edges.is_empty() {
            return Err(Error::Configuration(
                "edges are only allowed with kind = \"edges\"".into(),
            ));
        }
        match self.kind {
            TopologyKind::Chain => DirectedTopology::chain(n),
            TopologyKind::ChainShortcut => DirectedTopology::chain_with_shortcuts(n),
            TopologyKind::Edges => {
                let edges = self
                    .edges
                    .iter()
                    .map(|&(r, s, w)| {
                        if r == 0 || s == 0 || r > n || s > n {
                            return Err(Error::Configuration(format!(
                                "edge ({r}, {s}) outside agents 1..={n}"
                            )));
                        }
                        Ok(Edge::new(r - 1, s - 1, w))
                    })
                    .collect::<Result<Vec<_>>>()?;
                DirectedTopology::from_edges(n, &edges)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub k1: f64,
    pub k2: f64,
    #[serde(default)]
    pub form: ControllerForm,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub all: Option<[f64; 2]>,
    pub per_agent: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// Virtual-point offset, meters.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Clamp on `|v|`, m/s.
    pub saturation: Option<f64>,
}

fn default_offset() -> f64 {
    0.01
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            offset: default_offset(),
            saturation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    #[serde(default)]
    pub method: Integrator,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "default_stride")]
    pub log_stride: usize,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMode {
    #[default]
    RandomBox,
    OnTarget,
    States,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub mode: InitialMode,
    /// Scale-up of the first curve's bounding box when no box is given.
    pub inflation: Option<f64>,
    pub min: Option<[f64; 2]>,
    pub max: Option<[f64; 2]>,
    /// `(x, y, θ)` per agent for `mode = "states"`.
    pub states: Option<Vec<[f64; 3]>>,
    /// Initial disturbance estimates per agent.
    pub observer: Option<Vec<[f64; 2]>>,
}

/// Raw scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format: String,
    pub agents: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub parameter_spacing: ParameterSpacing,
    pub curve: Vec<CurveSpec>,
    #[serde(default)]
    pub topology: TopologySpec,
    pub gains: GainsSpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub agent: AgentSpec,
    pub integration: IntegrationSpec,
    #[serde(default)]
    pub initial: InitialSpec,
}

fn toml_error(path: &Path, text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| {
        text[..s.start.min(text.len())].matches('\n').count() + 1
    });
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.message().to_string(),
    }
}

fn check_format(path: &Path, text: &str, found: &str, expected: &str) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    let line = text
        .lines()
        .position(|l| l.trim_start().starts_with("format"))
        .map_or(1, |k| k + 1);
    Err(Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("unsupported format {found:?}, expected {expected:?}"),
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&read_text(path)?, path)
}

/// Parses a scenario document; `path` names it in errors and anchors
/// relative sample files.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
    check_format(path, text, &file.format, SCENARIO_FORMAT)?;
    file.into_scenario(&base_dir(path))
}

fn pairs(v: &[[f64; 2]]) -> Vec<Vector2<f64>> {
    v.iter().map(|p| Vector2::new(p[0], p[1])).collect()
}

impl ScenarioFile {
    pub fn into_scenario(self, base_dir: &Path) -> Result<Scenario> {
        let n = self.agents;
        if n == 0 {
            return Err(Error::Configuration("agents must be at least 1".into()));
        }
        let mut schedule = Vec::with_capacity(self.curve.len());
        for (k, spec) in self.curve.iter().enumerate() {
            let (curve, residuals) = resolve_curve(spec.family, &spec.source, base_dir)
                .map_err(|e| Error::Configuration(format!("curve {}: {e}", k + 1)))?;
            if let Some(r) = residuals {
                log::info!(
                    "curve {}: fit residual max {:.3e}, rms {:.3e}",
                    k + 1,
                    r.max,
                    r.rms
                );
            }
            schedule.push(CurveSegment {
                start: spec.start,
                curve,
            });
        }
        if schedule.is_empty() {
            return Err(Error::Configuration(
                "at least one [[curve]] is required".into(),
            ));
        }

        let disturbances = match (&self.disturbance.all, &self.disturbance.per_agent) {
            (Some(_), Some(_)) => {
                return Err(Error::Configuration(
                    "[disturbance] takes either `all` or `per_agent`, not both".into(),
                ))
            }
            (Some([d1, d2]), None) => vec![Disturbance { d1: *d1, d2: *d2 }; n],
            (None, Some(list)) => list
                .iter()
                .map(|&[d1, d2]| Disturbance { d1, d2 })
                .collect(),
            (None, None) => vec![Disturbance::default(); n],
        };

        let init = &self.initial;
        let initial = match init.mode {
            InitialMode::OnTarget => InitialStates::OnTarget,
            InitialMode::States => {
                let states = init.states.as_ref().ok_or_else(|| {
                    Error::Configuration("mode = \"states\" needs an `states` list".into())
                })?;
                InitialStates::Explicit(
                    states
                        .iter()
                        .map(|&[x, y, t]| AgentState::new(x, y, t))
                        .collect(),
                )
            }
            InitialMode::RandomBox => match (init.min, init.max) {
                (Some(lo), Some(hi)) => InitialStates::RandomBox {
                    min: Point::new(lo[0], lo[1]),
                    max: Point::new(hi[0], hi[1]),
                },
                (None, None) => InitialStates::RandomAroundCurve {
                    inflation: init.inflation.unwrap_or(DEFAULT_BOX_INFLATION),
                },
                _ => {
                    return Err(Error::Configuration(
                        "[initial] needs both `min` and `max` for an explicit box".into(),
                    ))
                }
            },
        };

        Ok(Scenario {
            topology: self.topology.build(n)?,
            gains: Gains {
                k1: self.gains.k1,
                k2: self.gains.k2,
            },
            ell: self.agent.offset,
            disturbances,
            curve_schedule: schedule,
            spacing: self.parameter_spacing,
            dt: self.integration.dt,
            duration: self.integration.duration,
            initial,
            observer_init: init.observer.as_deref().map(pairs),
            integrator: self.integration.method,
            saturation: self.agent.saturation,
            seed: self.seed,
            form: self.gains.form,
            log_stride: self.integration.log_stride,
        })
    }
}

/// Fit statistics stored alongside fitted coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecord {
    pub samples: usize,
    pub residual_max: f64,
    pub residual_rms: f64,
}

/// Standalone curve document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFile {
    pub format: String,
    pub family: BasisFamily,
    pub source: CurveSource,
    pub fit: Option<FitRecord>,
}

impl CurveFile {
    pub fn from_curve(curve: &ParametricCurve, fit: Option<FitRecord>) -> Self {
        Self {
            format: CURVE_FORMAT.into(),
            family: curve.family,
            source: CurveSource::Coefficients {
                values: curve.coefficients.as_vector().iter().copied().collect(),
            },
            fit,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::Configuration(format!("cannot serialize curve: {e}")))
    }
}

pub fn parse_curve_file(text: &str, path: &Path) -> Result<ParametricCurve> {
    let file: CurveFile = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
    check_format(path, text, &file.format, CURVE_FORMAT)?;
    Ok(resolve_curve(file.family, &file.source, &base_dir(path))?.0)
}

pub fn load_curve_file(path: &Path) -> Result<ParametricCurve> {
    parse_curve_file(&read_text(path)?, path)
}

/// Writes `curve` as a coefficient-source curve file.
pub fn write_curve_file(
    path: &Path,
    curve: &ParametricCurve,
    fit: Option<FitRecord>,
) -> Result<()> {
    let text = CurveFile::from_curve(curve, fit).to_toml()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub format: String,
    pub agents: usize,
    #[serde(flatten)]
    pub spec: TopologySpec,
}

pub fn parse_topology_file(text: &str, path: &Path) -> Result<DirectedTopology> {
    let file: TopologyFile = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
    check_format(path, text, &file.format, TOPOLOGY_FORMAT)?;
    if file.agents == 0 {
        return Err(Error::Configuration("agents must be at least 1".into()));
    }
    file.spec.build(file.agents)
}

pub fn load_topology_file(path: &Path) -> Result<DirectedTopology> {
    parse_topology_file(&read_text(path)?, path)
}
