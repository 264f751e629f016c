//! Planar parametric curves in linear-regression form `c(s) = G(s) ξ`.
//!
//! A curve is a basis family together with a coefficient vector `ξ` of
//! length `2H`, where `H` is the number of scalar basis functions. The basis
//! matrix `G(s)` is `2 × 2H`; its column layout fixes the ordering of `ξ`:
//!
//! * **Fourier, `m` harmonics** (`H = 2m + 1`): for each harmonic
//!   `h = 1..=m` a `2 × 4` block
//!   ```text
//!   [ cos 2πhs  sin 2πhs     0         0     ]
//!   [    0         0      cos 2πhs  sin 2πhs ]
//!   ```
//!   followed by the `2 × 2` identity (constant offset). So
//!   `ξ = [ax₁, bx₁, ay₁, by₁, …, ax_m, bx_m, ay_m, by_m, cx, cy]`.
//! * **Monomial polynomial, degree `d`** (`H = d + 1`): `[1, s, …, s^d] ⊗ I₂`,
//!   so `ξ = [x₀, y₀, x₁, y₁, …, x_d, y_d]`.

mod fit;
mod shapes;

pub use fit::{bezier_to_polynomial, fit_coefficients, fit_residuals, ResidualStats, SampleSet};
pub use shapes::{bernstein_point, ModulatedRing, RadialTerm};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point (or displacement) in the plane, meters.
pub type Point = Vector2<f64>;

/// Relative singular-value threshold below which a direction counts as rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Scalar basis family used to build `G(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisFamily {
    /// Truncated Fourier series with `harmonics ≥ 1` harmonics plus a constant term.
    Fourier { harmonics: usize },
    /// Monomials `1, s, …, s^degree`.
    Polynomial { degree: usize },
}

impl BasisFamily {
    pub fn fourier(harmonics: usize) -> Result<Self> {
        if harmonics == 0 {
            return Err(Error::invalid("Fourier family needs at least one harmonic"));
        }
        Ok(BasisFamily::Fourier { harmonics })
    }

    pub fn polynomial(degree: usize) -> Self {
        BasisFamily::Polynomial { degree }
    }

    /// Number of scalar basis functions `H`.
    pub fn basis_count(&self) -> usize {
        match *self {
            BasisFamily::Fourier { harmonics } => 2 * harmonics + 1,
            BasisFamily::Polynomial { degree } => degree + 1,
        }
    }

    /// Columns of `G(s)`, i.e. `2H`.
    pub fn columns(&self) -> usize {
        2 * self.basis_count()
    }

    fn check(&self) -> Result<()> {
        match *self {
            BasisFamily::Fourier { harmonics: 0 } => {
                Err(Error::invalid("Fourier family needs at least one harmonic"))
            }
            _ => Ok(()),
        }
    }

    /// Writes `G(s)` into `out` (2 × 2H, preallocated). No range checks.
    pub(crate) fn fill_row(&self, s: f64, out: &mut Matrix2xX<f64>) {
        out.fill(0.0);
        match *self {
            BasisFamily::Fourier { harmonics } => {
                for h in 1..=harmonics {
                    let (sin, cos) = (2.0 * PI * h as f64 * s).sin_cos();
                    let c = 4 * (h - 1);
                    out[(0, c)] = cos;
                    out[(0, c + 1)] = sin;
                    out[(1, c + 2)] = cos;
                    out[(1, c + 3)] = sin;
                }
                let c = 4 * harmonics;
                out[(0, c)] = 1.0;
                out[(1, c + 1)] = 1.0;
            }
            BasisFamily::Polynomial { degree } => {
                let mut power = 1.0;
                for k in 0..=degree {
                    out[(0, 2 * k)] = power;
                    out[(1, 2 * k + 1)] = power;
                    power *= s;
                }
            }
        }
    }
}

impl std::fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisFamily::Fourier { harmonics } => write!(f, "fourier({harmonics} harmonics)"),
            BasisFamily::Polynomial { degree } => write!(f, "polynomial(degree {degree})"),
        }
    }
}

/// Coefficient vector `ξ` (length `2H`, meters).
#[derive(Debug, Clone, PartialEq)]
pub struct CurveCoefficients(DVector<f64>);

impl CurveCoefficients {
    pub fn new(family: &BasisFamily, xi: DVector<f64>) -> Result<Self> {
        if xi.len() != family.columns() {
            return Err(Error::invalid(format!(
                "{family} needs {} coefficients, got {}",
                family.columns(),
                xi.len()
            )));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(Self(xi))
    }

    pub fn zeros(family: &BasisFamily) -> Self {
        Self(DVector::zeros(family.columns()))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// A basis family paired with its coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricCurve {
    pub family: BasisFamily,
    pub coefficients: CurveCoefficients,
}

impl ParametricCurve {
    pub fn new(family: BasisFamily, coefficients: CurveCoefficients) -> Result<Self> {
        family.check()?;
        if coefficients.len() != family.columns() {
            return Err(Error::invalid(format!(
                "{family} needs {} coefficients, got {}",
                family.columns(),
                coefficients.len()
            )));
        }
        Ok(Self {
            family,
            coefficients,
        })
    }

    pub fn point(&self, s: f64) -> Result<Point> {
        evaluate_curve(&self.family, &self.coefficients, s)
    }

    /// Axis-aligned bounding box `(min, max)` from `samples` uniform evaluations.
    pub fn bounding_box(&self, samples: usize) -> (Point, Point) {
        let samples = samples.max(2);
        let mut row = Matrix2xX::zeros(self.family.columns());
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for k in 0..samples {
            let s = k as f64 / (samples - 1) as f64;
            self.family.fill_row(s, &mut row);
            let p = &row * self.coefficients.as_vector();
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        (lo, hi)
    }
}

/// How agent parameters `s_i` are spread over `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParameterSpacing {
    /// `s_i = (i − 1)/n`; the endpoint `s = 1` is never assigned.
    #[default]
    Uniform,
    /// `s_i = (i − 1)/(n − 1)`, occupying both ends of an open curve.
    EndpointInclusive,
}

/// `s_i = (i − 1)/n` for `i = 1..=n`.
pub fn assign_parameters(n: usize) -> Result<Vec<f64>> {
    assign_parameters_with(n, ParameterSpacing::Uniform)
}

pub fn assign_parameters_with(n: usize, spacing: ParameterSpacing) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("agent count must be at least 1"));
    }
    let denom = match spacing {
        ParameterSpacing::Uniform => n as f64,
        ParameterSpacing::EndpointInclusive if n == 1 => 1.0,
        ParameterSpacing::EndpointInclusive => (n - 1) as f64,
    };
    Ok((0..n).map(|i| i as f64 / denom).collect())
}

fn check_parameter(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!(
            "curve parameter {s} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Basis matrix `G(s)` (2 × 2H).
pub fn basis_row(family: &BasisFamily, s: f64) -> Result<Matrix2xX<f64>> {
    family.check()?;
    check_parameter(s)?;
    let mut row = Matrix2xX::zeros(family.columns());
    family.fill_row(s, &mut row);
    Ok(row)
}

/// `c(s) = G(s) ξ`.
pub fn evaluate_curve(family: &BasisFamily, xi: &CurveCoefficients, s: f64) -> Result<Point> {
    if xi.len() != family.columns() {
        return Err(Error::invalid(format!(
            "{family} needs {} coefficients, got {}",
            family.columns(),
            xi.len()
        )));
    }
    Ok(basis_row(family, s)? * xi.as_vector())
}

/// Vertical stack `Ḡ = [G(s₁); …; G(s_n)]` (2n × 2H).
#[derive(Debug, Clone, PartialEq)]
pub struct StackedBasis {
    family: BasisFamily,
    s_values: Vec<f64>,
    matrix: DMatrix<f64>,
}

impl StackedBasis {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s_values
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn agents(&self) -> usize {
        self.s_values.len()
    }

    /// `G_i(s_i)`, the 2 × 2H block for agent `i` (0-based).
    pub fn block(&self, i: usize) -> Matrix2xX<f64> {
        let view = self.matrix.rows(2 * i, 2);
        Matrix2xX::from_iterator(view.ncols(), view.iter().copied())
    }
}

pub fn stack_basis(family: &BasisFamily, s_list: &[f64]) -> Result<StackedBasis> {
    family.check()?;
    if s_list.is_empty() {
        return Err(Error::invalid("cannot stack an empty parameter list"));
    }
    for &s in s_list {
        check_parameter(s)?;
    }
    let cols = family.columns();
    let mut matrix = DMatrix::zeros(2 * s_list.len(), cols);
    let mut row = Matrix2xX::zeros(cols);
    for (i, &s) in s_list.iter().enumerate() {
        family.fill_row(s, &mut row);
        matrix.rows_mut(2 * i, 2).copy_from(&row);
    }
    Ok(StackedBasis {
        family: *family,
        s_values: s_list.to_vec(),
        matrix,
    })
}

/// Outcome of the rank and agent-count checks on a stacked basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub agents: usize,
    pub basis_count: usize,
    pub rank: usize,
    pub expected_rank: usize,
    pub smallest_singular_value: f64,
    pub largest_singular_value: f64,
    /// `rank(Ḡ) = min(2n, 2H)`.
    pub full_rank: bool,
    /// `n ≤ H`.
    pub agents_within_basis: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.full_rank && self.agents_within_basis
    }

    pub fn condition_number(&self) -> f64 {
        if self.smallest_singular_value > 0.0 {
            self.largest_singular_value / self.smallest_singular_value
        } else {
            f64::INFINITY
        }
    }
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn numerical_rank(sv: &[f64], rows: usize, cols: usize) -> usize {
    let largest = sv.first().copied().unwrap_or(0.0);
    let threshold = (largest * RANK_TOLERANCE).max(rows.max(cols) as f64 * largest * f64::EPSILON);
    sv.iter().filter(|&&v| v > threshold).count()
}

pub fn validate_assumptions(g_bar: &StackedBasis, n: usize, h: usize) -> AssumptionReport {
    let m = g_bar.matrix();
    let sv = singular_values(m);
    let rank = numerical_rank(&sv, m.nrows(), m.ncols());
    let expected_rank = (2 * n).min(2 * h);
    AssumptionReport {
        agents: n,
        basis_count: h,
        rank,
        expected_rank,
        smallest_singular_value: sv.last().copied().unwrap_or(0.0),
        largest_singular_value: sv.first().copied().unwrap_or(0.0),
        full_rank: rank == expected_rank,
        agents_within_basis: n <= h,
    }
}

/// Pseudoinverse `Ḡ⁺` (2H × 2n) of a full-rank stack.
///
/// Uses `(ḠᵀḠ)⁻¹Ḡᵀ` when `n ≥ H` and `Ḡᵀ(ḠḠᵀ)⁻¹` when `n < H`. Both are
/// evaluated through a thin QR factorization (of `Ḡ` or `Ḡᵀ` respectively)
/// instead of forming the Gram matrix.
pub fn pseudoinverse(g_bar: &StackedBasis) -> Result<DMatrix<f64>> {
    let m = g_bar.matrix();
    let (rows, cols) = m.shape();
    let sv = singular_values(m);
    if numerical_rank(&sv, rows, cols) < rows.min(cols) {
        let smallest = sv.last().copied().unwrap_or(0.0);
        let largest = sv.first().copied().unwrap_or(0.0);
        return Err(Error::SingularSystem {
            context: "stacked basis pseudoinverse".into(),
            condition: if smallest > 0.0 {
                largest / smallest
            } else {
                f64::INFINITY
            },
        });
    }
    let singular = || Error::SingularSystem {
        context: "stacked basis pseudoinverse".into(),
        condition: f64::INFINITY,
    };
    if rows >= cols {
        // Ḡ = QR  ⇒  (ḠᵀḠ)⁻¹Ḡᵀ = R⁻¹Qᵀ
        let qr = m.clone().qr();
        let qt = qr.q().transpose();
        qr.r().solve_upper_triangular(&qt).ok_or_else(singular)
    } else {
        // Ḡᵀ = QR  ⇒  Ḡᵀ(ḠḠᵀ)⁻¹ = Q R⁻ᵀ
        let qr = m.transpose().qr();
        let q = qr.q();
        let r_inv_t = qr
            .r()
            .solve_upper_triangular(&DMatrix::identity(rows, rows))
            .ok_or_else(singular)?
            .transpose();
        Ok(q * r_inv_t)
    }
}
