use nalgebra::{DMatrix, DVector, Matrix2xX};

use super::{BasisFamily, CurveCoefficients, Point, RANK_TOLERANCE};
use crate::error::{Error, Result};

/// Sampled points `c_k` with their parameters `s_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<Point>,
    s_values: Vec<f64>,
}

impl SampleSet {
    pub fn new(s_values: Vec<f64>, points: Vec<Point>) -> Result<Self> {
        if s_values.len() != points.len() {
            return Err(Error::invalid(format!(
                "{} parameters for {} points",
                s_values.len(),
                points.len()
            )));
        }
        if let Some(s) = s_values.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!(
                "sample parameter {s} outside [0, 1]"
            )));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("sample points must be finite"));
        }
        Ok(Self { points, s_values })
    }

    /// `count` samples of `f` at `s_k = k / count`.
    pub fn from_fn(count: usize, f: impl Fn(f64) -> Point) -> Result<Self> {
        let s_values: Vec<f64> = (0..count).map(|k| k as f64 / count as f64).collect();
        let points = s_values.iter().map(|&s| f(s)).collect();
        Self::new(s_values, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s_values
    }
}

/// Least-squares coefficients `ξ = (G_hᵀ G_h)⁻¹ G_hᵀ C` over the samples,
/// solved through a Householder QR of `G_h`.
pub fn fit_coefficients(samples: &SampleSet, family: &BasisFamily) -> Result<CurveCoefficients> {
    family.check()?;
    let cols = family.columns();
    if samples.len() <= cols {
        return Err(Error::InsufficientSamples {
            samples: samples.len(),
            required: cols,
        });
    }
    let rows = 2 * samples.len();
    let mut g = DMatrix::zeros(rows, cols);
    let mut c = DVector::zeros(rows);
    let mut row = Matrix2xX::zeros(cols);
    for (k, (&s, p)) in samples.s_values.iter().zip(&samples.points).enumerate() {
        family.fill_row(s, &mut row);
        g.rows_mut(2 * k, 2).copy_from(&row);
        c[2 * k] = p.x;
        c[2 * k + 1] = p.y;
    }

    let qr = g.qr();
    let r = qr.r();
    let diag = r.diagonal().map(f64::abs);
    let (lo, hi) = (diag.min(), diag.max());
    if hi == 0.0 || lo <= RANK_TOLERANCE * hi {
        return Err(Error::SingularSystem {
            context: "sample basis least squares".into(),
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let qtc = qr.q().transpose() * c;
    let xi = r
        .solve_upper_triangular(&qtc)
        .ok_or_else(|| Error::SingularSystem {
            context: "sample basis least squares".into(),
            condition: f64::INFINITY,
        })?;
    CurveCoefficients::new(family, xi)
}

/// Residual statistics of a fit, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    /// Largest point-wise Euclidean residual.
    pub max: f64,
    pub rms: f64,
}

pub fn fit_residuals(
    samples: &SampleSet,
    family: &BasisFamily,
    xi: &CurveCoefficients,
) -> Result<ResidualStats> {
    let mut max: f64 = 0.0;
    let mut sum_sq = 0.0;
    for (&s, p) in samples.s_values.iter().zip(&samples.points) {
        let d = (super::evaluate_curve(family, xi, s)? - p).norm();
        max = max.max(d);
        sum_sq += d * d;
    }
    let rms = if samples.is_empty() {
        0.0
    } else {
        (sum_sq / samples.len() as f64).sqrt()
    };
    Ok(ResidualStats { max, rms })
}

/// Monomial coefficients of the cubic Bézier curve
/// `(1−s)³o₁ + 3s(1−s)²o₂ + 3s²(1−s)o₃ + s³o₄`, zero-padded up to `degree`.
pub fn bezier_to_polynomial(control: &[Point; 4], degree: usize) -> Result<CurveCoefficients> {
    if degree < 3 {
        return Err(Error::invalid(format!(
            "cubic Bézier needs polynomial degree ≥ 3, got {degree}"
        )));
    }
    let [o1, o2, o3, o4] = *control;
    let monomials = [
        o1,
        (o2 - o1) * 3.0,
        (o1 - o2 * 2.0 + o3) * 3.0,
        o4 - o1 + (o2 - o3) * 3.0,
    ];
    let family = BasisFamily::polynomial(degree);
    let mut xi = DVector::zeros(family.columns());
    for (k, m) in monomials.iter().enumerate() {
        xi[2 * k] = m.x;
        xi[2 * k + 1] = m.y;
    }
    CurveCoefficients::new(&family, xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::evaluate_curve;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn wavy_ring(s: f64) -> Point {
        let a = 2.0 * PI * s;
        Point::new(
            (8.0 + (2.0 * a).sin()) * a.cos() + 4.0,
            (8.0 + (2.0 * a).cos()) * a.sin() + 4.0,
        )
    }

    // Direct Bernstein evaluation, independent of the monomial expansion.
    fn bernstein(c: &[Point; 4], s: f64) -> Point {
        let t = 1.0 - s;
        c[0] * (t * t * t)
            + c[1] * (3.0 * s * t * t)
            + c[2] * (3.0 * s * s * t)
            + c[3] * (s * s * s)
    }

    fn paper_control_points() -> [Point; 4] {
        [
            Point::new(3.5, 3.0),
            Point::new(-0.5, -4.0),
            Point::new(-2.0, 6.0),
            Point::new(-2.0, -1.0),
        ]
    }

    #[test]
    fn exact_recovery_fourier() {
        let family = BasisFamily::fourier(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = CurveCoefficients::new(
            &family,
            DVector::from_fn(family.columns(), |_, _| rng.random_range(-5.0..5.0)),
        )
        .unwrap();
        let n = family.columns() + 5;
        let samples =
            SampleSet::from_fn(n, |s| evaluate_curve(&family, &truth, s).unwrap()).unwrap();
        let fitted = fit_coefficients(&samples, &family).unwrap();
        assert!((fitted.as_vector() - truth.as_vector()).amax() < 1e-8);
    }

    #[test]
    fn origin_samples_fit_to_zero() {
        let family = BasisFamily::fourier(3).unwrap();
        let samples = SampleSet::from_fn(40, |_| Point::zeros()).unwrap();
        let xi = fit_coefficients(&samples, &family).unwrap();
        assert!(xi.as_vector().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wavy_ring_lies_in_six_harmonic_span() {
        let family = BasisFamily::fourier(6).unwrap();
        let samples = SampleSet::from_fn(200, wavy_ring).unwrap();
        let xi = fit_coefficients(&samples, &family).unwrap();
        let res = fit_residuals(&samples, &family, &xi).unwrap();
        assert!(res.max < 1e-6, "residual {}", res.max);
        let start = evaluate_curve(&family, &xi, 0.0).unwrap();
        assert!((start - Point::new(12.0, 4.0)).amax() < 1e-9);
    }

    #[test]
    fn sample_count_must_exceed_columns() {
        let family = BasisFamily::fourier(2).unwrap();
        let samples = SampleSet::from_fn(family.columns(), wavy_ring).unwrap();
        assert!(matches!(
            fit_coefficients(&samples, &family),
            Err(Error::InsufficientSamples {
                samples: 10,
                required: 10
            })
        ));
    }

    #[test]
    fn repeated_parameters_are_singular() {
        let family = BasisFamily::fourier(2).unwrap();
        let s = vec![0.25; 20];
        let pts = vec![Point::new(1.0, 2.0); 20];
        let samples = SampleSet::new(s, pts).unwrap();
        assert!(matches!(
            fit_coefficients(&samples, &family),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn degenerate_bezier_is_constant() {
        let p = Point::new(1.5, -2.0);
        let xi = bezier_to_polynomial(&[p; 4], 5).unwrap();
        let v = xi.as_vector();
        assert_eq!((v[0], v[1]), (1.5, -2.0));
        assert!(v.iter().skip(2).all(|&c| c == 0.0));
    }

    #[test]
    fn bezier_endpoints_hit_control_points() {
        let c = paper_control_points();
        let family = BasisFamily::polynomial(6);
        let xi = bezier_to_polynomial(&c, 6).unwrap();
        assert_eq!(xi.len(), 14);
        assert_eq!((xi.as_vector()[0], xi.as_vector()[1]), (3.5, 3.0));
        let start = evaluate_curve(&family, &xi, 0.0).unwrap();
        let end = evaluate_curve(&family, &xi, 1.0).unwrap();
        assert!((start - c[0]).amax() < 1e-14);
        assert!((end - c[3]).amax() < 1e-14);
        assert!(xi.as_vector().iter().skip(8).all(|&v| v == 0.0));
    }

    #[test]
    fn bezier_rejects_low_degree() {
        assert!(bezier_to_polynomial(&paper_control_points(), 2).is_err());
    }

    #[test]
    fn bezier_matches_bernstein_at_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c: [Point; 4] = std::array::from_fn(|_| {
            Point::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))
        });
        let family = BasisFamily::polynomial(3);
        let xi = bezier_to_polynomial(&c, 3).unwrap();
        for _ in 0..100 {
            let s: f64 = rng.random_range(0.0..=1.0);
            let p = evaluate_curve(&family, &xi, s).unwrap();
            assert!((p - bernstein(&c, s)).amax() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn fit_recovers_in_span_polynomials(
            degree in 0usize..6,
            coeffs in proptest::collection::vec(-3.0f64..3.0, 12),
        ) {
            let family = BasisFamily::polynomial(degree);
            let truth = CurveCoefficients::new(
                &family,
                DVector::from_column_slice(&coeffs[..family.columns()]),
            ).unwrap();
            let samples = SampleSet::from_fn(family.columns() + 8, |s| {
                evaluate_curve(&family, &truth, s).unwrap()
            }).unwrap();
            let fitted = fit_coefficients(&samples, &family).unwrap();
            let res = fit_residuals(&samples, &family, &fitted).unwrap();
            prop_assert!(res.max <= 1e-8);
        }

        #[test]
        fn bezier_endpoints_exact(
            pts in proptest::collection::vec(-20.0f64..20.0, 8),
            degree in 3usize..9,
        ) {
            let c: [Point; 4] = std::array::from_fn(|k| Point::new(pts[2 * k], pts[2 * k + 1]));
            let family = BasisFamily::polynomial(degree);
            let xi = bezier_to_polynomial(&c, degree).unwrap();
            let start = evaluate_curve(&family, &xi, 0.0).unwrap();
            let end = evaluate_curve(&family, &xi, 1.0).unwrap();
            prop_assert!((start - c[0]).amax() <= 1e-14 * (1.0 + c[0].amax()));
            prop_assert!((end - c[3]).amax() <= 1e-14 * 64.0);
        }
    }
}
