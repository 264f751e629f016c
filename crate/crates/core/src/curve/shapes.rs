//! Analytic curve generators used to produce samples for fitting.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Point;

/// One term `cos_coeff·cos(2πks) + sin_coeff·sin(2πks)` of a radial profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialTerm {
    pub harmonic: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl RadialTerm {
    pub fn new(harmonic: u32, cos: f64, sin: f64) -> Self {
        Self { harmonic, cos, sin }
    }

    fn eval(&self, s: f64) -> f64 {
        let (sn, cs) = (2.0 * PI * self.harmonic as f64 * s).sin_cos();
        self.cos * cs + self.sin * sn
    }
}

/// Closed curve `(ρx(s)·cos 2πs + cx, ρy(s)·sin 2πs + cy)` whose radial
/// profiles are short trigonometric sums.
///
/// Covers flowers, cardioids and other star-shaped closed curves. With radial
/// harmonics up to `k`, the curve has Fourier content up to harmonic `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatedRing {
    pub center: [f64; 2],
    pub radius_x: Vec<RadialTerm>,
    pub radius_y: Vec<RadialTerm>,
}

impl ModulatedRing {
    pub fn point(&self, s: f64) -> Point {
        let rx: f64 = self.radius_x.iter().map(|t| t.eval(s)).sum();
        let ry: f64 = self.radius_y.iter().map(|t| t.eval(s)).sum();
        let (sn, cs) = (2.0 * PI * s).sin_cos();
        Point::new(rx * cs + self.center[0], ry * sn + self.center[1])
    }

    /// Highest Fourier harmonic present in the curve.
    pub fn max_harmonic(&self) -> u32 {
        self.radius_x
            .iter()
            .chain(&self.radius_y)
            .filter(|t| t.cos != 0.0 || t.sin != 0.0)
            .map(|t| t.harmonic + 1)
            .max()
            .unwrap_or(1)
    }
}

/// Cubic Bézier point from its Bernstein form.
pub fn bernstein_point(control: &[Point; 4], s: f64) -> Point {
    let t = 1.0 - s;
    control[0] * (t * t * t)
        + control[1] * (3.0 * s * t * t)
        + control[2] * (3.0 * s * s * t)
        + control[3] * (s * s * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_matches_closed_form() {
        // (8 + sin 4πs) cos 2πs + 4, (8 + cos 4πs) sin 2πs + 4
        let ring = ModulatedRing {
            center: [4.0, 4.0],
            radius_x: vec![RadialTerm::new(0, 8.0, 0.0), RadialTerm::new(2, 0.0, 1.0)],
            radius_y: vec![RadialTerm::new(0, 8.0, 0.0), RadialTerm::new(2, 1.0, 0.0)],
        };
        for k in 0..50 {
            let s = k as f64 / 50.0;
            let a = 2.0 * PI * s;
            let expected = Point::new(
                (8.0 + (2.0 * a).sin()) * a.cos() + 4.0,
                (8.0 + (2.0 * a).cos()) * a.sin() + 4.0,
            );
            assert!((ring.point(s) - expected).amax() < 1e-12);
        }
        assert_eq!(ring.point(0.0), Point::new(12.0, 4.0));
        assert_eq!(ring.max_harmonic(), 3);
    }

    #[test]
    fn bernstein_endpoints() {
        let c = [
            Point::new(3.5, 3.0),
            Point::new(-0.5, -4.0),
            Point::new(-2.0, 6.0),
            Point::new(-2.0, -1.0),
        ];
        assert_eq!(bernstein_point(&c, 0.0), c[0]);
        assert_eq!(bernstein_point(&c, 1.0), c[3]);
    }
}
