//! Physical constants, geometry, the free-space dyadic Green function and
//! surface quadrature on the transmit aperture.

use std::f64::consts::PI;
use std::ops::{AddAssign, Mul};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use num_traits::Zero;

use crate::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type CVec3 = Vector3<Complex64>;
pub type CMat3 = Matrix3<Complex64>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Receivers closer than this fraction of a wavelength to any source point
/// are rejected.
pub const MIN_DISTANCE_WAVELENGTHS: f64 = 0.01;

/// Angular wavenumber `2πf/c` in rad/m.
pub fn wavenumber(frequency_hz: f64, speed: f64) -> Result<f64> {
    if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "frequency_hz must be positive and finite, got {frequency_hz}"
        )));
    }
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "speed of light must be positive, got {speed}"
        )));
    }
    Ok(2.0 * PI * frequency_hz / speed)
}

/// Homogeneous propagation medium at a single carrier frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    pub frequency_hz: f64,
    pub wavenumber: f64,
    pub impedance_ohm: f64,
    pub speed_of_light: f64,
}

impl Medium {
    pub fn new(frequency_hz: f64, impedance_ohm: f64) -> Result<Self> {
        Self::with_speed(frequency_hz, impedance_ohm, SPEED_OF_LIGHT)
    }

    /// Medium with a non-standard propagation speed. Only tests need this.
    pub fn with_speed(frequency_hz: f64, impedance_ohm: f64, speed: f64) -> Result<Self> {
        let wavenumber = wavenumber(frequency_hz, speed)?;
        if !(impedance_ohm > 0.0) || !impedance_ohm.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "impedance_ohm must be positive, got {impedance_ohm}"
            )));
        }
        Ok(Self {
            frequency_hz,
            wavenumber,
            impedance_ohm,
            speed_of_light: speed,
        })
    }

    pub fn wavelength(&self) -> f64 {
        self.speed_of_light / self.frequency_hz
    }

    pub fn min_distance(&self) -> f64 {
        MIN_DISTANCE_WAVELENGTHS * self.wavelength()
    }
}

fn min_distance_for(kappa: f64) -> f64 {
    if kappa > 0.0 {
        MIN_DISTANCE_WAVELENGTHS * 2.0 * PI / kappa
    } else {
        0.0
    }
}

fn checked_separation(r: &Point3, s: &Point3, min_distance: f64) -> Result<(Vector3<f64>, f64)> {
    let d = r - s;
    let distance = d.norm();
    if !(distance > 0.0) || distance < min_distance {
        return Err(Error::Singularity { distance, min_distance });
    }
    Ok((d, distance))
}

/// Scalar free-space kernel `e^{+jκR}/R`.
pub fn scalar_green(r: &Point3, s: &Point3, kappa: f64) -> Result<Complex64> {
    let (_, distance) = checked_separation(r, s, min_distance_for(kappa))?;
    Ok(Complex64::from_polar(1.0 / distance, kappa * distance))
}

/// Free-space dyadic Green function mapping a current element at `s` to the
/// electric field at `r`.
///
/// Closed form of `(jκZ0/4π)(I + ∇∇/κ²) e^{jκR}/R`:
///
/// ```text
/// G = (jκZ0/4π) (e^{jκR}/R) [ a I − b R̂R̂ᵀ ],  x = 1/(κR)
/// a = 1 + jx − x²,  b = 1 + 3jx − 3x²
/// ```
pub fn green_dyadic(r: &Point3, s: &Point3, medium: &Medium) -> Result<CMat3> {
    let (d, distance) = checked_separation(r, s, medium.min_distance())?;
    let kappa = medium.wavenumber;
    let unit = d / distance;
    let x = 1.0 / (kappa * distance);
    let a = Complex64::new(1.0 - x * x, x);
    let b = Complex64::new(1.0 - 3.0 * x * x, 3.0 * x);
    let prefactor = Complex64::new(0.0, kappa * medium.impedance_ohm / (4.0 * PI))
        * Complex64::from_polar(1.0 / distance, kappa * distance);

    let mut g = CMat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let identity = if i == j { a } else { Complex64::zero() };
            g[(i, j)] = prefactor * (identity - b * (unit[i] * unit[j]));
        }
    }
    Ok(g)
}

/// Aperture extents along each axis, metres. A zero extent marks an axis
/// the aperture does not span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extents {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
}

/// Quadrature nodes and weights on a planar rectangular aperture centred at
/// the origin in the xy-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureGrid {
    pub nodes: Vec<Point3>,
    pub weights: Vec<f64>,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub area: f64,
    /// Nodes per axis.
    pub side: usize,
}

impl ApertureGrid {
    /// Uniform midpoint rule with `√samples × √samples` cells. Nodes are
    /// ordered with x as the outer loop and y as the inner loop.
    pub fn midpoint(lx: f64, ly: f64, samples: usize) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "aperture extents must be positive, got lx={lx}, ly={ly}"
            )));
        }
        let side = (samples as f64).sqrt().round() as usize;
        if samples == 0 || side * side != samples {
            return Err(Error::InvalidConfig(format!(
                "quadrature_samples must be a positive perfect square, got {samples}"
            )));
        }
        let area = lx * ly;
        let weight = area / samples as f64;
        let coord = |l: f64, i: usize| -0.5 * l + (i as f64 + 0.5) * l / side as f64;
        let nodes = (0..side)
            .flat_map(|ix| (0..side).map(move |iy| Point3::new(coord(lx, ix), coord(ly, iy), 0.0)))
            .collect();
        Ok(Self {
            nodes,
            weights: vec![weight; samples],
            lx,
            ly,
            lz: 0.0,
            area,
            side,
        })
    }

    pub fn extents(&self) -> Extents {
        Extents {
            lx: self.lx,
            ly: self.ly,
            lz: self.lz,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Shortest distance from `p` to the aperture rectangle.
    pub fn distance_to(&self, p: &Point3) -> f64 {
        let cx = p.x.clamp(-0.5 * self.lx, 0.5 * self.lx);
        let cy = p.y.clamp(-0.5 * self.ly, 0.5 * self.ly);
        (p - Point3::new(cx, cy, 0.0)).norm()
    }
}

/// Weighted sum `Σ_i weight_i · sample_i`, accumulated sequentially in node
/// order.
pub fn integrate_surface<T>(samples: &[T], grid: &ApertureGrid) -> Result<T>
where
    T: Zero + Clone + AddAssign + Mul<Complex64, Output = T>,
{
    if samples.len() != grid.len() {
        return Err(Error::Contract(format!(
            "integrand has {} samples, grid has {} nodes",
            samples.len(),
            grid.len()
        )));
    }
    let mut acc = T::zero();
    for (sample, &w) in samples.iter().zip(&grid.weights) {
        acc += sample.clone() * Complex64::from(w);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn medium_2g4() -> Medium {
        Medium::new(2.4e9, 376.73).unwrap()
    }

    #[test]
    fn wavenumber_examples() {
        let c = SPEED_OF_LIGHT;
        assert_relative_eq!(wavenumber(c / (2.0 * PI), c).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            wavenumber(2.4e9, c).unwrap(),
            50.300_280_526_840_36,
            max_relative = 1e-14
        );
        let k1 = wavenumber(1.3e9, c).unwrap();
        let k2 = wavenumber(2.6e9, c).unwrap();
        assert_eq!(k2, 2.0 * k1);
        assert!(matches!(wavenumber(0.0, c), Err(Error::InvalidConfig(_))));
        assert!(matches!(wavenumber(-1.0, c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn scalar_green_examples() {
        let o = Point3::origin();
        let g = scalar_green(&Point3::new(0.0, 0.0, 2.0), &o, 0.0).unwrap();
        assert_eq!(g, Complex64::new(0.5, 0.0));

        for &kappa in &[0.3, 7.0, 50.3] {
            let r = Point3::new(1.0, -2.0, 3.0);
            let g = scalar_green(&r, &o, kappa).unwrap();
            assert_relative_eq!(g.norm(), 1.0 / r.coords.norm(), max_relative = 1e-15);
        }

        // κR = π
        let g = scalar_green(&Point3::new(PI, 0.0, 0.0), &o, 1.0).unwrap();
        assert_relative_eq!(g.arg().abs(), PI, epsilon = 1e-12);

        assert!(matches!(scalar_green(&o, &o, 1.0), Err(Error::Singularity { .. })));
    }

    #[test]
    fn dyadic_translation_invariance() {
        let m = medium_2g4();
        let r = Point3::new(1.0, 1.0, 30.0);
        let s = Point3::new(0.1, -0.2, 0.0);
        let g = green_dyadic(&r, &s, &m).unwrap();
        for t in [Vector3::new(3.0, -1.0, 0.5), Vector3::new(-0.25, 0.125, 7.0)] {
            let shifted = green_dyadic(&(r + t), &(s + t), &m).unwrap();
            assert!((shifted - g).norm() <= 1e-12 * g.norm() * 1e3);
        }
    }

    #[test]
    fn dyadic_rejects_close_points() {
        let m = medium_2g4();
        let s = Point3::origin();
        let r = Point3::new(0.5 * m.min_distance(), 0.0, 0.0);
        assert!(matches!(green_dyadic(&r, &s, &m), Err(Error::Singularity { .. })));
        let r = Point3::new(2.0 * m.min_distance(), 0.0, 0.0);
        assert!(green_dyadic(&r, &s, &m).is_ok());
    }

    #[test]
    fn dyadic_far_field_radial_decay() {
        let m = Medium::with_speed(1.0, 376.73, 2.0 * PI).unwrap();
        assert_relative_eq!(m.wavenumber, 1.0);
        let dir = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        let ratio = |kr: f64| {
            let r = Point3::from(dir * kr);
            let g = green_dyadic(&r, &Point3::origin(), &m).unwrap();
            let radial = g * dir.map(Complex64::from);
            radial.norm() / g.norm()
        };
        let samples: Vec<(f64, f64)> = [1e2, 1e3, 1e4]
            .iter()
            .map(|&kr| (f64::log10(kr), ratio(kr).log10()))
            .collect();
        for pair in samples.windows(2) {
            let slope = (pair[1].1 - pair[0].1) / (pair[1].0 - pair[0].0);
            assert!((slope + 1.0).abs() <= 0.05, "slope {slope}");
        }
        assert!(ratio(1e4) < 1e-3);
    }

    #[test]
    fn midpoint_grid_layout() {
        let g = ApertureGrid::midpoint(0.5, 0.5, 1024).unwrap();
        assert_eq!(g.side, 32);
        assert_eq!(g.len(), 1024);
        for (p, &w) in g.nodes.iter().zip(&g.weights) {
            assert_eq!(w, 0.25 / 1024.0);
            assert!(p.x.abs() <= 0.25 && p.y.abs() <= 0.25 && p.z == 0.0);
        }
        let total: f64 = g.weights.iter().sum();
        assert_relative_eq!(total, g.area, max_relative = 1e-12);

        let single = ApertureGrid::midpoint(0.3, 0.7, 1).unwrap();
        assert_eq!(single.nodes, vec![Point3::origin()]);
        assert_relative_eq!(single.weights[0], 0.21, max_relative = 1e-15);

        assert!(matches!(
            ApertureGrid::midpoint(0.5, 0.5, 1000),
            Err(Error::InvalidConfig(_))
        ));
        assert!(ApertureGrid::midpoint(0.0, 0.5, 16).is_err());
    }

    #[test]
    fn integrate_constant_and_linearity() {
        let g = ApertureGrid::midpoint(0.5, 0.5, 64).unwrap();
        let c = CVec3::new(
            Complex64::new(1.0, 2.0),
            Complex64::new(-3.0, 0.5),
            Complex64::new(0.0, 1.0),
        );
        let got = integrate_surface(&vec![c; g.len()], &g).unwrap();
        assert!((got - c * Complex64::from(0.25)).norm() < 1e-15);

        let f: Vec<Complex64> = g.nodes.iter().map(|p| Complex64::new(p.x, p.y * p.y)).collect();
        let h: Vec<Complex64> = g.nodes.iter().map(|p| Complex64::from_polar(1.0, p.x)).collect();
        let (a, b) = (Complex64::new(0.3, -1.0), Complex64::new(2.0, 0.25));
        let mix: Vec<Complex64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
        let lhs = integrate_surface(&mix, &g).unwrap();
        let rhs = a * integrate_surface(&f, &g).unwrap() + b * integrate_surface(&h, &g).unwrap();
        assert!((lhs - rhs).norm() < 1e-15);

        assert!(matches!(integrate_surface(&f[..10], &g), Err(Error::Contract(_))));
    }

    #[test]
    fn distance_to_aperture() {
        let g = ApertureGrid::midpoint(0.5, 0.5, 4).unwrap();
        assert_eq!(g.distance_to(&Point3::new(0.0, 0.0, 30.0)), 30.0);
        assert_relative_eq!(g.distance_to(&Point3::new(1.25, 0.0, 0.0)), 1.0);
    }
}
