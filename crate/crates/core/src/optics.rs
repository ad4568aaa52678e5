//! Paraxial Gaussian beam propagation (ABCD / complex beam parameter),
//! beam radius and intensity laws, and filament absorbed-power geometry.
//!
//! Lengths are SI metres unless a name says otherwise (`_mm`).

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{domain, Error, Result};

pub const FIBER_WAVELENGTH: f64 = 1070e-9;
/// Collimated beam diameter leaving the fiber collimator.
pub const FIBER_BEAM_DIAMETER: f64 = 8.64e-3;
pub const EXPANDER_NEGATIVE_FOCAL: f64 = -50e-3;
pub const EXPANDER_POSITIVE_FOCAL: f64 = 250e-3;
pub const PARABOLIC_REFLECTED_FOCAL: f64 = 101.6e-3;
/// Waist radius at the laser focus of the forming head.
pub const FOCUS_WAIST_RADIUS: f64 = 1.603e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBeam {
    pub wavelength: f64,
    pub waist_radius: f64,
    /// Axial position of the waist relative to the local reference plane.
    pub waist_location: f64,
}

impl GaussianBeam {
    pub fn new(wavelength: f64, waist_radius: f64, waist_location: f64) -> Result<Self> {
        if !(wavelength > 0.0) || !(waist_radius > 0.0) || !waist_location.is_finite() {
            return Err(domain("beam needs positive wavelength and waist radius"));
        }
        Ok(Self {
            wavelength,
            waist_radius,
            waist_location,
        })
    }

    /// Collimated beam with its waist on the reference plane.
    pub fn collimated(wavelength: f64, diameter: f64) -> Result<Self> {
        Self::new(wavelength, diameter / 2.0, 0.0)
    }

    /// The focused beam of the forming head.
    pub fn dgf_focus() -> Self {
        Self {
            wavelength: FIBER_WAVELENGTH,
            waist_radius: FOCUS_WAIST_RADIUS,
            waist_location: 0.0,
        }
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist_radius * self.waist_radius / self.wavelength
    }

    /// Radius at axial distance `z` from the waist.
    pub fn radius_at(&self, z: f64) -> f64 {
        let ratio = z / self.rayleigh_range();
        self.waist_radius * (1.0 + ratio * ratio).sqrt()
    }

    /// Complex beam parameter on the reference plane.
    pub fn q(&self) -> Complex64 {
        Complex64::new(-self.waist_location, self.rayleigh_range())
    }

    fn from_q(q: Complex64, wavelength: f64) -> Result<Self> {
        if !(q.im > 0.0) || !q.re.is_finite() {
            return Err(Error::PropagationSingularity);
        }
        let waist_radius = (q.im * wavelength / PI).sqrt();
        Self::new(wavelength, waist_radius, -q.re)
    }
}

pub fn beam_radius(beam: &GaussianBeam, z: f64) -> f64 {
    beam.radius_at(z)
}

/// 2x2 ray transfer matrix `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl RayMatrix {
    pub const IDENTITY: RayMatrix = RayMatrix {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    /// `self * rhs`: apply `rhs` first.
    pub fn then_after(&self, rhs: &RayMatrix) -> RayMatrix {
        RayMatrix {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn transform(&self, q: Complex64) -> Result<Complex64> {
        let den = q * self.c + self.d;
        if den.norm() == 0.0 || !den.norm().is_finite() {
            return Err(Error::PropagationSingularity);
        }
        Ok((q * self.a + self.b) / den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpticalElement {
    FreeSpace {
        length: f64,
    },
    ThinLens {
        focal_length: f64,
    },
    /// Off-axis parabola, treated as a thin lens of its reflected focal length.
    ParabolicMirror {
        reflected_focal_length: f64,
    },
}

impl OpticalElement {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OpticalElement::FreeSpace { length } if !(length >= 0.0) => {
                Err(domain("free-space length must be >= 0"))
            }
            OpticalElement::ThinLens { focal_length: f }
            | OpticalElement::ParabolicMirror {
                reflected_focal_length: f,
            } if f == 0.0 || !f.is_finite() => {
                Err(domain("focal length must be finite and nonzero"))
            }
            _ => Ok(()),
        }
    }

    pub fn matrix(&self) -> RayMatrix {
        match *self {
            OpticalElement::FreeSpace { length } => RayMatrix {
                a: 1.0,
                b: length,
                c: 0.0,
                d: 1.0,
            },
            OpticalElement::ThinLens { focal_length: f }
            | OpticalElement::ParabolicMirror {
                reflected_focal_length: f,
            } => RayMatrix {
                a: 1.0,
                b: 0.0,
                c: -1.0 / f,
                d: 1.0,
            },
        }
    }
}

/// Composite matrix of a chain, first element applied first.
pub fn chain_matrix(chain: &[OpticalElement]) -> RayMatrix {
    chain
        .iter()
        .fold(RayMatrix::IDENTITY, |acc, el| el.matrix().then_after(&acc))
}

/// Propagates `beam` (waist given relative to the chain entrance) through
/// the chain. The returned waist location is relative to the chain exit.
pub fn propagate(beam: &GaussianBeam, chain: &[OpticalElement]) -> Result<GaussianBeam> {
    for el in chain {
        el.validate()?;
    }
    let q = chain_matrix(chain).transform(beam.q())?;
    GaussianBeam::from_q(q, beam.wavelength)
}

/// Galilean expander: diverging lens, `f1 + f2` spacing, collimating lens.
pub fn expander_chain() -> Vec<OpticalElement> {
    vec![
        OpticalElement::ThinLens {
            focal_length: EXPANDER_NEGATIVE_FOCAL,
        },
        OpticalElement::FreeSpace {
            length: EXPANDER_NEGATIVE_FOCAL + EXPANDER_POSITIVE_FOCAL,
        },
        OpticalElement::ThinLens {
            focal_length: EXPANDER_POSITIVE_FOCAL,
        },
    ]
}

/// Expander, a transfer leg to the parabola, and the parabola itself.
pub fn forming_head_chain(transfer_length: f64) -> Vec<OpticalElement> {
    let mut chain = expander_chain();
    chain.push(OpticalElement::FreeSpace {
        length: transfer_length,
    });
    chain.push(OpticalElement::ParabolicMirror {
        reflected_focal_length: PARABOLIC_REFLECTED_FOCAL,
    });
    chain
}

pub fn fiber_beam() -> GaussianBeam {
    GaussianBeam {
        wavelength: FIBER_WAVELENGTH,
        waist_radius: FIBER_BEAM_DIAMETER / 2.0,
        waist_location: 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntensityQuery {
    /// Laser power (W).
    pub power: f64,
    pub radial_offset: f64,
    /// Axial distance from the focus.
    pub axial_distance: f64,
}

/// Gaussian intensity in W/m^2.
pub fn intensity(q: &IntensityQuery, beam: &GaussianBeam) -> f64 {
    let w = beam.radius_at(q.axial_distance);
    let w2 = w * w;
    2.0 * q.power / (PI * w2) * (-2.0 * q.radial_offset * q.radial_offset / w2).exp()
}

const DISK_TOLERANCE: f64 = 1e-5;
const DISK_MAX_LEVEL: u32 = 9;

/// Power (W) falling inside a disk of `disk_radius` whose centre sits
/// `lateral_offset` from the beam axis, at axial distance `z` from focus.
///
/// Polar midpoint rule about the disk centre, doubling both resolutions
/// until the relative change drops below 1e-5.
pub fn power_in_disk(
    beam: &GaussianBeam,
    power: f64,
    z: f64,
    disk_radius: f64,
    lateral_offset: f64,
) -> Result<f64> {
    if !(disk_radius > 0.0) {
        return Err(domain("disk radius must be positive"));
    }
    if power == 0.0 {
        return Ok(0.0);
    }
    let w = beam.radius_at(z);
    let inv_w2 = 1.0 / (w * w);
    let peak = 2.0 * power * inv_w2 / PI;
    let offset = lateral_offset.abs();

    let integrate = |nr: usize, nt: usize| -> f64 {
        let dr = disk_radius / nr as f64;
        let dt = 2.0 * PI / nt as f64;
        let angles: Vec<f64> = (0..nt).map(|j| ((j as f64 + 0.5) * dt).cos()).collect();
        let mut sum = 0.0;
        for i in 0..nr {
            let r = (i as f64 + 0.5) * dr;
            let base = r * r + offset * offset;
            let ring: f64 = angles
                .iter()
                .map(|cos| (-2.0 * (base + 2.0 * r * offset * cos) * inv_w2).exp())
                .sum();
            sum += ring * r;
        }
        peak * sum * dr * dt
    };

    let mut n = 16usize;
    let mut prev = integrate(n, n);
    for _ in 0..DISK_MAX_LEVEL {
        n *= 2;
        let next = integrate(n, n);
        let change = (next - prev).abs();
        if change <= DISK_TOLERANCE * next.abs() || next.abs() < 1e-300 {
            // midpoint error falls by 4 per doubling
            return Ok(next + (next - prev) / 3.0);
        }
        prev = next;
    }
    Ok(prev)
}

/// Fraction of the beam power absorbed by a filament of `diameter`
/// displaced laterally by `offset`, relative to the centred filament.
pub fn relative_absorption(beam: &GaussianBeam, z: f64, diameter: f64, offset: f64) -> Result<f64> {
    let centred = power_in_disk(beam, 1.0, z, diameter / 2.0, 0.0)?;
    Ok(power_in_disk(beam, 1.0, z, diameter / 2.0, offset)? / centred)
}

/// Lateral filament offset produced by bending through `angle` (rad) over
/// an unsupported `free_length`. A modelling convenience, not a measured law.
pub fn lateral_offset_from_bend(angle: f64, free_length: f64) -> f64 {
    free_length * angle.sin()
}

/// Normalized absorbed power in percent versus bending angle.
pub fn absorption_curve(
    beam: &GaussianBeam,
    z: f64,
    diameter: f64,
    free_length: f64,
    angles: &[f64],
) -> Result<Vec<f64>> {
    angles
        .iter()
        .map(|&a| {
            Ok(100.0
                * relative_absorption(beam, z, diameter, lateral_offset_from_bend(a, free_length))?)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisRange {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| self.min + step * i as f64)
            .collect()
    }

    fn validate(&self, what: &'static str) -> Result<()> {
        if self.count == 0 || !(self.max >= self.min) || (self.count > 1 && self.max == self.min) {
            return Err(Error::EmptyRange(what));
        }
        Ok(())
    }
}

/// Intensity sampled on an x-z grid. Coordinates in mm, values in W/mm^2,
/// stored row-major with z as the outer index.
#[derive(Clone, Debug)]
pub struct FieldGrid {
    pub x_mm: Vec<f64>,
    pub z_mm: Vec<f64>,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn get(&self, ix: usize, iz: usize) -> f64 {
        self.values[iz * self.x_mm.len() + ix]
    }

    /// log10 of the values clamped to `[lo, hi]`, for display only.
    pub fn display_log10(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| v.clamp(lo, hi).log10())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_mm", "z_mm", "intensity_W_per_mm2"])?;
        for (iz, z) in self.z_mm.iter().enumerate() {
            for (ix, x) in self.x_mm.iter().enumerate() {
                w.write_record([x.to_string(), z.to_string(), self.get(ix, iz).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn field_grid(
    beam: &GaussianBeam,
    power: f64,
    x_mm: AxisRange,
    z_mm: AxisRange,
) -> Result<FieldGrid> {
    x_mm.validate("x range")?;
    z_mm.validate("z range")?;
    let xs = x_mm.points();
    let zs = z_mm.points();
    let mut values = Vec::with_capacity(xs.len() * zs.len());
    for z in &zs {
        for x in &xs {
            let q = IntensityQuery {
                power,
                radial_offset: x * 1e-3,
                axial_distance: z * 1e-3,
            };
            values.push(intensity(&q, beam) * 1e-6);
        }
    }
    Ok(FieldGrid {
        x_mm: xs,
        z_mm: zs,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_chain_is_identity() {
        let b = GaussianBeam::new(1e-6, 1e-3, 0.25).unwrap();
        let out = propagate(&b, &[]).unwrap();
        assert_relative_eq!(out.waist_radius, b.waist_radius, max_relative = 1e-12);
        assert_relative_eq!(out.waist_location, b.waist_location, max_relative = 1e-12);
    }

    #[test]
    fn free_space_moves_reference_plane() {
        let b = GaussianBeam::new(1e-6, 1e-4, 0.0).unwrap();
        let out = propagate(&b, &[OpticalElement::FreeSpace { length: 0.3 }]).unwrap();
        assert_relative_eq!(out.waist_location, -0.3, max_relative = 1e-12);
        assert_relative_eq!(out.waist_radius, 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn expander_magnifies_five_times() {
        let out = propagate(&fiber_beam(), &expander_chain()).unwrap();
        let d = 2.0 * out.radius_at(out.waist_location.abs());
        assert!((d - 43.17e-3).abs() / 43.17e-3 < 0.005, "diameter {d}");
        // collimated: Rayleigh range in the tens of metres
        assert!(out.rayleigh_range() > 100.0);
    }

    #[test]
    fn focusing_matches_far_field_formula() {
        let input = GaussianBeam::collimated(FIBER_WAVELENGTH, 43.17e-3).unwrap();
        let f = PARABOLIC_REFLECTED_FOCAL;
        let out = propagate(
            &input,
            &[OpticalElement::ParabolicMirror {
                reflected_focal_length: f,
            }],
        )
        .unwrap();
        let analytic = FIBER_WAVELENGTH * f / (PI * 43.17e-3 / 2.0);
        assert!((out.waist_radius - analytic).abs() / analytic < 0.005);
        assert!((out.waist_radius - 1.603e-6).abs() / 1.603e-6 < 0.005);
        assert!((out.rayleigh_range() - 7.544e-6).abs() / 7.544e-6 < 0.005);
        assert_relative_eq!(out.waist_location, f, max_relative = 1e-6);
    }

    #[test]
    fn bad_elements_rejected() {
        let b = fiber_beam();
        assert!(propagate(&b, &[OpticalElement::ThinLens { focal_length: 0.0 }]).is_err());
        assert!(propagate(&b, &[OpticalElement::FreeSpace { length: -1.0 }]).is_err());
    }

    #[test]
    fn singular_matrix_detected() {
        let m = RayMatrix {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
        };
        assert!(matches!(
            m.transform(Complex64::new(0.0, 0.0)),
            Err(Error::PropagationSingularity)
        ));
    }

    #[test]
    fn radius_law() {
        let b = GaussianBeam::dgf_focus();
        assert_eq!(b.radius_at(0.0), b.waist_radius);
        assert_relative_eq!(
            b.radius_at(b.rayleigh_range()),
            b.waist_radius * 2f64.sqrt(),
            max_relative = 1e-12
        );
        assert!((b.radius_at(4e-3) - 0.85e-3).abs() / 0.85e-3 < 0.01);
        assert!((b.radius_at(9e-3) - 1.91e-3).abs() / 1.91e-3 < 0.01);
        assert_eq!(b.radius_at(-3e-3), b.radius_at(3e-3));
    }

    #[test]
    fn on_axis_intensity() {
        let b = GaussianBeam::dgf_focus();
        let q = IntensityQuery {
            power: 40.0,
            radial_offset: 0.0,
            axial_distance: 5e-3,
        };
        let w = b.radius_at(5e-3);
        assert_relative_eq!(intensity(&q, &b), 80.0 / (PI * w * w), max_relative = 1e-14);
        let focus = IntensityQuery {
            power: 1.0,
            radial_offset: 0.0,
            axial_distance: 0.0,
        };
        let peak = intensity(&focus, &b);
        assert!((peak - 2.48e11).abs() / 2.48e11 < 0.01);
        // ~1e8 W/mm^2 at operating powers
        let at_40 = peak * 40.0 * 1e-6;
        assert!(at_40 > 1e6 && at_40 < 1e9);
    }

    #[test]
    fn disk_power_centred_closed_form() {
        let b = GaussianBeam::dgf_focus();
        let z = 4e-3;
        let w = b.radius_at(z);
        let r = 0.5e-3;
        let got = power_in_disk(&b, 1.0, z, r, 0.0).unwrap();
        let expect = 1.0 - (-2.0 * r * r / (w * w)).exp();
        assert!((got - expect).abs() / expect < 1e-4, "{got} vs {expect}");
        assert!((expect - 0.4994).abs() < 5e-4);
    }

    #[test]
    fn disk_power_limits() {
        let b = GaussianBeam::dgf_focus();
        let far = power_in_disk(&b, 10.0, 4e-3, 0.5e-3, 50e-3).unwrap();
        assert!(far.abs() < 1e-12);
        let tight = power_in_disk(&b, 10.0, 0.2e-3, 0.5e-3, 0.0).unwrap();
        assert!((tight - 10.0).abs() < 1e-3, "{tight}");
        assert!(power_in_disk(&b, 1.0, 4e-3, 0.0, 0.0).is_err());
    }

    #[test]
    fn disk_power_drops_with_offset() {
        let b = GaussianBeam::dgf_focus();
        let mut last = f64::INFINITY;
        for k in 0..12 {
            let p = power_in_disk(&b, 1.0, 4e-3, 0.5e-3, k as f64 * 0.15e-3).unwrap();
            assert!(p <= last + 1e-9);
            last = p;
        }
    }

    #[test]
    fn field_grid_shape_and_symmetry() {
        let b = GaussianBeam::dgf_focus();
        let g = field_grid(
            &b,
            40.0,
            AxisRange::new(-2.0, 2.0, 41),
            AxisRange::new(3.0, 9.0, 7),
        )
        .unwrap();
        assert_eq!(g.values.len(), 41 * 7);
        for iz in 0..7 {
            for ix in 0..20 {
                assert_relative_eq!(g.get(ix, iz), g.get(40 - ix, iz), max_relative = 1e-12);
            }
        }
        let (imax, _) =
            g.values.iter().enumerate().fold(
                (0, f64::MIN),
                |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc },
            );
        assert_eq!(imax / 41, 0, "max at smallest |z|");

        let single = field_grid(
            &b,
            40.0,
            AxisRange::new(0.0, 0.0, 1),
            AxisRange::new(7.0, 7.0, 1),
        )
        .unwrap();
        let q = IntensityQuery {
            power: 40.0,
            radial_offset: 0.0,
            axial_distance: 7e-3,
        };
        assert_relative_eq!(
            single.values[0],
            intensity(&q, &b) * 1e-6,
            max_relative = 1e-14
        );

        assert!(matches!(
            field_grid(
                &b,
                1.0,
                AxisRange::new(0.0, 1.0, 0),
                AxisRange::new(0.0, 1.0, 3)
            ),
            Err(Error::EmptyRange(_))
        ));
    }

    #[test]
    fn display_clamp_leaves_raw_values() {
        let b = GaussianBeam::dgf_focus();
        let g = field_grid(
            &b,
            40.0,
            AxisRange::new(-1.0, 1.0, 5),
            AxisRange::new(0.01, 0.01, 1),
        )
        .unwrap();
        let raw = g.values.clone();
        let shown = g.display_log10(1e-1, 1e5);
        assert_eq!(raw, g.values);
        assert!(shown.iter().all(|v| *v <= 5.0 && *v >= -1.0));
    }

    #[test]
    fn bend_mapping() {
        assert_relative_eq!(
            lateral_offset_from_bend(PI / 6.0, 2.0),
            1.0,
            max_relative = 1e-12
        );
        let b = GaussianBeam::dgf_focus();
        let curve = absorption_curve(&b, 4e-3, 1e-3, 5e-3, &[0.0, 0.05, 0.1]).unwrap();
        assert_relative_eq!(curve[0], 100.0, max_relative = 1e-9);
        assert!(curve[1] < 100.0 && curve[2] < curve[1]);
    }
}
