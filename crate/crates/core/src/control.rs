//! Pole-placement temperature controller with an integrating internal model.
//!
//! The plant is `b / (z - p)`. With `v(z) = z - 1` and a desired error
//! polynomial `alpha`, the shaping polynomial is `g = v a - alpha` and the
//! control law is
//!
//! ```text
//! L = L_n + a(z)/b * dT_r - g(z)/(v(z) b) * E
//! ```
//!
//! The feedforward term needs the reference one step ahead, so callers pass
//! both the current and the next reference sample.

use std::io::Write;

use crate::error::{Error, Result};
use crate::lti::{poly_from_time_constants, DiscreteTransferFunction, Polynomial};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLimits {
    pub min: f64,
    pub max: f64,
}

impl PowerLimits {
    pub const LASER: PowerLimits = PowerLimits {
        min: 0.0,
        max: 500.0,
    };

    pub fn clamp(&self, l: f64) -> f64 {
        l.clamp(self.min, self.max)
    }
}

impl Default for PowerLimits {
    fn default() -> Self {
        Self::LASER
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub power: f64,
    pub temperature: f64,
}

impl OperatingPoint {
    pub const NOMINAL: OperatingPoint = OperatingPoint {
        power: 42.6,
        temperature: 888.0,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerDesign {
    pub plant_den: Polynomial,
    pub b: f64,
    pub internal_model: Polynomial,
    pub desired: Polynomial,
    pub shaping: Polynomial,
    pub dt: f64,
    pub limits: PowerLimits,
    pub nominal: OperatingPoint,
    pub warnings: Vec<String>,
}

impl ControllerDesign {
    pub fn pole(&self) -> f64 {
        -self.plant_den.coeff(0)
    }

    /// `(g1, g0)` of `g(z) = g1 z + g0`.
    pub fn shaping_coeffs(&self) -> (f64, f64) {
        (self.shaping.coeff(1), self.shaping.coeff(0))
    }

    pub fn write_report<W: Write>(&self, mut out: W) -> Result<()> {
        let roots = self.desired.roots()?;
        let (g1, g0) = self.shaping_coeffs();
        writeln!(out, "plant_b = {}", self.b)?;
        writeln!(out, "plant_pole = {}", self.pole())?;
        writeln!(out, "dt_s = {}", self.dt)?;
        writeln!(out, "alpha = {}", join(self.desired.coeffs()))?;
        writeln!(out, "g1 = {g1}")?;
        writeln!(out, "g0 = {g0}")?;
        let root_text: Vec<String> = roots
            .iter()
            .map(|r| format!("{}{:+}i", r.re, r.im))
            .collect();
        writeln!(out, "closed_loop_roots = {}", root_text.join(","))?;
        writeln!(out, "limits_W = {},{}", self.limits.min, self.limits.max)?;
        writeln!(out, "nominal_power_W = {}", self.nominal.power)?;
        writeln!(out, "nominal_temp_C = {}", self.nominal.temperature)?;
        for w in &self.warnings {
            writeln!(out, "warning = {w}")?;
        }
        Ok(())
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn first_order_parts(plant: &DiscreteTransferFunction) -> Result<(Polynomial, f64)> {
    let den = &plant.denominator;
    let num = &plant.numerator;
    if den.degree() != 1 || num.degree() != 0 || num.is_zero() {
        return Err(Error::Design("plant must be b/(z - p)".into()));
    }
    let lead = den.leading();
    let a = den.scale(1.0 / lead);
    let b = num.coeff(0) / lead;
    let p = -a.coeff(0);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Design(format!("plant pole {p} is not in (0, 1)")));
    }
    Ok((a, b))
}

/// Designs from desired closed-loop time constants.
pub fn design(
    plant: &DiscreteTransferFunction,
    desired_taus: &[f64],
    limits: PowerLimits,
    nominal: OperatingPoint,
) -> Result<ControllerDesign> {
    if desired_taus.len() != 2 {
        return Err(Error::Design(format!(
            "need 2 desired time constants, got {}",
            desired_taus.len()
        )));
    }
    let alpha = poly_from_time_constants(desired_taus, plant.sample_period)?;
    let mut d = design_with_alpha(plant, alpha, limits, nominal)?;
    let slow = desired_taus.iter().cloned().fold(0.0, f64::max);
    if slow < 5.0 * plant.sample_period {
        d.warnings.push(format!(
            "slowest desired time constant {slow} s is below five sample periods"
        ));
    }
    Ok(d)
}

/// Designs from an explicit monic degree-2 desired polynomial.
pub fn design_with_alpha(
    plant: &DiscreteTransferFunction,
    alpha: Polynomial,
    limits: PowerLimits,
    nominal: OperatingPoint,
) -> Result<ControllerDesign> {
    let (a, b) = first_order_parts(plant)?;
    let v = Polynomial::new(vec![1.0, -1.0]);
    if alpha.degree() != 2 || alpha.leading() != 1.0 {
        return Err(Error::Design(
            "desired polynomial must be monic of degree 2".into(),
        ));
    }
    if !(limits.min < limits.max) {
        return Err(Error::Design("power limits must satisfy min < max".into()));
    }
    let g = v.mul(&a).sub(&alpha);
    if g.degree() > 1 || g.coeffs().iter().any(|c| !c.is_finite()) {
        return Err(Error::Design("shaping polynomial has wrong degree".into()));
    }
    Ok(ControllerDesign {
        plant_den: a,
        b,
        internal_model: v,
        desired: alpha,
        shaping: g,
        dt: plant.sample_period,
        limits,
        nominal,
        warnings: Vec::new(),
    })
}

/// `v a - g`, checked against the desired polynomial.
pub fn closed_loop_poly(d: &ControllerDesign) -> Result<Polynomial> {
    let cl = d.internal_model.mul(&d.plant_den).sub(&d.shaping);
    let diff = cl.sub(&d.desired);
    if diff.coeffs().iter().any(|c| c.abs() > 1e-12) {
        return Err(Error::Design(
            "closed-loop polynomial does not match the design".into(),
        ));
    }
    Ok(cl)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerState {
    pub feedback: f64,
    pub prev_error: f64,
    pub last_command: f64,
    pub saturated: bool,
    pub fault: bool,
}

impl ControllerState {
    pub fn reset(d: &ControllerDesign) -> Self {
        Self {
            feedback: 0.0,
            prev_error: 0.0,
            last_command: d.limits.clamp(d.nominal.power),
            saturated: false,
            fault: false,
        }
    }
}

/// One 10 Hz tick. Returns the clamped command and the next state.
pub fn control_step(
    d: &ControllerDesign,
    state: &ControllerState,
    tr_now: f64,
    tr_next: f64,
    t_meas: f64,
) -> Result<(f64, ControllerState)> {
    if !tr_now.is_finite() || !tr_next.is_finite() {
        return Err(Error::NonFinite("reference"));
    }
    if !t_meas.is_finite() {
        let held = ControllerState {
            fault: true,
            ..*state
        };
        return Ok((state.last_command, held));
    }
    let p = d.pole();
    let (g1, g0) = d.shaping_coeffs();
    let tn = d.nominal.temperature;
    let ff = ((tr_next - tn) - p * (tr_now - tn)) / d.b;
    let e = tr_now - t_meas;
    let fb = state.feedback + (-g1 * e - g0 * state.prev_error) / d.b;
    let raw = d.nominal.power + ff + fb;
    let cmd = d.limits.clamp(raw);
    let saturated = cmd != raw;
    let feedback = if saturated {
        cmd - d.nominal.power - ff
    } else {
        fb
    };
    Ok((
        cmd,
        ControllerState {
            feedback,
            prev_error: e,
            last_command: cmd,
            saturated,
            fault: false,
        },
    ))
}

/// Record of a closed loop around a linear first-order plant.
#[derive(Clone, Debug, Default)]
pub struct LoopTrace {
    pub temperature: Vec<f64>,
    pub measured: Vec<f64>,
    pub power: Vec<f64>,
    pub error: Vec<f64>,
}

/// Simulates the design against `b_true / (z - p_true)` around the design's
/// operating point. `disturbance[k]` is added to the measured output and
/// `input_gain[k]` scales the power reaching the plant. Missing entries
/// default to 0 and 1.
pub fn simulate_linear_loop(
    d: &ControllerDesign,
    b_true: f64,
    p_true: f64,
    reference: &[f64],
    disturbance: &[f64],
    input_gain: &[f64],
) -> Result<LoopTrace> {
    let n = reference.len();
    let mut trace = LoopTrace::default();
    let mut state = ControllerState::reset(d);
    let mut dt_plant = 0.0;
    for k in 0..n {
        let temp = d.nominal.temperature + dt_plant;
        let meas = temp + disturbance.get(k).copied().unwrap_or(0.0);
        let next = reference.get(k + 1).copied().unwrap_or(reference[k]);
        let (cmd, s) = control_step(d, &state, reference[k], next, meas)?;
        state = s;
        trace.temperature.push(temp);
        trace.measured.push(meas);
        trace.power.push(cmd);
        trace.error.push(reference[k] - meas);
        let gain = input_gain.get(k).copied().unwrap_or(1.0);
        dt_plant = p_true * dt_plant + b_true * (gain * cmd - d.nominal.power);
    }
    Ok(trace)
}
