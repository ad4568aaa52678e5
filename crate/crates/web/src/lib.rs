//! Browser bindings for the demo page in `www/`.

use dgf_core::control::{design, simulate_linear_loop, OperatingPoint, PowerLimits};
use dgf_core::harness::{preset, run_map};
use dgf_core::lti::{zoh_discretize, ContinuousFirstOrder};
use dgf_core::optics::{field_grid, AxisRange, GaussianBeam};
use dgf_core::plant::{Classification, NOMINAL_GAIN, NOMINAL_TIME_CONSTANT};
use dgf_core::Result;
use wasm_bindgen::prelude::*;

const DT: f64 = 0.1;

/// log10 intensity (W/mm^2) on an `nx` by `nz` grid, z outer. x spans
/// `±x_half_mm`, z spans `[z_min_mm, z_max_mm]` from the focus.
pub fn beam_field_log10(
    power: f64,
    x_half_mm: f64,
    z_min_mm: f64,
    z_max_mm: f64,
    nx: usize,
    nz: usize,
) -> Result<Vec<f64>> {
    let grid = field_grid(
        &GaussianBeam::dgf_focus(),
        power,
        AxisRange::new(-x_half_mm, x_half_mm, nx),
        AxisRange::new(z_min_mm, z_max_mm, nz),
    )?;
    Ok(grid.display_log10(1e-3, 1e9))
}

/// Closed loop around the nominal plant. The reference steps by `step_c` at
/// 1 s and an output disturbance of `disturbance_c` enters at 6 s;
/// `gain_error` scales the true plant gain. Returns `[temperature..., power...]`
/// with `n` samples each at 10 Hz.
pub fn loop_response(
    tau1: f64,
    tau2: f64,
    step_c: f64,
    disturbance_c: f64,
    gain_error: f64,
    n: usize,
) -> Result<Vec<f64>> {
    let model = ContinuousFirstOrder::new(NOMINAL_GAIN, NOMINAL_TIME_CONSTANT)?;
    let plant = zoh_discretize(&model, DT)?;
    let d = design(
        &plant,
        &[tau1, tau2],
        PowerLimits::LASER,
        OperatingPoint::NOMINAL,
    )?;
    let tn = OperatingPoint::NOMINAL.temperature;
    let reference: Vec<f64> = (0..n)
        .map(|k| if k < 10 { tn } else { tn + step_c })
        .collect();
    let disturbance: Vec<f64> = (0..n)
        .map(|k| if k < 60 { 0.0 } else { disturbance_c })
        .collect();
    let p = -plant.denominator.coeff(0);
    let b = plant.numerator.coeff(0) * gain_error;
    let trace = simulate_linear_loop(&d, b, p, &reference, &disturbance, &[])?;
    let mut out = trace.temperature;
    out.extend(trace.power);
    Ok(out)
}

pub fn class_code(c: Classification) -> f64 {
    match c {
        Classification::TooColdNoWet => 0.0,
        Classification::TooColdCurl => 1.0,
        Classification::Stable => 2.0,
        Classification::Detached => 3.0,
        Classification::Vaporized => 4.0,
    }
}

/// Process map over power and distance from focus. Returns
/// `[T_max, class]` pairs, distance outer, with class codes
/// 0 no wet, 1 curl, 2 stable, 3 detached, 4 vaporized.
pub fn process_map(
    l_min: f64,
    l_max: f64,
    l_step: f64,
    df_min: f64,
    df_max: f64,
    df_step: f64,
) -> Result<Vec<f64>> {
    let mut s = preset("map")?;
    s.map.l_min = l_min;
    s.map.l_max = l_max;
    s.map.l_step = l_step;
    s.map.df_min = df_min;
    s.map.df_max = df_max;
    s.map.df_step = df_step;
    s.map.threads = 1;
    let m = run_map(&s)?;
    Ok(m.cells
        .iter()
        .flat_map(|c| [c.max_temperature, class_code(c.classification)])
        .collect())
}

fn js(e: dgf_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = beamFieldLog10)]
pub fn js_beam_field_log10(
    power: f64,
    x_half_mm: f64,
    z_min_mm: f64,
    z_max_mm: f64,
    nx: usize,
    nz: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    beam_field_log10(power, x_half_mm, z_min_mm, z_max_mm, nx, nz).map_err(js)
}

#[wasm_bindgen(js_name = loopResponse)]
pub fn js_loop_response(
    tau1: f64,
    tau2: f64,
    step_c: f64,
    disturbance_c: f64,
    gain_error: f64,
    n: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    loop_response(tau1, tau2, step_c, disturbance_c, gain_error, n).map_err(js)
}

#[wasm_bindgen(js_name = processMap)]
pub fn js_process_map(
    l_min: f64,
    l_max: f64,
    l_step: f64,
    df_min: f64,
    df_max: f64,
    df_step: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    process_map(l_min, l_max, l_step, df_min, df_max, df_step).map_err(js)
}
