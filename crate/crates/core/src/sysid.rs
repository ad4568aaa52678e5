//! Excitation signals and first-order model identification.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{domain, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExcitationKind {
    Prbs,
    Chirp,
    Sine,
}

impl fmt::Display for ExcitationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExcitationKind::Prbs => "prbs",
            ExcitationKind::Chirp => "chirp",
            ExcitationKind::Sine => "sine",
        })
    }
}

impl FromStr for ExcitationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prbs" => Ok(Self::Prbs),
            "chirp" => Ok(Self::Chirp),
            "sine" => Ok(Self::Sine),
            other => Err(Error::Config(format!("unknown excitation kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SignalMeta {
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub f0: Option<f64>,
    pub f1: Option<f64>,
    pub period: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExcitationSignal {
    pub kind: ExcitationKind,
    pub samples: Vec<f64>,
    pub dt: f64,
    pub meta: SignalMeta,
}

fn sample_count(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(domain("duration and sample period must be positive"));
    }
    Ok((duration / dt).round() as usize)
}

/// Maximal-length 10-bit Fibonacci shift register (x^10 + x^7 + 1).
#[derive(Clone, Copy, Debug)]
pub struct Lfsr10 {
    state: u16,
}

impl Lfsr10 {
    pub const PERIOD: usize = 1023;

    pub fn new(seed: u64) -> Self {
        Self {
            state: (seed % Self::PERIOD as u64) as u16 + 1,
        }
    }

    pub fn next_bit(&mut self) -> bool {
        let bit = ((self.state >> 9) ^ (self.state >> 6)) & 1;
        self.state = ((self.state << 1) | bit) & 0x3ff;
        bit == 1
    }
}

pub fn gen_prbs(
    low: f64,
    high: f64,
    min_dwell: f64,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<ExcitationSignal> {
    if high < low {
        return Err(domain("PRBS needs high >= low"));
    }
    if min_dwell < dt * (1.0 - 1e-9) {
        return Err(domain("PRBS dwell shorter than the sample period"));
    }
    if duration < min_dwell {
        return Err(domain("PRBS duration shorter than one dwell"));
    }
    let n = sample_count(duration, dt)?;
    let per_chip = ((min_dwell / dt).round() as usize).max(1);
    let mut reg = Lfsr10::new(seed);
    let mut samples = Vec::with_capacity(n);
    let mut level = low;
    for k in 0..n {
        if k % per_chip == 0 {
            level = if reg.next_bit() { high } else { low };
        }
        samples.push(level);
    }
    Ok(ExcitationSignal {
        kind: ExcitationKind::Prbs,
        samples,
        dt,
        meta: SignalMeta {
            low: Some(low),
            high: Some(high),
            seed: Some(seed),
            ..Default::default()
        },
    })
}

/// Linear sweep from `f0` to `f1` Hz over `duration`.
pub fn gen_chirp(
    f0: f64,
    f1: f64,
    duration: f64,
    mean: f64,
    amplitude: f64,
    dt: f64,
) -> Result<ExcitationSignal> {
    if !(f0 >= 0.0 && f1 >= f0) {
        return Err(domain("chirp needs 0 <= f0 <= f1"));
    }
    if amplitude < 0.0 || mean - amplitude < 0.0 {
        return Err(domain("chirp amplitude must be within [0, mean]"));
    }
    let n = sample_count(duration, dt)?;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let phase = 2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * duration));
            mean + amplitude * phase.sin()
        })
        .collect();
    Ok(ExcitationSignal {
        kind: ExcitationKind::Chirp,
        samples,
        dt,
        meta: SignalMeta {
            low: Some(mean - amplitude),
            high: Some(mean + amplitude),
            f0: Some(f0),
            f1: Some(f1),
            ..Default::default()
        },
    })
}

pub fn gen_sine(
    period: f64,
    mean: f64,
    amplitude: f64,
    duration: f64,
    dt: f64,
) -> Result<ExcitationSignal> {
    if !(period > 2.0 * dt) {
        return Err(domain("sine period must exceed two sample periods"));
    }
    let n = sample_count(duration, dt)?;
    let samples = (0..n)
        .map(|k| mean + amplitude * (2.0 * PI * k as f64 * dt / period).sin())
        .collect();
    Ok(ExcitationSignal {
        kind: ExcitationKind::Sine,
        samples,
        dt,
        meta: SignalMeta {
            low: Some(mean - amplitude.abs()),
            high: Some(mean + amplitude.abs()),
            period: Some(period),
            ..Default::default()
        },
    })
}

/// Period of a sine given in rad/s.
pub fn period_from_angular(omega: f64) -> f64 {
    2.0 * PI / omega
}

/// Drops the first and last `trim` mm of a track scanned at `v` mm/s.
pub fn trim_track(
    u: &[f64],
    y: &[f64],
    v: f64,
    track_length: f64,
    trim: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if u.len() != y.len() {
        return Err(domain("input and output lengths differ"));
    }
    if !(v > 0.0) || !(dt > 0.0) || trim < 0.0 {
        return Err(domain("trim needs positive speed and sample period"));
    }
    if trim >= track_length / 2.0 {
        return Err(domain("trim removes the whole track"));
    }
    let expected = (track_length / v / dt).round() as usize;
    if u.len().abs_diff(expected) > 1 {
        return Err(domain(format!(
            "track of {track_length} mm at {v} mm/s needs ~{expected} samples, got {}",
            u.len()
        )));
    }
    let k = (trim / v / dt).round() as usize;
    let end = u.len() - k;
    Ok((u[k..end].to_vec(), y[k..end].to_vec()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentifiedModel {
    pub gain: f64,
    pub time_constant: f64,
    pub nominal_temp: f64,
    pub nominal_power: f64,
    pub fit_percent_train: f64,
    pub source: String,
}

impl IdentifiedModel {
    /// `(b_d, p)` of the discrete model at `dt`.
    pub fn discrete(&self, dt: f64) -> (f64, f64) {
        let p = (-dt / self.time_constant).exp();
        (-self.gain * (-dt / self.time_constant).exp_m1(), p)
    }

    /// Free-run response to `u` starting from `y0`.
    pub fn simulate(&self, u: &[f64], dt: f64, y0: f64) -> Vec<f64> {
        let (b, p) = self.discrete(dt);
        let mut out = Vec::with_capacity(u.len());
        let mut dy = y0 - self.nominal_temp;
        for &uk in u {
            out.push(self.nominal_temp + dy);
            dy = p * dy + b * (uk - self.nominal_power);
        }
        out
    }
}

fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Solves `(Z^T Phi) theta = Z^T Y` for theta = (p, q, c).
fn normal_solve(phi: &[[f64; 3]], z: &[[f64; 3]], target: &[f64]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for ((ph, zz), &t) in phi.iter().zip(z).zip(target) {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += zz[i] * ph[j];
            }
            r[i] += zz[i] * t;
        }
    }
    solve(m, r)
}

const IV_ITERATIONS: usize = 8;
const OE_ITERATIONS: usize = 30;

fn simulation_error(dy: &[f64], du: &[f64], theta: &[f64; 4]) -> f64 {
    let (p, q, c) = (theta[0], theta[1], theta[2]);
    let mut x = theta[3];
    let mut sse = 0.0;
    for k in 0..dy.len() {
        sse += (dy[k] - x) * (dy[k] - x);
        x = p * x + q * du[k] + c;
    }
    sse
}

/// Output-error refinement: Levenberg-Marquardt on the simulated-output
/// residual over `(p, q, c, x0)`.
fn refine_output_error(dy: &[f64], du: &[f64], start: [f64; 3]) -> [f64; 3] {
    let mut theta = [start[0], start[1], start[2], dy[0]];
    let mut cost = simulation_error(dy, du, &theta);
    let mut lambda = 1e-3;
    for _ in 0..OE_ITERATIONS {
        let (p, q, c) = (theta[0], theta[1], theta[2]);
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        let mut x = theta[3];
        let mut sens = [0.0, 0.0, 0.0, 1.0];
        for k in 0..dy.len() {
            let r = dy[k] - x;
            for i in 0..4 {
                jtr[i] += sens[i] * r;
                for j in 0..4 {
                    jtj[i][j] += sens[i] * sens[j];
                }
            }
            sens = [
                x + p * sens[0],
                du[k] + p * sens[1],
                1.0 + p * sens[2],
                p * sens[3],
            ];
            x = p * x + q * du[k] + c;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-300);
            }
            let Some(step) = solve(a, jtr) else { break };
            let next = [
                theta[0] + step[0],
                theta[1] + step[1],
                theta[2] + step[2],
                theta[3] + step[3],
            ];
            let next_cost = if next[0] > 0.0 && next[0] < 1.0 {
                simulation_error(dy, du, &next)
            } else {
                f64::INFINITY
            };
            if next_cost < cost {
                let done = cost - next_cost <= 1e-14 * cost;
                theta = next;
                cost = next_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    [theta[0], theta[1], theta[2]]
}

/// First-order fit `dT[k+1] = p dT[k] + q dL[k] + c` about the data means.
/// Least squares gives the starting point; instrumental-variable passes,
/// using the current model's simulated output as instrument, remove the
/// bias that measurement noise puts on the least-squares pole. A final
/// output-error refinement minimizes the simulated-output residual.
pub fn fit_first_order(u: &[f64], y: &[f64], dt: f64) -> Result<IdentifiedModel> {
    if u.len() != y.len() || u.len() < 10 {
        return Err(Error::Identification(
            "need equal-length sequences of at least 10 samples".into(),
        ));
    }
    if u.iter().chain(y).any(|v| !v.is_finite()) || !(dt > 0.0) {
        return Err(Error::Identification(
            "non-finite data or sample period".into(),
        ));
    }
    let n = u.len() as f64;
    let lm = u.iter().sum::<f64>() / n;
    let tm = y.iter().sum::<f64>() / n;
    let du: Vec<f64> = u.iter().map(|v| v - lm).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - tm).collect();
    let spread = du.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * lm.abs().max(1.0) {
        return Err(Error::Identification(
            "input is constant; model is unidentifiable".into(),
        ));
    }

    let m = u.len() - 1;
    let phi: Vec<[f64; 3]> = (0..m).map(|k| [dy[k], du[k], 1.0]).collect();
    let target = &dy[1..];
    let mut theta = normal_solve(&phi, &phi, target)
        .ok_or_else(|| Error::Identification("regressors are collinear".into()))?;

    for _ in 0..IV_ITERATIONS {
        let (p, q, c) = (theta[0], theta[1], theta[2]);
        if !(p > 0.0 && p < 1.0) {
            break;
        }
        let mut sim = Vec::with_capacity(m);
        let mut x = dy[0];
        for k in 0..m {
            sim.push([x, du[k], 1.0]);
            x = p * x + q * du[k] + c;
        }
        match normal_solve(&phi, &sim, target) {
            Some(next) if next[0] > 0.0 && next[0] < 1.0 => {
                let settled =
                    (next[0] - p).abs() < 1e-13 && (next[1] - q).abs() < 1e-13 * q.abs().max(1.0);
                theta = next;
                if settled {
                    break;
                }
            }
            _ => break,
        }
    }

    if theta[0] > 0.0 && theta[0] < 1.0 {
        theta = refine_output_error(&dy, &du, theta);
    }
    let (p, q, c) = (theta[0], theta[1], theta[2]);
    if !(p > 0.0 && p < 1.0) || !q.is_finite() {
        return Err(Error::Identification(format!(
            "estimated pole {p} outside (0, 1); q = {q}"
        )));
    }
    let mut model = IdentifiedModel {
        gain: q / (1.0 - p),
        time_constant: -dt / p.ln(),
        nominal_temp: tm + c / (1.0 - p),
        nominal_power: lm,
        fit_percent_train: 0.0,
        source: format!("{} samples at dt = {dt} s", u.len()),
    };
    let yhat = model.simulate(u, dt, y[0]);
    model.fit_percent_train = fit_percent(y, &yhat)?;
    Ok(model)
}

/// Normalized-RMSE fit, 100 (1 - |y - yhat| / |y - mean(y)|).
pub fn fit_percent(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(domain("fit needs equal nonzero lengths"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let den = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(domain("fit undefined for constant data"));
    }
    let num = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - num / den))
}

pub fn write_series_csv<W: Write>(
    out: W,
    dt: f64,
    u: &[f64],
    y: &[f64],
    yhat: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", "u_W", "y_C", "yhat_C"])?;
    for k in 0..u.len() {
        w.write_record([
            (k as f64 * dt).to_string(),
            u[k].to_string(),
            y[k].to_string(),
            yhat[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 6] = [
    "record",
    "K_C_per_W",
    "tau_s",
    "T_n_C",
    "L_n_W",
    "fit_percent",
];
