//! Real-coefficient polynomial and discrete transfer-function algebra.
//!
//! Every polynomial in this crate stores its coefficients **highest power
//! first**: `[1.0, -0.8296]` is `z - 0.8296`, `[2.0]` is the constant `2`.

use num_complex::Complex64;

use crate::error::{domain, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from highest-power-first coefficients. Leading
    /// zeros are stripped; an empty or all-zero input is the zero polynomial.
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        let mut coeffs: Vec<f64> = coeffs.into();
        let lead = coeffs
            .iter()
            .position(|c| *c != 0.0)
            .unwrap_or(coeffs.len());
        coeffs.drain(..lead);
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// `z - root`
    pub fn monic_linear(root: f64) -> Self {
        Self::new(vec![1.0, -root])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn leading(&self) -> f64 {
        self.coeffs[0]
    }

    /// Coefficient of `z^power`, zero when out of range.
    pub fn coeff(&self, power: usize) -> f64 {
        let n = self.coeffs.len();
        if power >= n {
            0.0
        } else {
            self.coeffs[n - 1 - power]
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn eval_complex(&self, x: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * x + c)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.combine(other, -1.0)
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * k).collect::<Vec<_>>())
    }

    fn combine(&self, other: &Polynomial, sign: f64) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let out: Vec<f64> = (0..n)
            .rev()
            .map(|power| self.coeff(power) + sign * other.coeff(power))
            .collect();
        Polynomial::new(out)
    }

    /// Roots in closed form. Only degrees 0 through 2 are supported.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        match self.degree() {
            0 => Ok(Vec::new()),
            1 => Ok(vec![Complex64::new(-self.coeffs[1] / self.coeffs[0], 0.0)]),
            2 => {
                let (a, b, c) = (self.coeffs[0], self.coeffs[1], self.coeffs[2]);
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    // Citardauq form for the smaller-magnitude root avoids cancellation.
                    let sign = if b >= 0.0 { 1.0 } else { -1.0 };
                    let q = -0.5 * (b + sign * disc.sqrt());
                    let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                    let (hi, lo) = if r1 >= r2 { (r1, r2) } else { (r2, r1) };
                    Ok(vec![Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)])
                } else {
                    let re = -b / (2.0 * a);
                    let im = (-disc).sqrt() / (2.0 * a.abs());
                    Ok(vec![Complex64::new(re, im), Complex64::new(re, -im)])
                }
            }
            d => Err(Error::UnsupportedDegree(d)),
        }
    }
}

/// Monic polynomial whose roots are the discrete poles `exp(-dt / tau)` of
/// the given continuous time constants.
pub fn poly_from_time_constants(taus: &[f64], dt: f64) -> Result<Polynomial> {
    if !(dt > 0.0) {
        return Err(domain("sample period must be positive"));
    }
    taus.iter().try_fold(Polynomial::one(), |acc, &tau| {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(domain(format!("time constant must be positive, got {tau}")));
        }
        Ok(acc.mul(&Polynomial::monic_linear((-dt / tau).exp())))
    })
}

/// `K / (tau s + 1)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousFirstOrder {
    pub gain: f64,
    pub time_constant: f64,
}

impl ContinuousFirstOrder {
    pub fn new(gain: f64, time_constant: f64) -> Result<Self> {
        if !(time_constant > 0.0) || !time_constant.is_finite() {
            return Err(domain("time constant must be positive"));
        }
        if gain == 0.0 || !gain.is_finite() {
            return Err(domain("gain must be finite and nonzero"));
        }
        Ok(Self {
            gain,
            time_constant,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTransferFunction {
    pub numerator: Polynomial,
    pub denominator: Polynomial,
    pub sample_period: f64,
    /// Set for non-causal blocks that need their input one sample ahead.
    pub preview: bool,
}

impl DiscreteTransferFunction {
    pub fn new(numerator: Polynomial, denominator: Polynomial, sample_period: f64) -> Result<Self> {
        Self::build(numerator, denominator, sample_period, false)
    }

    /// An improper block (numerator degree above denominator degree).
    pub fn preview(
        numerator: Polynomial,
        denominator: Polynomial,
        sample_period: f64,
    ) -> Result<Self> {
        Self::build(numerator, denominator, sample_period, true)
    }

    fn build(
        numerator: Polynomial,
        denominator: Polynomial,
        sample_period: f64,
        preview: bool,
    ) -> Result<Self> {
        if !(sample_period > 0.0) {
            return Err(domain("sample period must be positive"));
        }
        if denominator.is_zero() {
            return Err(domain("denominator is zero"));
        }
        if !preview && numerator.degree() > denominator.degree() {
            return Err(Error::Design(format!(
                "improper transfer function (numerator degree {} > denominator degree {}) must be flagged as preview",
                numerator.degree(),
                denominator.degree()
            )));
        }
        Ok(Self {
            numerator,
            denominator,
            sample_period,
            preview,
        })
    }

    /// `b / (z - p)`
    pub fn first_order(b: f64, pole: f64, sample_period: f64) -> Result<Self> {
        Self::new(
            Polynomial::constant(b),
            Polynomial::monic_linear(pole),
            sample_period,
        )
    }

    pub fn is_proper(&self) -> bool {
        self.numerator.degree() <= self.denominator.degree()
    }

    pub fn dc_gain(&self) -> f64 {
        self.numerator.eval(1.0) / self.denominator.eval(1.0)
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        self.denominator.roots()
    }

    /// Zero-initial-state response.
    pub fn simulate(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut sim = DirectFormII::new(self)?;
        input.iter().map(|&u| sim.step(u)).collect()
    }
}

/// Exact discretization of `K / (tau s + 1)` under a zero-order hold.
pub fn zoh_discretize(model: &ContinuousFirstOrder, dt: f64) -> Result<DiscreteTransferFunction> {
    if !(model.time_constant > 0.0) {
        return Err(domain("time constant must be positive"));
    }
    if !(dt > 0.0) {
        return Err(domain("sample period must be positive"));
    }
    let pole = (-dt / model.time_constant).exp();
    // 1 - exp(-x) without cancellation for small x
    let b = model.gain * -(-dt / model.time_constant).exp_m1();
    DiscreteTransferFunction::first_order(b, pole, dt)
}

/// Recovers `(K, tau)` from a first-order discrete model `b / (z - p)`.
pub fn first_order_from_discrete(tf: &DiscreteTransferFunction) -> Result<ContinuousFirstOrder> {
    if tf.denominator.degree() != 1 || tf.numerator.degree() != 0 {
        return Err(Error::Design("model is not first order".into()));
    }
    let pole = -tf.denominator.coeff(0) / tf.denominator.leading();
    let b = tf.numerator.leading() / tf.denominator.leading();
    if !(pole > 0.0 && pole < 1.0) {
        return Err(Error::Design(format!("pole {pole} is outside (0, 1)")));
    }
    ContinuousFirstOrder::new(b / (1.0 - pole), -tf.sample_period / pole.ln())
}

/// Direct-form-II transposed realization of a proper transfer function.
#[derive(Clone, Debug)]
pub struct DirectFormII {
    num: Vec<f64>,
    den: Vec<f64>,
    state: Vec<f64>,
}

impl DirectFormII {
    pub fn new(tf: &DiscreteTransferFunction) -> Result<Self> {
        if !tf.is_proper() {
            return Err(Error::Design(
                "cannot realize an improper transfer function causally".into(),
            ));
        }
        let n = tf.denominator.degree();
        let a0 = tf.denominator.leading();
        let den: Vec<f64> = tf.denominator.coeffs().iter().map(|c| c / a0).collect();
        let mut num = vec![0.0; n + 1];
        let pad = n - tf.numerator.degree();
        for (i, c) in tf.numerator.coeffs().iter().enumerate() {
            num[pad + i] = c / a0;
        }
        Ok(Self {
            num,
            den,
            state: vec![0.0; n],
        })
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = 0.0);
    }

    pub fn step(&mut self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::NonFinite("simulation input"));
        }
        let n = self.state.len();
        let y = self.num[0] * u + self.state.first().copied().unwrap_or(0.0);
        for i in 0..n {
            let next = if i + 1 < n { self.state[i + 1] } else { 0.0 };
            self.state[i] = next + self.num[i + 1] * u - self.den[i + 1] * y;
        }
        Ok(y)
    }
}
