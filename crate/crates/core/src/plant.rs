//! Simulated work-zone thermal process.
//!
//! First-order dynamics `a dT/dt + T = T_ss(L)` with an affine steady-state
//! map whose gain and baseline depend on distance from focus, layer, corner
//! proximity, filament diameter and lateral filament offset.
//!
//! The steady-state map pivots about the cutoff power `L0`: below it the
//! filament absorbs too little to leave the heatbed regime, above it every
//! watt raises the work zone by `b_eff` degrees. With `L0 = 0` the baseline
//! is the constant `T_n - K L_n`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::PowerLimits;
use crate::error::{domain, Error, Result};
use crate::optics::{relative_absorption, GaussianBeam};

pub const NOMINAL_GAIN: f64 = 3.69;
pub const NOMINAL_TIME_CONSTANT: f64 = 0.53;
pub const REFERENCE_DF_MM: f64 = 7.0;
pub const DIAMETER_MIN_MM: f64 = 0.85;
pub const DIAMETER_MAX_MM: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub wet_min: f64,
    pub detach_max: f64,
    pub vaporize_max: f64,
    /// Time above `detach_max` before detachment is declared.
    pub detach_dwell_s: f64,
    /// Peaks within this band below `wet_min` classify as curling.
    pub curl_band: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            wet_min: 900.0,
            detach_max: 1100.0,
            vaporize_max: 1300.0,
            detach_dwell_s: 0.5,
            curl_band: 50.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Std dev of the per-segment filament diameter (mm).
    pub diameter_sigma: f64,
    /// Filament length over which one diameter draw holds (mm).
    pub diameter_segment_mm: f64,
    /// Additive measurement noise on the work-zone reading (C).
    pub measurement_sigma: f64,
    /// Lateral filament offset right after a corner (mm).
    pub deflection_amplitude_mm: f64,
    pub deflection_decay_s: f64,
    /// 0 leaves absorption untouched; 1 applies the full disk-overlap loss.
    pub deflection_coupling: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            diameter_sigma: 0.0,
            diameter_segment_mm: 5.0,
            measurement_sigma: 0.0,
            deflection_amplitude_mm: 0.0,
            deflection_decay_s: 4.0,
            deflection_coupling: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerEffect {
    /// Peak fractional gain increase at a corner.
    pub amplitude: f64,
    pub radius_mm: f64,
}

impl Default for CornerEffect {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            radius_mm: 2.0,
        }
    }
}

/// Baseline rise for layers above the first: `jump + slope (layer - 2)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LayerEffect {
    pub jump: f64,
    pub slope: f64,
}

impl LayerEffect {
    pub fn baseline_shift(&self, layer: usize) -> f64 {
        if layer < 2 {
            0.0
        } else {
            self.jump + self.slope * (layer - 2) as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scan_speed: f64,
    pub feed_rate: f64,
    pub filament_diameter: f64,
    pub distance_from_focus: f64,
    pub interlayer_distance: f64,
    pub heatbed_temp: f64,
    pub nominal_power: f64,
    pub nominal_temp: f64,
    /// Gain at the reference distance from focus (C/W).
    pub reference_gain: f64,
    pub reference_df: f64,
    pub time_constant: f64,
    pub cutoff_power: f64,
    /// Overrides the temperature reached at the cutoff power.
    pub baseline_temp: Option<f64>,
    /// Defaults to the heatbed temperature.
    pub initial_temp: Option<f64>,
    pub thresholds: Thresholds,
    pub noise: NoiseConfig,
    pub corner: CornerEffect,
    pub layer: LayerEffect,
    pub limits: PowerLimits,
    pub nuc_period: f64,
    pub nuc_dwell: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scan_speed: 0.5,
            feed_rate: 0.5,
            filament_diameter: 1.0,
            distance_from_focus: REFERENCE_DF_MM,
            interlayer_distance: 0.6,
            heatbed_temp: 550.0,
            nominal_power: 42.6,
            nominal_temp: 888.0,
            reference_gain: NOMINAL_GAIN,
            reference_df: REFERENCE_DF_MM,
            time_constant: NOMINAL_TIME_CONSTANT,
            cutoff_power: 0.0,
            baseline_temp: None,
            initial_temp: None,
            thresholds: Thresholds::default(),
            noise: NoiseConfig::default(),
            corner: CornerEffect::default(),
            layer: LayerEffect::default(),
            limits: PowerLimits::LASER,
            nuc_period: 30.0,
            nuc_dwell: 0.128,
            dt: 0.1,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("scan_speed", self.scan_speed),
            ("feed_rate", self.feed_rate),
            ("filament_diameter", self.filament_diameter),
            ("distance_from_focus", self.distance_from_focus),
            ("dt", self.dt),
            ("time_constant", self.time_constant),
            ("reference_gain", self.reference_gain),
            ("reference_df", self.reference_df),
            ("noise.diameter_segment_mm", self.noise.diameter_segment_mm),
            ("noise.deflection_decay_s", self.noise.deflection_decay_s),
            ("corner.radius_mm", self.corner.radius_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let t = &self.thresholds;
        if !(t.wet_min < t.detach_max && t.detach_max <= t.vaporize_max) {
            return Err(Error::Config(
                "thresholds need wet_min < detach_max <= vaporize_max".into(),
            ));
        }
        if !(self.limits.min < self.limits.max) {
            return Err(Error::Config("power limits need min < max".into()));
        }
        if self.noise.diameter_sigma < 0.0 || self.noise.measurement_sigma < 0.0 {
            return Err(Error::Config("noise sigmas must be nonnegative".into()));
        }
        Ok(())
    }

    /// Temperature at the cutoff power, independent of distance from focus.
    pub fn pivot_temp(&self) -> f64 {
        self.baseline_temp.unwrap_or(
            self.nominal_temp - self.reference_gain * (self.nominal_power - self.cutoff_power),
        )
    }

    pub fn start_temp(&self) -> f64 {
        self.initial_temp.unwrap_or(self.heatbed_temp)
    }
}

/// Gain at distance from focus `df_mm`, scaled by inverse spot area.
pub fn focus_gain(config: &ScenarioConfig, beam: &GaussianBeam, df_mm: f64) -> f64 {
    let ratio = beam.radius_at(config.reference_df * 1e-3) / beam.radius_at(df_mm * 1e-3);
    config.reference_gain * ratio * ratio
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveParams {
    pub gain: f64,
    pub time_constant: f64,
    pub baseline: f64,
}

impl EffectiveParams {
    pub fn steady_state(&self, power: f64) -> f64 {
        self.baseline + self.gain * power
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessState {
    pub temperature: f64,
    pub position: [f64; 3],
    pub arc_length: f64,
    pub layer: usize,
    pub diameter: f64,
    pub deflection_offset: f64,
    /// Unit xy direction of the current deflection.
    pub deflection_direction: [f64; 2],
    pub corner_distance: f64,
    pub time: f64,
}

impl ProcessState {
    pub fn at_rest(temperature: f64, diameter: f64) -> Self {
        Self {
            temperature,
            position: [0.0; 3],
            arc_length: 0.0,
            layer: 1,
            diameter,
            deflection_offset: 0.0,
            deflection_direction: [1.0, 0.0],
            corner_distance: f64::INFINITY,
            time: 0.0,
        }
    }
}

/// Absorption loss versus lateral offset, tabulated once per run.
#[derive(Clone, Debug)]
struct OffsetTable {
    step: f64,
    values: Vec<f64>,
}

impl OffsetTable {
    fn build(beam: &GaussianBeam, df_mm: f64, diameter_mm: f64, max_mm: f64) -> Result<Self> {
        let n = 64;
        let step = (max_mm / n as f64).max(1e-6);
        let values = (0..=n)
            .map(|i| {
                relative_absorption(
                    beam,
                    df_mm * 1e-3,
                    diameter_mm * 1e-3,
                    i as f64 * step * 1e-3,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { step, values })
    }

    fn lookup(&self, offset_mm: f64) -> f64 {
        let x = offset_mm.abs() / self.step;
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return *self.values.last().unwrap_or(&1.0);
        }
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }
}

/// Scenario parameters with the per-run caches resolved.
#[derive(Clone, Debug)]
pub struct PlantModel {
    pub config: ScenarioConfig,
    pub beam: GaussianBeam,
    focus_gain: f64,
    offset_table: Option<OffsetTable>,
}

impl PlantModel {
    pub fn new(config: ScenarioConfig, beam: GaussianBeam) -> Result<Self> {
        config.validate()?;
        let focus_gain = focus_gain(&config, &beam, config.distance_from_focus);
        let offset_table = if config.noise.deflection_coupling != 0.0
            && config.noise.deflection_amplitude_mm > 0.0
        {
            Some(OffsetTable::build(
                &beam,
                config.distance_from_focus,
                config.filament_diameter,
                config.noise.deflection_amplitude_mm,
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            beam,
            focus_gain,
            offset_table,
        })
    }

    pub fn reference(config: ScenarioConfig) -> Result<Self> {
        Self::new(config, GaussianBeam::dgf_focus())
    }

    pub fn focus_gain(&self) -> f64 {
        self.focus_gain
    }

    pub fn corner_multiplier(&self, corner_distance: f64) -> f64 {
        let c = &self.config.corner;
        if c.amplitude == 0.0 || corner_distance >= c.radius_mm {
            return 1.0;
        }
        1.0 + c.amplitude * 0.5 * (1.0 + (PI * corner_distance / c.radius_mm).cos())
    }

    pub fn diameter_multiplier(&self, diameter: f64) -> f64 {
        self.config.filament_diameter / diameter
    }

    pub fn offset_multiplier(&self, offset: f64) -> f64 {
        match &self.offset_table {
            Some(t) => 1.0 - self.config.noise.deflection_coupling * (1.0 - t.lookup(offset)),
            None => 1.0,
        }
    }

    pub fn effective_params(&self, state: &ProcessState) -> EffectiveParams {
        let c = &self.config;
        let gain = self.focus_gain
            * self.corner_multiplier(state.corner_distance)
            * self.diameter_multiplier(state.diameter)
            * self.offset_multiplier(state.deflection_offset);
        let baseline =
            c.pivot_temp() - self.focus_gain * c.cutoff_power + c.layer.baseline_shift(state.layer);
        EffectiveParams {
            gain,
            time_constant: c.time_constant,
            baseline,
        }
    }

    /// Advances the temperature one sample with `power` held (exact for
    /// piecewise-constant input). Returns the clamped power actually applied.
    pub fn advance_temperature(&self, state: &ProcessState, power: f64) -> Result<(f64, f64)> {
        if !power.is_finite() {
            return Err(Error::NonFinite("laser power"));
        }
        let l = self.config.limits.clamp(power);
        let eff = self.effective_params(state);
        let tss = eff.steady_state(l);
        let decay = (-self.config.dt / eff.time_constant).exp();
        Ok((tss + (state.temperature - tss) * decay, l))
    }
}

/// Convenience wrapper building a [`PlantModel`] for a single query.
pub fn effective_params(
    state: &ProcessState,
    config: &ScenarioConfig,
    beam: &GaussianBeam,
) -> Result<EffectiveParams> {
    Ok(PlantModel::new(config.clone(), *beam)?.effective_params(state))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub layer: usize,
}

impl Segment {
    pub fn length(&self) -> f64 {
        let (dx, dy) = (self.end[0] - self.start[0], self.end[1] - self.start[1]);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn direction(&self) -> [f64; 2] {
        let len = self.length();
        if len == 0.0 {
            return [0.0, 0.0];
        }
        [
            (self.end[0] - self.start[0]) / len,
            (self.end[1] - self.start[1]) / len,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner {
    /// 1-based order along the path.
    pub index: usize,
    pub arc_length: f64,
    pub incoming: [f64; 2],
}

/// Deposition path made of straight xy segments. Layer changes drop z
/// instantly; arc length counts xy travel only.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    segments: Vec<Segment>,
    starts: Vec<f64>,
    total: f64,
    corners: Vec<Corner>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathPoint {
    pub position: [f64; 3],
    pub layer: usize,
    pub direction: [f64; 2],
}

impl Path {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(domain("path needs at least one segment"));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.length() > 0.0) || s.layer == 0 {
                return Err(domain(format!("segment {i} is degenerate")));
            }
            if let Some(next) = segments.get(i + 1) {
                let gap = ((next.start[0] - s.end[0]).powi(2) + (next.start[1] - s.end[1]).powi(2))
                    .sqrt();
                if gap > 1e-9 {
                    return Err(domain(format!(
                        "segments {i} and {} are not contiguous",
                        i + 1
                    )));
                }
            }
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut total = 0.0;
        for s in &segments {
            starts.push(total);
            total += s.length();
        }

        let mut arcs: Vec<(f64, [f64; 2])> = Vec::new();
        for i in 0..segments.len() {
            let s = &segments[i];
            let end_arc = starts[i] + s.length();
            let turns = segments.get(i + 1).is_some_and(|n| {
                let (a, b) = (s.direction(), n.direction());
                a[0] * b[0] + a[1] * b[1] < 1.0 - 1e-9
            });
            let layer_end = segments.get(i + 1).is_none_or(|n| n.layer != s.layer);
            let closes = layer_end && {
                let first = segments
                    .iter()
                    .find(|q| q.layer == s.layer)
                    .map(|q| q.start)
                    .unwrap_or(s.start);
                (first[0] - s.end[0]).abs() < 1e-9 && (first[1] - s.end[1]).abs() < 1e-9
            };
            if turns || closes {
                arcs.push((end_arc, s.direction()));
            }
        }
        let corners = arcs
            .into_iter()
            .enumerate()
            .map(|(i, (arc_length, incoming))| Corner {
                index: i + 1,
                arc_length,
                incoming,
            })
            .collect();
        Ok(Self {
            segments,
            starts,
            total,
            corners,
        })
    }

    pub fn straight(length: f64) -> Result<Self> {
        Self::new(vec![Segment {
            start: [0.0; 3],
            end: [length, 0.0, 0.0],
            layer: 1,
        }])
    }

    /// Single-bead wall: one pass per layer alternating direction, with a
    /// collinear lead-in before the first pass.
    pub fn wall(length: f64, layers: usize, lead_in: f64, layer_drop: f64) -> Result<Self> {
        let mut segs = Vec::new();
        if lead_in > 0.0 {
            segs.push(Segment {
                start: [0.0, 0.0, 0.0],
                end: [lead_in, 0.0, 0.0],
                layer: 1,
            });
        }
        let (a, b) = (lead_in, lead_in + length);
        for k in 0..layers {
            let z = -(k as f64) * layer_drop;
            let (x0, x1) = if k % 2 == 0 { (a, b) } else { (b, a) };
            segs.push(Segment {
                start: [x0, 0.0, z],
                end: [x1, 0.0, z],
                layer: k + 1,
            });
        }
        Self::new(segs)
    }

    /// Closed square per layer traversed counterclockwise as seen from the
    /// camera: -x, -y, +x, +y.
    pub fn square_layers(side: f64, layers: usize, layer_drop: f64) -> Result<Self> {
        let mut segs = Vec::new();
        let corners = [
            [side, side],
            [0.0, side],
            [0.0, 0.0],
            [side, 0.0],
            [side, side],
        ];
        for k in 0..layers {
            let z = -(k as f64) * layer_drop;
            for w in corners.windows(2) {
                segs.push(Segment {
                    start: [w[0][0], w[0][1], z],
                    end: [w[1][0], w[1][1], z],
                    layer: k + 1,
                });
            }
        }
        Self::new(segs)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_length(&self) -> f64 {
        self.total
    }

    pub fn corners(&self) -> &[Corner] {
        &self.corners
    }

    pub fn layer_count(&self) -> usize {
        self.segments.iter().map(|s| s.layer).max().unwrap_or(1)
    }

    fn segment_at(&self, s: f64) -> usize {
        match self.starts.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    pub fn locate(&self, s: f64) -> PathPoint {
        let s = s.clamp(0.0, self.total);
        let i = self.segment_at(s);
        let seg = &self.segments[i];
        let f = ((s - self.starts[i]) / seg.length()).clamp(0.0, 1.0);
        let lerp = |k: usize| seg.start[k] + (seg.end[k] - seg.start[k]) * f;
        PathPoint {
            position: [lerp(0), lerp(1), lerp(2)],
            layer: seg.layer,
            direction: seg.direction(),
        }
    }

    pub fn corner_distance(&self, s: f64) -> f64 {
        self.corners
            .iter()
            .map(|c| (c.arc_length - s).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Most recent corner at or before `s`.
    pub fn last_corner(&self, s: f64) -> Option<&Corner> {
        self.corners
            .iter()
            .rev()
            .find(|c| c.arc_length <= s + 1e-12)
    }

    pub fn nearest_corner(&self, s: f64) -> Option<&Corner> {
        self.corners.iter().min_by(|a, b| {
            (a.arc_length - s)
                .abs()
                .total_cmp(&(b.arc_length - s).abs())
        })
    }
}

/// Path-derived disturbances for one seeded run.
#[derive(Clone, Debug)]
pub struct PathTracker {
    pub path: Path,
    diameters: Vec<f64>,
    segment_mm: f64,
    speed: f64,
    deflection_amplitude: f64,
    deflection_decay: f64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if sigma == 0.0 {
        return mean.clamp(lo, hi);
    }
    let normal = Normal::new(mean, sigma).expect("sigma checked nonnegative");
    for _ in 0..1000 {
        let d = normal.sample(rng);
        if (lo..=hi).contains(&d) {
            return d;
        }
    }
    mean.clamp(lo, hi)
}

impl PathTracker {
    pub fn new(path: Path, config: &ScenarioConfig) -> Self {
        let seg = config.noise.diameter_segment_mm;
        let count = (path.total_length() / seg).ceil() as usize + 1;
        let mut rng = stream_rng(config.seed, 1);
        let diameters = (0..count)
            .map(|_| {
                truncated_normal(
                    &mut rng,
                    config.filament_diameter,
                    config.noise.diameter_sigma,
                    DIAMETER_MIN_MM,
                    DIAMETER_MAX_MM,
                )
            })
            .collect();
        Self {
            path,
            diameters,
            segment_mm: seg,
            speed: config.scan_speed,
            deflection_amplitude: config.noise.deflection_amplitude_mm,
            deflection_decay: config.noise.deflection_decay_s,
        }
    }

    pub fn diameter_at(&self, s: f64) -> f64 {
        let i = ((s / self.segment_mm).floor() as usize).min(self.diameters.len() - 1);
        self.diameters[i]
    }

    /// Fills the path-derived fields of `state` for arc length `s`.
    pub fn place(&self, state: &mut ProcessState, s: f64) {
        let point = self.path.locate(s);
        state.arc_length = s;
        state.position = point.position;
        state.layer = point.layer;
        state.diameter = self.diameter_at(s);
        state.corner_distance = self.path.corner_distance(s);
        match self.path.last_corner(s) {
            Some(c) if self.deflection_amplitude > 0.0 => {
                let elapsed = (s - c.arc_length) / self.speed;
                state.deflection_offset =
                    self.deflection_amplitude * (-elapsed / self.deflection_decay).exp();
                state.deflection_direction = c.incoming;
            }
            _ => {
                state.deflection_offset = 0.0;
                state.deflection_direction = point.direction;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Classification {
    TooColdNoWet,
    TooColdCurl,
    Stable,
    Detached,
    Vaporized,
}

impl Classification {
    pub fn is_failure(&self) -> bool {
        *self != Classification::Stable
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::TooColdNoWet => "TooColdNoWet",
            Classification::TooColdCurl => "TooColdCurl",
            Classification::Stable => "Stable",
            Classification::Detached => "Detached",
            Classification::Vaporized => "Vaporized",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Classification {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Classification::TooColdNoWet,
            Classification::TooColdCurl,
            Classification::Stable,
            Classification::Detached,
            Classification::Vaporized,
        ]
        .into_iter()
        .find(|c| c.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Config(format!("unknown classification `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepositionOutcome {
    pub classification: Classification,
    pub failure_time: Option<f64>,
    /// Arc length along the path (mm).
    pub failure_position: Option<f64>,
}

impl DepositionOutcome {
    pub fn stable() -> Self {
        Self {
            classification: Classification::Stable,
            failure_time: None,
            failure_position: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryPoint {
    pub time: f64,
    pub temperature: f64,
    pub position: f64,
}

pub fn classify(history: &[HistoryPoint], thresholds: &Thresholds) -> Result<DepositionOutcome> {
    let first = history
        .first()
        .ok_or_else(|| domain("classification needs a nonempty history"))?;
    let mut vaporize: Option<&HistoryPoint> = None;
    let mut detach: Option<&HistoryPoint> = None;
    let mut above_since: Option<f64> = None;
    for h in history {
        if vaporize.is_none() && h.temperature > thresholds.vaporize_max {
            vaporize = Some(h);
        }
        if h.temperature > thresholds.detach_max {
            let since = *above_since.get_or_insert(h.time);
            if detach.is_none() && h.time - since >= thresholds.detach_dwell_s - 1e-9 {
                detach = Some(h);
            }
        } else {
            above_since = None;
        }
        if vaporize.is_some() && detach.is_some() {
            break;
        }
    }
    let hot = match (vaporize, detach) {
        (Some(v), Some(d)) if d.time < v.time => Some((Classification::Detached, d)),
        (Some(v), _) => Some((Classification::Vaporized, v)),
        (None, Some(d)) => Some((Classification::Detached, d)),
        (None, None) => None,
    };
    if let Some((c, h)) = hot {
        return Ok(DepositionOutcome {
            classification: c,
            failure_time: Some(h.time),
            failure_position: Some(h.position),
        });
    }
    let peak = history
        .iter()
        .map(|h| h.temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let cold = if peak < thresholds.wet_min - thresholds.curl_band {
        Some(Classification::TooColdNoWet)
    } else if peak < thresholds.wet_min {
        Some(Classification::TooColdCurl)
    } else {
        None
    };
    Ok(match cold {
        Some(c) => DepositionOutcome {
            classification: c,
            failure_time: Some(first.time),
            failure_position: Some(first.position),
        },
        None => DepositionOutcome::stable(),
    })
}

/// Supplies the commanded laser power each tick.
pub trait PowerSource {
    /// `measurement` is the held work-zone reading, NaN before the first one.
    fn command(&mut self, k: usize, t: f64, measurement: f64) -> Result<f64>;
}

pub struct ConstantPower(pub f64);

impl PowerSource for ConstantPower {
    fn command(&mut self, _k: usize, _t: f64, _m: f64) -> Result<f64> {
        Ok(self.0)
    }
}

/// Plays back a sample sequence, holding the last value afterwards.
pub struct SchedulePower(pub Vec<f64>);

impl PowerSource for SchedulePower {
    fn command(&mut self, k: usize, _t: f64, _m: f64) -> Result<f64> {
        self.0
            .get(k)
            .or(self.0.last())
            .copied()
            .ok_or_else(|| domain("empty power schedule"))
    }
}

/// Produces the work-zone reading; `None` while the sensor is unavailable.
pub trait Sensor {
    fn measure(&mut self, state: &ProcessState) -> Result<Option<f64>>;
}

/// Direct reading of the work-zone temperature plus seeded Gaussian noise.
pub struct DirectSensor {
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl DirectSensor {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        let noise = if sigma > 0.0 {
            Some(Normal::new(0.0, sigma).map_err(|e| domain(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            rng: stream_rng(seed, 2),
            noise,
        })
    }
}

impl Sensor for DirectSensor {
    fn measure(&mut self, state: &ProcessState) -> Result<Option<f64>> {
        let n = self.noise.map(|d| d.sample(&mut self.rng)).unwrap_or(0.0);
        Ok(Some(state.temperature + n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub layer: usize,
    pub temperature: f64,
    pub power: f64,
    pub b_eff: f64,
    pub corner_flag: bool,
}

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "t_s",
    "x_mm",
    "y_mm",
    "z_mm",
    "layer",
    "T_C",
    "L_W",
    "b_eff",
    "corner_flag",
];

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.z.to_string(),
            r.layer.to_string(),
            r.temperature.to_string(),
            r.power.to_string(),
            r.b_eff.to_string(),
            (r.corner_flag as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("bad trajectory field {i} in {rec:?}")))
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::Config("unexpected trajectory header".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(TrajectoryRow {
                t: field(&rec, 0)?,
                x: field(&rec, 1)?,
                y: field(&rec, 2)?,
                z: field(&rec, 3)?,
                layer: field(&rec, 4)?,
                temperature: field(&rec, 5)?,
                power: field(&rec, 6)?,
                b_eff: field(&rec, 7)?,
                corner_flag: field::<u8>(&rec, 8)? != 0,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// Hold the path start until the reading reaches this temperature.
    pub preheat_target: Option<f64>,
    pub max_preheat_s: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            preheat_target: None,
            max_preheat_s: 60.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rows: Vec<TrajectoryRow>,
    /// Held reading seen by the power source at each row.
    pub measurements: Vec<f64>,
    /// Arc length at each row.
    pub arc_lengths: Vec<f64>,
    /// First row with the path in motion.
    pub deposition_start: usize,
    pub outcome: DepositionOutcome,
    pub path: Path,
}

impl RunRecord {
    pub fn deposition_rows(&self) -> &[TrajectoryRow] {
        &self.rows[self.deposition_start..]
    }

    pub fn history(&self) -> Vec<HistoryPoint> {
        self.rows[self.deposition_start..]
            .iter()
            .zip(&self.arc_lengths[self.deposition_start..])
            .map(|(r, &s)| HistoryPoint {
                time: r.t,
                temperature: r.temperature,
                position: s,
            })
            .collect()
    }

    pub fn max_temperature(&self) -> f64 {
        self.deposition_rows()
            .iter()
            .map(|r| r.temperature)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_power(&self) -> f64 {
        let rows = self.deposition_rows();
        rows.iter().map(|r| r.power).sum::<f64>() / rows.len().max(1) as f64
    }

    /// Mean deposition power for each layer, index 0 being layer 1.
    pub fn layer_mean_power(&self) -> Vec<f64> {
        let layers = self.path.layer_count();
        let mut sum = vec![0.0; layers];
        let mut count = vec![0usize; layers];
        for r in self.deposition_rows() {
            sum[r.layer - 1] += r.power;
            count[r.layer - 1] += 1;
        }
        sum.iter()
            .zip(&count)
            .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect()
    }

    /// Nearest path corner to the failure position.
    pub fn failure_corner(&self) -> Option<usize> {
        self.outcome
            .failure_position
            .and_then(|s| self.path.nearest_corner(s))
            .map(|c| c.index)
    }
}

/// Drives the plant along `path` at the configured scan speed.
///
/// Each tick: read the sensor (held through dropouts), ask the power source
/// for a command, record the row, then integrate one sample.
pub fn run_path(
    model: &PlantModel,
    path: &Path,
    source: &mut dyn PowerSource,
    sensor: &mut dyn Sensor,
    options: RunOptions,
) -> Result<RunRecord> {
    let c = &model.config;
    let tracker = PathTracker::new(path.clone(), c);
    let mut state = ProcessState::at_rest(c.start_temp(), c.filament_diameter);
    tracker.place(&mut state, 0.0);

    let motion_steps = (path.total_length() / (c.scan_speed * c.dt)).round() as usize;
    let max_preheat = (options.max_preheat_s / c.dt).round() as usize;
    let mut held: Option<f64> = None;
    let mut moving = options.preheat_target.is_none();
    let mut record = RunRecord {
        rows: Vec::with_capacity(motion_steps + 1),
        measurements: Vec::with_capacity(motion_steps + 1),
        arc_lengths: Vec::with_capacity(motion_steps + 1),
        deposition_start: 0,
        outcome: DepositionOutcome::stable(),
        path: path.clone(),
    };
    let mut k = 0usize;
    let mut step_in_motion = 0usize;
    loop {
        if let Some(v) = sensor.measure(&state)? {
            held = Some(v);
        }
        let meas = held.unwrap_or(f64::NAN);
        if !moving {
            let reached = options.preheat_target.is_some_and(|target| meas >= target);
            if reached || k >= max_preheat {
                moving = true;
                record.deposition_start = record.rows.len();
            }
        }
        let cmd = source.command(k, state.time, meas)?;
        if !cmd.is_finite() {
            return Err(Error::NonFinite(
                "power source returned a non-finite command",
            ));
        }
        let (next_t, applied) = model.advance_temperature(&state, cmd)?;
        let eff = model.effective_params(&state);
        record.rows.push(TrajectoryRow {
            t: state.time,
            x: state.position[0],
            y: state.position[1],
            z: state.position[2],
            layer: state.layer,
            temperature: state.temperature,
            power: applied,
            b_eff: eff.gain,
            corner_flag: state.corner_distance <= c.corner.radius_mm,
        });
        record.measurements.push(meas);
        record.arc_lengths.push(state.arc_length);
        if !next_t.is_finite() {
            return Err(Error::NonFinite("work-zone temperature"));
        }
        if moving && step_in_motion + 1 >= motion_steps {
            break;
        }
        state.temperature = next_t;
        k += 1;
        state.time = k as f64 * c.dt;
        if moving {
            step_in_motion += 1;
            let s = (step_in_motion as f64 * c.scan_speed * c.dt).min(path.total_length());
            tracker.place(&mut state, s);
        }
    }
    record.outcome = classify(&record.history(), &c.thresholds)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{zoh_discretize, ContinuousFirstOrder};
    use approx::assert_relative_eq;

    fn nominal() -> PlantModel {
        PlantModel::reference(ScenarioConfig {
            initial_temp: Some(888.0),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn nominal_params_match_identified_model() {
        let m = nominal();
        let s = ProcessState::at_rest(888.0, 1.0);
        let e = m.effective_params(&s);
        assert_relative_eq!(e.gain, 3.69, max_relative = 1e-12);
        assert_eq!(e.time_constant, 0.53);
        assert_relative_eq!(e.baseline, 730.806, max_relative = 1e-12);
    }

    #[test]
    fn gain_at_three_mm() {
        let beam = GaussianBeam::dgf_focus();
        let c = ScenarioConfig {
            distance_from_focus: 3.0,
            ..Default::default()
        };
        let w7 = beam.radius_at(7e-3);
        let w3 = beam.radius_at(3e-3);
        assert_relative_eq!(
            focus_gain(&c, &beam, 3.0),
            3.69 * (w7 / w3).powi(2),
            max_relative = 1e-12
        );
        assert!((focus_gain(&c, &beam, 3.0) - 20.1).abs() < 0.1);
    }

    #[test]
    fn corner_bump_shape() {
        let c = ScenarioConfig {
            corner: CornerEffect {
                amplitude: 0.2,
                radius_mm: 2.0,
            },
            ..Default::default()
        };
        let m = PlantModel::reference(c).unwrap();
        assert_eq!(m.corner_multiplier(f64::INFINITY), 1.0);
        assert_eq!(m.corner_multiplier(2.0), 1.0);
        assert_relative_eq!(m.corner_multiplier(0.0), 1.2, max_relative = 1e-12);
        assert_relative_eq!(m.corner_multiplier(1.0), 1.1, max_relative = 1e-12);
    }

    #[test]
    fn holding_nominal_power_keeps_nominal_temp() {
        let m = nominal();
        let path = Path::straight(10.0).unwrap();
        let mut sensor = DirectSensor::new(0.0, 0).unwrap();
        let rec = run_path(
            &m,
            &path,
            &mut ConstantPower(42.6),
            &mut sensor,
            RunOptions::default(),
        )
        .unwrap();
        assert!(rec
            .rows
            .iter()
            .all(|r| (r.temperature - 888.0).abs() < 1e-9));
    }

    #[test]
    fn step_response() {
        let m = nominal();
        let path = Path::straight(20.0).unwrap();
        let mut sensor = DirectSensor::new(0.0, 0).unwrap();
        let rec = run_path(
            &m,
            &path,
            &mut ConstantPower(52.6),
            &mut sensor,
            RunOptions::default(),
        )
        .unwrap();
        let final_t = rec.rows.last().unwrap().temperature;
        assert_relative_eq!(final_t, 888.0 + 36.9, epsilon = 1e-6);
        // continuous response at 0.53 s, sampled at 0.5 and 0.6 s
        let frac = |t: f64| 1.0 - (-t / 0.53f64).exp();
        assert_relative_eq!(
            rec.rows[5].temperature - 888.0,
            36.9 * frac(0.5),
            max_relative = 1e-9
        );
        assert!(rec.rows[5].temperature - 888.0 < 0.632 * 36.9);
        assert!(rec.rows[6].temperature - 888.0 > 0.632 * 36.9);
    }

    #[test]
    fn linear_equivalence_with_zoh() {
        let m = nominal();
        let path = Path::straight(30.0).unwrap();
        let u: Vec<f64> = (0..600)
            .map(|k| if (k / 7) % 3 == 0 { 60.0 } else { 30.0 })
            .collect();
        let mut sensor = DirectSensor::new(0.0, 0).unwrap();
        let rec = run_path(
            &m,
            &path,
            &mut SchedulePower(u.clone()),
            &mut sensor,
            RunOptions::default(),
        )
        .unwrap();
        let tf = zoh_discretize(&ContinuousFirstOrder::new(3.69, 0.53).unwrap(), 0.1).unwrap();
        let du: Vec<f64> = u.iter().map(|l| l - 42.6).collect();
        let dy = tf.simulate(&du).unwrap();
        for (k, r) in rec.rows.iter().enumerate() {
            assert!((r.temperature - 888.0 - dy[k]).abs() < 1e-9, "k {k}");
        }
    }

    #[test]
    fn affine_steady_state() {
        let m = nominal();
        let e = m.effective_params(&ProcessState::at_rest(0.0, 1.0));
        assert_relative_eq!(
            e.steady_state(35.0) - e.steady_state(30.0),
            e.gain * 5.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn nonfinite_power_rejected() {
        let m = nominal();
        assert!(m
            .advance_temperature(&ProcessState::at_rest(888.0, 1.0), f64::NAN)
            .is_err());
    }

    #[test]
    fn power_is_clamped() {
        let m = nominal();
        let (_, l) = m
            .advance_temperature(&ProcessState::at_rest(888.0, 1.0), 900.0)
            .unwrap();
        assert_eq!(l, 500.0);
    }

    #[test]
    fn straight_track_sample_count() {
        let m = nominal();
        let path = Path::straight(60.0).unwrap();
        let mut sensor = DirectSensor::new(0.0, 0).unwrap();
        let rec = run_path(
            &m,
            &path,
            &mut ConstantPower(40.0),
            &mut sensor,
            RunOptions::default(),
        )
        .unwrap();
        assert_eq!(rec.rows.len(), 1200);
        assert_relative_eq!(rec.rows.last().unwrap().t, 119.9, max_relative = 1e-12);
        assert_relative_eq!(rec.rows.last().unwrap().x, 59.95, max_relative = 1e-12);
    }

    #[test]
    fn square_corners() {
        let p = Path::square_layers(20.0, 2, 0.8).unwrap();
        let arcs: Vec<f64> = p.corners().iter().map(|c| c.arc_length).collect();
        assert_eq!(
            arcs,
            vec![20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0]
        );
        assert_eq!(p.locate(90.0).position[2], -0.8);
    }

    #[test]
    fn wall_geometry() {
        let p = Path::wall(20.0, 16, 5.0, 0.6).unwrap();
        assert_eq!(p.corners().len(), 15);
        assert_eq!(p.corners()[0].arc_length, 25.0);
        assert_eq!(p.corners()[8].arc_length, 185.0);
        assert_relative_eq!(
            p.locate(p.total_length()).position[2],
            -9.0,
            max_relative = 1e-12
        );
        assert_eq!(p.locate(p.total_length()).layer, 16);
    }

    #[test]
    fn non_contiguous_path_rejected() {
        let segs = vec![
            Segment {
                start: [0.0; 3],
                end: [1.0, 0.0, 0.0],
                layer: 1,
            },
            Segment {
                start: [2.0, 0.0, 0.0],
                end: [3.0, 0.0, 0.0],
                layer: 1,
            },
        ];
        assert!(Path::new(segs).is_err());
    }

    fn hist(temps: &[f64]) -> Vec<HistoryPoint> {
        temps
            .iter()
            .enumerate()
            .map(|(k, &t)| HistoryPoint {
                time: k as f64 * 0.1,
                temperature: t,
                position: k as f64 * 0.05,
            })
            .collect()
    }

    #[test]
    fn classify_rules() {
        let th = Thresholds {
            wet_min: 900.0,
            detach_max: 1100.0,
            vaporize_max: 1250.0,
            ..Default::default()
        };
        assert_eq!(
            classify(&hist(&[950.0; 50]), &th).unwrap(),
            DepositionOutcome::stable()
        );
        assert_eq!(
            classify(&hist(&[800.0; 50]), &th).unwrap().classification,
            Classification::TooColdNoWet
        );
        assert_eq!(
            classify(&hist(&[870.0; 50]), &th).unwrap().classification,
            Classification::TooColdCurl
        );

        let mut t = vec![950.0; 50];
        for v in &mut t[10..20] {
            *v = 1150.0;
        }
        let o = classify(&hist(&t), &th).unwrap();
        assert_eq!(o.classification, Classification::Detached);
        assert_relative_eq!(o.failure_time.unwrap(), 1.5, max_relative = 1e-9);

        // a short spike does not detach
        let mut s = vec![950.0; 50];
        s[10] = 1150.0;
        s[11] = 1150.0;
        assert_eq!(
            classify(&hist(&s), &th).unwrap().classification,
            Classification::Stable
        );

        let mut v = vec![950.0; 50];
        v[10] = 1300.0;
        assert_eq!(
            classify(&hist(&v), &th).unwrap().classification,
            Classification::Vaporized
        );

        // simultaneous triggers go to the more severe outcome
        let zero_dwell = Thresholds {
            detach_dwell_s: 0.0,
            ..th
        };
        assert_eq!(
            classify(&hist(&v), &zero_dwell).unwrap().classification,
            Classification::Vaporized
        );
        assert!(classify(&[], &th).is_err());
    }

    #[test]
    fn diameter_draws_are_bounded_and_seeded() {
        let c = ScenarioConfig {
            noise: NoiseConfig {
                diameter_sigma: 0.3,
                ..Default::default()
            },
            seed: 9,
            ..Default::default()
        };
        let a = PathTracker::new(Path::straight(100.0).unwrap(), &c);
        let b = PathTracker::new(Path::straight(100.0).unwrap(), &c);
        for s in 0..100 {
            let d = a.diameter_at(s as f64);
            assert!((DIAMETER_MIN_MM..=DIAMETER_MAX_MM).contains(&d));
            assert_eq!(d, b.diameter_at(s as f64));
        }
    }

    #[test]
    fn deflection_decays_after_corner() {
        let c = ScenarioConfig {
            noise: NoiseConfig {
                deflection_amplitude_mm: 2.0,
                deflection_decay_s: 4.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let t = PathTracker::new(Path::square_layers(20.0, 1, 0.8).unwrap(), &c);
        let mut s = ProcessState::at_rest(0.0, 1.0);
        t.place(&mut s, 10.0);
        assert_eq!(s.deflection_offset, 0.0);
        t.place(&mut s, 20.0);
        assert_relative_eq!(s.deflection_offset, 2.0, max_relative = 1e-12);
        assert_eq!(s.deflection_direction, [-1.0, 0.0]);
        t.place(&mut s, 22.0);
        assert_relative_eq!(
            s.deflection_offset,
            2.0 * (-1.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn offset_coupling_lowers_gain() {
        let c = ScenarioConfig {
            noise: NoiseConfig {
                deflection_amplitude_mm: 1.5,
                deflection_coupling: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = PlantModel::reference(c).unwrap();
        assert_eq!(m.offset_multiplier(0.0), 1.0);
        assert!(m.offset_multiplier(1.0) < 1.0);
        assert!(m.offset_multiplier(1.5) < m.offset_multiplier(1.0));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let rows = vec![TrajectoryRow {
            t: 0.1,
            x: 1.0 / 3.0,
            y: 0.0,
            z: -0.6,
            layer: 2,
            temperature: 912.345678901,
            power: 41.0,
            b_eff: 3.69,
            corner_flag: true,
        }];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"t_s,x_mm,y_mm,z_mm,layer,T_C,L_W,b_eff,corner_flag\n"));
        assert_eq!(read_trajectory_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn bad_config_rejected() {
        let c = ScenarioConfig {
            thresholds: Thresholds {
                wet_min: 1200.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(PlantModel::reference(c).is_err());
        assert!(PlantModel::reference(ScenarioConfig {
            scan_speed: 0.0,
            ..Default::default()
        })
        .is_err());
    }
}
