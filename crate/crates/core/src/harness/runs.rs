use std::thread;

use crate::control::{control_step, design, ControllerDesign, ControllerState, OperatingPoint};
use crate::error::{domain, Error, Result};
use crate::lti::{zoh_discretize, ContinuousFirstOrder, DiscreteTransferFunction};
use crate::optics::GaussianBeam;
use crate::plant::{
    run_path, Classification, ConstantPower, DepositionOutcome, DirectSensor, Path, PlantModel,
    PowerSource, ProcessState, RunOptions, RunRecord, SchedulePower, Sensor,
};
use crate::sensing::{
    hottest_n_mean, nuc_gate, render_frame, roi_mean, Background, HotSpot, RoiSpec, FRAME_HEIGHT,
    FRAME_WIDTH, PIXEL_PITCH_MM,
};
use crate::sysid::{
    fit_first_order, fit_percent, gen_chirp, gen_prbs, gen_sine, period_from_angular, trim_track,
    ExcitationKind, ExcitationSignal, IdentifiedModel,
};

use super::scenario::{DesignPlant, PathKind, PowerMode, Scenario, SineUnits};

/// Closed-loop laser power from the pole-placement controller.
pub struct ClosedLoopPower {
    pub design: ControllerDesign,
    pub state: ControllerState,
    pub reference: f64,
    pub faults: usize,
}

impl ClosedLoopPower {
    pub fn new(design: ControllerDesign, reference: f64) -> Self {
        let state = ControllerState::reset(&design);
        Self {
            design,
            state,
            reference,
            faults: 0,
        }
    }
}

impl PowerSource for ClosedLoopPower {
    fn command(&mut self, _k: usize, _t: f64, measurement: f64) -> Result<f64> {
        let (cmd, next) = control_step(
            &self.design,
            &self.state,
            self.reference,
            self.reference,
            measurement,
        )?;
        if next.fault {
            self.faults += 1;
        }
        self.state = next;
        Ok(cmd)
    }
}

enum Source {
    Constant(ConstantPower),
    Schedule(SchedulePower),
    Closed(ClosedLoopPower),
}

impl PowerSource for Source {
    fn command(&mut self, k: usize, t: f64, measurement: f64) -> Result<f64> {
        match self {
            Source::Constant(p) => p.command(k, t, measurement),
            Source::Schedule(p) => p.command(k, t, measurement),
            Source::Closed(p) => p.command(k, t, measurement),
        }
    }
}

pub fn build_path(s: &Scenario) -> Result<Path> {
    let p = &s.path;
    match p.kind {
        PathKind::Track => Path::straight(p.length),
        PathKind::Wall => Path::wall(p.length, p.layers, p.lead_in, p.layer_drop),
        PathKind::Square => Path::square_layers(p.length, p.layers, p.layer_drop),
    }
}

/// Controller for the scenario. The local design uses the first-layer,
/// corner-free plant at the scenario's focus offset and takes its operating
/// point from the reference.
pub fn build_design(s: &Scenario, model: &PlantModel) -> Result<ControllerDesign> {
    let c = &model.config;
    let taus = [s.controller.tau_fast, s.controller.tau_slow];
    match s.controller.plant {
        DesignPlant::Reference => {
            let plant = DiscreteTransferFunction::first_order(0.6304, 0.8296, c.dt)?;
            design(
                &plant,
                &taus,
                c.limits,
                OperatingPoint {
                    power: c.nominal_power,
                    temperature: c.nominal_temp,
                },
            )
        }
        DesignPlant::Local => {
            let gain = model.focus_gain();
            let plant = zoh_discretize(&ContinuousFirstOrder::new(gain, c.time_constant)?, c.dt)?;
            let base = model
                .effective_params(&ProcessState::at_rest(0.0, c.filament_diameter))
                .baseline;
            let power = c.limits.clamp((s.power.reference - base) / gain);
            design(
                &plant,
                &taus,
                c.limits,
                OperatingPoint {
                    power,
                    temperature: s.power.reference,
                },
            )
        }
    }
}

pub fn excitation_signal(
    s: &Scenario,
    kind: ExcitationKind,
    duration: f64,
    seed: u64,
) -> Result<ExcitationSignal> {
    let y = &s.sysid;
    let dt = s.config.dt;
    match kind {
        ExcitationKind::Prbs => gen_prbs(y.prbs_low, y.prbs_high, y.prbs_dwell, duration, dt, seed),
        ExcitationKind::Chirp => {
            gen_chirp(y.chirp_f0, y.chirp_f1, duration, y.mean, y.amplitude, dt)
        }
        ExcitationKind::Sine => {
            let period = match y.sine_units {
                SineUnits::Seconds => y.sine_period,
                SineUnits::RadPerSecond => period_from_angular(y.sine_period),
            };
            gen_sine(period, y.mean, y.amplitude, duration, dt)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraSample {
    pub t: f64,
    pub hot: f64,
    pub roi: f64,
    pub available: bool,
}

/// Renders a frame per tick and reports the hottest-pixel mean; the ROI
/// reading is logged alongside. The work zone sits at a fixed frame pixel
/// (the stage moves under the head) and is displaced by filament deflection.
pub struct CameraSensor {
    hot_radius: f64,
    noise_sigma: f64,
    hottest_n: usize,
    background: Background,
    nominal: (f64, f64),
    roi: RoiSpec,
    nuc: Option<(f64, f64)>,
    seed: u64,
    held: (f64, f64),
    pub trace: Vec<CameraSample>,
}

impl CameraSensor {
    pub fn new(s: &Scenario, beam: &GaussianBeam) -> Self {
        let c = &s.config;
        let hot_radius = s
            .camera
            .hot_radius_mm
            .unwrap_or(beam.radius_at(c.distance_from_focus * 1e-3) * 1e3);
        let nominal = (
            (FRAME_WIDTH / 2) as f64 * PIXEL_PITCH_MM + PIXEL_PITCH_MM / 2.0,
            (FRAME_HEIGHT / 2) as f64 * PIXEL_PITCH_MM + PIXEL_PITCH_MM / 2.0,
        );
        Self {
            hot_radius,
            noise_sigma: s.camera.noise_sigma,
            hottest_n: s.camera.hottest_n,
            background: Background::uniform(c.heatbed_temp),
            nominal,
            roi: RoiSpec::at_pixel_of(nominal.0, nominal.1, s.camera.roi_diameter_mm),
            nuc: s.camera.nuc.then_some((c.nuc_period, c.nuc_dwell)),
            seed: c.seed,
            held: (f64::NAN, f64::NAN),
            trace: Vec::new(),
        }
    }

    pub fn roi(&self) -> &RoiSpec {
        &self.roi
    }
}

impl Sensor for CameraSensor {
    fn measure(&mut self, state: &ProcessState) -> Result<Option<f64>> {
        let t = state.time;
        let available = self
            .nuc
            .is_none_or(|(period, dwell)| nuc_gate(t, period, dwell));
        if available {
            let d = state.deflection_direction;
            let spot = HotSpot {
                x_mm: self.nominal.0 + d[0] * state.deflection_offset,
                y_mm: self.nominal.1 + d[1] * state.deflection_offset,
                peak: state.temperature,
                radius_mm: self.hot_radius,
            };
            let frame = render_frame(&spot, &self.background, self.noise_sigma, self.seed, t)?;
            self.held = (
                hottest_n_mean(&frame, self.hottest_n)?,
                roi_mean(&frame, &self.roi)?,
            );
        }
        self.trace.push(CameraSample {
            t,
            hot: self.held.0,
            roi: self.held.1,
            available,
        });
        Ok(available.then_some(self.held.0))
    }
}

#[derive(Clone, Debug)]
pub struct Event {
    pub t: f64,
    pub name: &'static str,
    pub feed_rate: f64,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub record: RunRecord,
    pub design: Option<ControllerDesign>,
    pub camera: Option<Vec<CameraSample>>,
    pub events: Vec<Event>,
    pub controller_faults: usize,
}

impl ScenarioRun {
    pub fn outcome(&self) -> &DepositionOutcome {
        &self.record.outcome
    }
}

pub fn run_scenario(s: &Scenario) -> Result<ScenarioRun> {
    let beam = GaussianBeam::dgf_focus();
    let model = PlantModel::new(s.config.clone(), beam)?;
    let path = build_path(s)?;
    let c = &model.config;

    let mut design_out = None;
    let mut options = RunOptions::default();
    let mut source = match s.power.mode {
        PowerMode::Constant => Source::Constant(ConstantPower(s.power.watts)),
        PowerMode::Excitation => {
            let n = (path.total_length() / (c.scan_speed * c.dt)).round() as f64;
            let sig = excitation_signal(s, s.power.excitation, n * c.dt, c.seed)?;
            Source::Schedule(SchedulePower(sig.samples))
        }
        PowerMode::ClosedLoop => {
            let d = build_design(s, &model)?;
            design_out = Some(d.clone());
            if s.controller.preheat {
                options.preheat_target = Some(s.power.reference);
            }
            Source::Closed(ClosedLoopPower::new(d, s.power.reference))
        }
    };

    let (record, camera) = if s.camera.enabled {
        let mut cam = CameraSensor::new(s, &beam);
        let rec = run_path(&model, &path, &mut source, &mut cam, options)?;
        (rec, Some(cam.trace))
    } else {
        let mut direct = DirectSensor::new(c.noise.measurement_sigma, c.seed)?;
        (
            run_path(&model, &path, &mut source, &mut direct, options)?,
            None,
        )
    };
    let faults = match &source {
        Source::Closed(cl) => cl.faults,
        _ => 0,
    };

    let mut events = Vec::new();
    if options.preheat_target.is_some() {
        events.push(Event {
            t: record.rows[record.deposition_start].t,
            name: "deposition_start",
            feed_rate: c.feed_rate,
        });
    }
    if s.camera.enabled {
        let end = record.rows.last().map(|r| r.t).unwrap_or(0.0);
        events.push(Event {
            t: end,
            name: "retraction",
            feed_rate: s.camera.retraction_feed,
        });
    }
    Ok(ScenarioRun {
        record,
        design: design_out,
        camera,
        events,
        controller_faults: faults,
    })
}

pub fn run_track(s: &Scenario) -> Result<ScenarioRun> {
    expect_kind(s, PathKind::Track)?;
    run_scenario(s)
}

pub fn run_wall(s: &Scenario) -> Result<ScenarioRun> {
    expect_kind(s, PathKind::Wall)?;
    run_scenario(s)
}

pub fn run_chimney(s: &Scenario) -> Result<ScenarioRun> {
    expect_kind(s, PathKind::Square)?;
    if !s.camera.enabled {
        return Err(Error::Config(
            "chimney runs need camera.enabled = true".into(),
        ));
    }
    run_scenario(s)
}

fn expect_kind(s: &Scenario, kind: PathKind) -> Result<()> {
    if s.path.kind != kind {
        return Err(Error::Config(format!(
            "scenario `{}` has path.kind = {}, expected {kind}",
            s.name, s.path.kind
        )));
    }
    Ok(())
}

/// Per-corner comparison of the two extractors on a chimney run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerDip {
    pub corner: usize,
    pub t: f64,
    /// Largest `hot - roi` within the window after the corner.
    pub roi_dip: f64,
    /// Largest `|hot - reference|` within the same window.
    pub hot_deviation: f64,
}

pub fn corner_dips(run: &ScenarioRun, window_s: f64, reference: f64) -> Vec<CornerDip> {
    let Some(cam) = &run.camera else {
        return Vec::new();
    };
    let rec = &run.record;
    let start = rec.deposition_start;
    let mut out = Vec::new();
    for corner in rec.path.corners() {
        let Some(k0) =
            (start..rec.rows.len()).find(|&k| rec.arc_lengths[k] >= corner.arc_length - 1e-9)
        else {
            continue;
        };
        let t0 = rec.rows[k0].t;
        let window = cam[k0..].iter().take_while(|c| c.t <= t0 + window_s);
        let (dip, dev) = window.fold((f64::NEG_INFINITY, 0.0f64), |(dip, dev), c| {
            (dip.max(c.hot - c.roi), dev.max((c.hot - reference).abs()))
        });
        out.push(CornerDip {
            corner: corner.index,
            t: t0,
            roi_dip: dip,
            hot_deviation: dev,
        });
    }
    out
}

/// Largest deviation of the hottest-pixel reading from the reference
/// after deposition starts.
pub fn hot_deviation(run: &ScenarioRun, reference: f64) -> f64 {
    run.camera
        .as_ref()
        .map(|cam| {
            cam[run.record.deposition_start..]
                .iter()
                .map(|c| (c.hot - reference).abs())
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::NAN)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapCell {
    pub power: f64,
    pub df: f64,
    pub max_temperature: f64,
    pub classification: Classification,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub powers: Vec<f64>,
    pub dfs: Vec<f64>,
    /// Row-major with distance from focus as the outer index.
    pub cells: Vec<MapCell>,
}

impl MapResult {
    pub fn cell(&self, ip: usize, idf: usize) -> &MapCell {
        &self.cells[idf * self.powers.len() + ip]
    }

    pub fn find(&self, power: f64, df: f64) -> Option<&MapCell> {
        self.cells
            .iter()
            .find(|c| (c.power - power).abs() < 1e-9 && (c.df - df).abs() < 1e-9)
    }
}

pub fn axis(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max >= min) {
        return Err(Error::EmptyRange("map axis needs step > 0 and max >= min"));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| min + step * i as f64).collect())
}

/// Seed for map cell `index`, independent of evaluation order.
pub fn cell_seed(master: u64, index: usize) -> u64 {
    master ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn run_cell(s: &Scenario, power: f64, df: f64, index: usize) -> Result<MapCell> {
    let mut cell = s.clone();
    cell.config.distance_from_focus = df;
    cell.config.seed = cell_seed(s.config.seed, index);
    cell.power.mode = PowerMode::Constant;
    cell.power.watts = power;
    cell.path.kind = PathKind::Track;
    cell.path.length = s.map.track_length;
    cell.camera.enabled = false;
    let run = run_scenario(&cell)?;
    Ok(MapCell {
        power,
        df,
        max_temperature: run.record.max_temperature(),
        classification: run.record.outcome.classification,
    })
}

pub fn run_map(s: &Scenario) -> Result<MapResult> {
    let m = &s.map;
    let powers = axis(m.l_min, m.l_max, m.l_step)?;
    let dfs = axis(m.df_min, m.df_max, m.df_step)?;
    let jobs: Vec<(usize, f64, f64)> = dfs
        .iter()
        .flat_map(|&df| powers.iter().map(move |&p| (p, df)))
        .enumerate()
        .map(|(i, (p, df))| (i, p, df))
        .collect();
    let threads = m.threads.clamp(1, jobs.len().max(1));
    let mut cells: Vec<Option<MapCell>> = vec![None; jobs.len()];
    if threads == 1 {
        for &(i, p, df) in &jobs {
            cells[i] = Some(run_cell(s, p, df, i)?);
        }
    } else {
        let chunk = jobs.len().div_ceil(threads);
        let results: Vec<Result<Vec<(usize, MapCell)>>> = thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&(i, p, df)| Ok((i, run_cell(s, p, df, i)?)))
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(domain("map worker panicked")))
                })
                .collect()
        });
        for r in results {
            for (i, c) in r? {
                cells[i] = Some(c);
            }
        }
    }
    let cells = cells
        .into_iter()
        .map(|c| c.ok_or_else(|| domain("map cell missing")))
        .collect::<Result<_>>()?;
    Ok(MapResult { powers, dfs, cells })
}

#[derive(Clone, Debug)]
pub struct SysidSeries {
    pub kind: ExcitationKind,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub yhat: Vec<f64>,
    pub fit_percent: f64,
}

#[derive(Clone, Debug)]
pub struct SysidResult {
    pub model: IdentifiedModel,
    pub series: Vec<SysidSeries>,
}

impl SysidResult {
    pub fn fit(&self, kind: ExcitationKind) -> Option<f64> {
        self.series
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| s.fit_percent)
    }
}

fn excitation_run(s: &Scenario, kind: ExcitationKind, stream: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut run = s.clone();
    run.power.mode = PowerMode::Excitation;
    run.power.excitation = kind;
    run.config.seed = s.config.seed.wrapping_add(stream);
    run.camera.enabled = false;
    let r = run_scenario(&run)?;
    let u: Vec<f64> = r.record.rows.iter().map(|row| row.power).collect();
    trim_track(
        &u,
        &r.record.measurements,
        s.config.scan_speed,
        s.path.length,
        s.sysid.trim_mm,
        s.config.dt,
    )
}

/// Fits on the `fit_on` run and validates on the other two excitations.
pub fn run_sysid(s: &Scenario, fit_on: ExcitationKind) -> Result<SysidResult> {
    expect_kind(s, PathKind::Track)?;
    let dt = s.config.dt;
    let kinds = [
        ExcitationKind::Prbs,
        ExcitationKind::Chirp,
        ExcitationKind::Sine,
    ];
    let data = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| Ok((k, excitation_run(s, k, i as u64)?)))
        .collect::<Result<Vec<_>>>()?;
    let (_, (u_fit, y_fit)) = data
        .iter()
        .find(|(k, _)| *k == fit_on)
        .ok_or_else(|| domain("no fit data"))?;
    let mut model = fit_first_order(u_fit, y_fit, dt)?;
    model.source = format!("{fit_on} excitation, {}", model.source);
    let series = data
        .into_iter()
        .map(|(kind, (u, y))| {
            let yhat = model.simulate(&u, dt, y[0]);
            let fit = fit_percent(&y, &yhat)?;
            Ok(SysidSeries {
                kind,
                u,
                y,
                yhat,
                fit_percent: fit,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SysidResult { model, series })
}
