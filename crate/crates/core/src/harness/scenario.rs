use std::fmt;
use std::path::Path as FsPath;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::plant::{Classification, ScenarioConfig};
use crate::sysid::ExcitationKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    Track,
    Wall,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerMode {
    Constant,
    ClosedLoop,
    Excitation,
}

/// Which plant the controller is designed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignPlant {
    /// ZOH of the local gain at the scenario's distance from focus.
    Local,
    /// The identified nominal model `0.6304 / (z - 0.8296)`.
    Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SineUnits {
    Seconds,
    RadPerSecond,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),* })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)*
                    other => Err(Error::Config(format!("unknown {} `{}`", stringify!($ty), other))),
                }
            }
        }
    };
}

text_enum!(PathKind { Track => "track", Wall => "wall", Square => "square" });
text_enum!(PowerMode { Constant => "constant", ClosedLoop => "closed_loop", Excitation => "excitation" });
text_enum!(DesignPlant { Local => "local", Reference => "reference" });
text_enum!(SineUnits { Seconds => "s", RadPerSecond => "rad_per_s" });

#[derive(Clone, Debug, PartialEq)]
pub struct PathSettings {
    pub kind: PathKind,
    /// Track length, wall length or square side (mm).
    pub length: f64,
    pub layers: usize,
    pub lead_in: f64,
    /// Z drop between layers used for the path geometry (mm).
    pub layer_drop: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerSettings {
    pub mode: PowerMode,
    pub watts: f64,
    pub reference: f64,
    pub excitation: ExcitationKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerSettings {
    pub tau_fast: f64,
    pub tau_slow: f64,
    pub plant: DesignPlant,
    pub preheat: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraSettings {
    pub enabled: bool,
    /// Hot-spot 1/e radius; `None` uses the beam radius at the focus offset.
    pub hot_radius_mm: Option<f64>,
    pub noise_sigma: f64,
    pub roi_diameter_mm: f64,
    pub hottest_n: usize,
    pub nuc: bool,
    pub retraction_feed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SysidSettings {
    pub prbs_low: f64,
    pub prbs_high: f64,
    pub prbs_dwell: f64,
    pub chirp_f0: f64,
    pub chirp_f1: f64,
    pub mean: f64,
    pub amplitude: f64,
    pub sine_period: f64,
    pub sine_units: SineUnits,
    pub trim_mm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapSettings {
    pub l_min: f64,
    pub l_max: f64,
    pub l_step: f64,
    pub df_min: f64,
    pub df_max: f64,
    pub df_step: f64,
    pub track_length: f64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamSettings {
    pub power: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub x_count: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub z_count: usize,
    pub free_length_mm: f64,
}

/// A complete, runnable experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: ScenarioConfig,
    pub path: PathSettings,
    pub power: PowerSettings,
    pub controller: ControllerSettings,
    pub camera: CameraSettings,
    pub sysid: SysidSettings,
    pub map: MapSettings,
    pub beam: BeamSettings,
    pub expected: Option<Classification>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            config: ScenarioConfig::default(),
            path: PathSettings {
                kind: PathKind::Track,
                length: 60.0,
                layers: 1,
                lead_in: 0.0,
                layer_drop: 0.6,
            },
            power: PowerSettings {
                mode: PowerMode::Constant,
                watts: 42.6,
                reference: 888.0,
                excitation: ExcitationKind::Prbs,
            },
            controller: ControllerSettings {
                tau_fast: 0.1,
                tau_slow: 0.5356,
                plant: DesignPlant::Local,
                preheat: true,
            },
            camera: CameraSettings {
                enabled: false,
                hot_radius_mm: None,
                noise_sigma: 0.0,
                roi_diameter_mm: 0.9,
                hottest_n: 200,
                nuc: true,
                retraction_feed: -2.0,
            },
            sysid: SysidSettings {
                prbs_low: 30.0,
                prbs_high: 60.0,
                prbs_dwell: 0.1,
                chirp_f0: 0.0,
                chirp_f1: 0.2,
                mean: 45.0,
                amplitude: 15.0,
                sine_period: 31.4,
                sine_units: SineUnits::Seconds,
                trim_mm: 10.0,
            },
            map: MapSettings {
                l_min: 20.0,
                l_max: 60.0,
                l_step: 10.0,
                df_min: 4.0,
                df_max: 9.0,
                df_step: 1.0,
                track_length: 10.0,
                threads: 1,
            },
            beam: BeamSettings {
                power: 40.0,
                x_min: -3.0,
                x_max: 3.0,
                x_count: 121,
                z_min: 3.0,
                z_max: 10.0,
                z_count: 71,
                free_length_mm: 5.0,
            },
            expected: None,
        }
    }
}

trait KvValue: Sized {
    fn to_kv(&self) -> String;
    fn from_kv(s: &str) -> Result<Self>;
}

fn parse_err(s: &str) -> Error {
    Error::Config(format!("cannot parse `{s}`"))
}

macro_rules! kv_via_fromstr {
    ($($t:ty),*) => {$(
        impl KvValue for $t {
            fn to_kv(&self) -> String { self.to_string() }
            fn from_kv(s: &str) -> Result<Self> { s.parse().map_err(|_| parse_err(s)) }
        }
    )*};
}

kv_via_fromstr!(
    f64,
    u64,
    usize,
    bool,
    String,
    PathKind,
    PowerMode,
    DesignPlant,
    SineUnits,
    ExcitationKind,
    Classification
);

impl<T: KvValue> KvValue for Option<T> {
    fn to_kv(&self) -> String {
        match self {
            Some(v) => v.to_kv(),
            None => "none".into(),
        }
    }
    fn from_kv(s: &str) -> Result<Self> {
        if s == "none" {
            Ok(None)
        } else {
            T::from_kv(s).map(Some)
        }
    }
}

macro_rules! kv_table {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        fn entries(s: &Scenario) -> Vec<(&'static str, String)> {
            vec![$(($key, KvValue::to_kv(&s.$($field).+))),*]
        }

        fn set_entry(s: &mut Scenario, key: &str, value: &str) -> Result<()> {
            match key {
                $($key => {
                    s.$($field).+ = KvValue::from_kv(value)
                        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))?;
                })*
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
            Ok(())
        }
    };
}

kv_table! {
    "name" => name,
    "expected" => expected,
    "scan_speed" => config.scan_speed,
    "feed_rate" => config.feed_rate,
    "filament_diameter" => config.filament_diameter,
    "distance_from_focus" => config.distance_from_focus,
    "interlayer_distance" => config.interlayer_distance,
    "heatbed_temp" => config.heatbed_temp,
    "nominal_power" => config.nominal_power,
    "nominal_temp" => config.nominal_temp,
    "reference_gain" => config.reference_gain,
    "reference_df" => config.reference_df,
    "time_constant" => config.time_constant,
    "cutoff_power" => config.cutoff_power,
    "baseline_temp" => config.baseline_temp,
    "initial_temp" => config.initial_temp,
    "thresholds.wet_min" => config.thresholds.wet_min,
    "thresholds.detach_max" => config.thresholds.detach_max,
    "thresholds.vaporize_max" => config.thresholds.vaporize_max,
    "thresholds.detach_dwell_s" => config.thresholds.detach_dwell_s,
    "thresholds.curl_band" => config.thresholds.curl_band,
    "noise.diameter_sigma" => config.noise.diameter_sigma,
    "noise.diameter_segment_mm" => config.noise.diameter_segment_mm,
    "noise.measurement_sigma" => config.noise.measurement_sigma,
    "noise.deflection_amplitude_mm" => config.noise.deflection_amplitude_mm,
    "noise.deflection_decay_s" => config.noise.deflection_decay_s,
    "noise.deflection_coupling" => config.noise.deflection_coupling,
    "corner.amplitude" => config.corner.amplitude,
    "corner.radius_mm" => config.corner.radius_mm,
    "layer.jump" => config.layer.jump,
    "layer.slope" => config.layer.slope,
    "limits.min" => config.limits.min,
    "limits.max" => config.limits.max,
    "nuc.period" => config.nuc_period,
    "nuc.dwell" => config.nuc_dwell,
    "dt" => config.dt,
    "seed" => config.seed,
    "path.kind" => path.kind,
    "path.length" => path.length,
    "path.layers" => path.layers,
    "path.lead_in" => path.lead_in,
    "path.layer_drop" => path.layer_drop,
    "power.mode" => power.mode,
    "power.watts" => power.watts,
    "power.reference" => power.reference,
    "power.excitation" => power.excitation,
    "controller.tau_fast" => controller.tau_fast,
    "controller.tau_slow" => controller.tau_slow,
    "controller.plant" => controller.plant,
    "controller.preheat" => controller.preheat,
    "camera.enabled" => camera.enabled,
    "camera.hot_radius_mm" => camera.hot_radius_mm,
    "camera.noise_sigma" => camera.noise_sigma,
    "camera.roi_diameter_mm" => camera.roi_diameter_mm,
    "camera.hottest_n" => camera.hottest_n,
    "camera.nuc" => camera.nuc,
    "camera.retraction_feed" => camera.retraction_feed,
    "sysid.prbs_low" => sysid.prbs_low,
    "sysid.prbs_high" => sysid.prbs_high,
    "sysid.prbs_dwell" => sysid.prbs_dwell,
    "sysid.chirp_f0" => sysid.chirp_f0,
    "sysid.chirp_f1" => sysid.chirp_f1,
    "sysid.mean" => sysid.mean,
    "sysid.amplitude" => sysid.amplitude,
    "sysid.sine_period" => sysid.sine_period,
    "sysid.sine_units" => sysid.sine_units,
    "sysid.trim_mm" => sysid.trim_mm,
    "map.l_min" => map.l_min,
    "map.l_max" => map.l_max,
    "map.l_step" => map.l_step,
    "map.df_min" => map.df_min,
    "map.df_max" => map.df_max,
    "map.df_step" => map.df_step,
    "map.track_length" => map.track_length,
    "map.threads" => map.threads,
    "beam.power" => beam.power,
    "beam.x_min" => beam.x_min,
    "beam.x_max" => beam.x_max,
    "beam.x_count" => beam.x_count,
    "beam.z_min" => beam.z_min,
    "beam.z_max" => beam.z_max,
    "beam.z_count" => beam.z_count,
    "beam.free_length_mm" => beam.free_length_mm,
}

impl Scenario {
    /// Every key with its current value, in a fixed order.
    pub fn to_entries(&self) -> Vec<(&'static str, String)> {
        entries(self)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        set_entry(self, key.trim(), value.trim())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &FsPath) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    /// `KEY=VALUE` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
        self.set(k, v)
    }

    pub fn to_text(&self) -> String {
        self.to_entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
