use crate::error::{Error, Result};
use crate::plant::{Classification, CornerEffect, LayerEffect, NoiseConfig, Thresholds};
use crate::sysid::ExcitationKind;

use super::scenario::{PathKind, PowerMode, Scenario};

pub const PRESET_NAMES: &[&str] = &[
    "nominal",
    "track-df10-ol",
    "track-df10-cl",
    "track-df3-ol-10",
    "track-df3-ol-20",
    "track-df3-ol-30",
    "track-df3-cl",
    "wall-ol",
    "wall-cl",
    "wall-ol-df3",
    "wall-cl-df3",
    "chimney",
    "map",
    "map-wide",
    "sysid",
];

/// Cutoff power shared by single tracks, the map and the chimney.
const TRACK_CUTOFF_W: f64 = 17.0;
/// Thresholds calibrated against the single-track and map outcomes.
const TRACK_THRESHOLDS: Thresholds = Thresholds {
    wet_min: 825.0,
    detach_max: 980.0,
    vaporize_max: 1300.0,
    detach_dwell_s: 0.5,
    curl_band: 50.0,
};

const WALL_CUTOFF_W: f64 = 22.6;
const WALL_CORNER: CornerEffect = CornerEffect {
    amplitude: 0.1,
    radius_mm: 2.0,
};
const WALL_LAYER: LayerEffect = LayerEffect {
    jump: 8.1,
    slope: 16.4,
};

fn named(name: &str) -> Scenario {
    Scenario {
        name: name.into(),
        ..Default::default()
    }
}

fn track(name: &str, df: f64) -> Scenario {
    let mut s = named(name);
    s.config.distance_from_focus = df;
    s.config.cutoff_power = TRACK_CUTOFF_W;
    s.config.thresholds = TRACK_THRESHOLDS;
    s.config.noise = NoiseConfig {
        diameter_sigma: 0.03,
        measurement_sigma: 2.0,
        ..Default::default()
    };
    s.config.seed = 1;
    s.path.kind = PathKind::Track;
    s.path.length = 60.0;
    s
}

fn open_loop(mut s: Scenario, watts: f64, expected: Classification) -> Scenario {
    s.power.mode = PowerMode::Constant;
    s.power.watts = watts;
    s.expected = Some(expected);
    s
}

fn closed_loop(mut s: Scenario, reference: f64, expected: Classification) -> Scenario {
    s.power.mode = PowerMode::ClosedLoop;
    s.power.reference = reference;
    s.expected = Some(expected);
    s
}

fn wall(name: &str, df: f64) -> Scenario {
    let mut s = named(name);
    s.config.distance_from_focus = df;
    s.config.cutoff_power = WALL_CUTOFF_W;
    s.config.corner = WALL_CORNER;
    s.config.layer = WALL_LAYER;
    s.config.noise = NoiseConfig {
        diameter_sigma: 0.005,
        measurement_sigma: 2.0,
        ..Default::default()
    };
    s.config.interlayer_distance = 0.6;
    s.config.seed = 1;
    s.path.kind = PathKind::Wall;
    s.path.length = 20.0;
    s.path.layers = 16;
    s.path.lead_in = 5.0;
    s.path.layer_drop = 0.6;
    s
}

fn chimney() -> Scenario {
    let mut s = named("chimney");
    s.config.distance_from_focus = 4.0;
    s.config.cutoff_power = TRACK_CUTOFF_W;
    s.config.corner = CornerEffect {
        amplitude: 0.1,
        radius_mm: 2.0,
    };
    s.config.noise = NoiseConfig {
        deflection_amplitude_mm: 2.5,
        deflection_decay_s: 4.0,
        deflection_coupling: 0.0,
        ..Default::default()
    };
    s.config.interlayer_distance = 1.5;
    s.config.seed = 1;
    s.path.kind = PathKind::Square;
    s.path.length = 20.0;
    s.path.layers = 4;
    s.path.layer_drop = 0.8;
    s.camera.enabled = true;
    s.camera.hot_radius_mm = Some(3.0);
    s.camera.noise_sigma = 0.0;
    s.camera.nuc = true;
    closed_loop(s, 900.0, Classification::Stable)
}

fn map(name: &str) -> Scenario {
    let mut s = named(name);
    s.config.cutoff_power = TRACK_CUTOFF_W;
    s.config.thresholds = TRACK_THRESHOLDS;
    s.config.seed = 1;
    s.path.kind = PathKind::Track;
    s
}

fn sysid() -> Scenario {
    let mut s = named("sysid");
    s.config.initial_temp = Some(888.0);
    s.config.noise = NoiseConfig {
        diameter_sigma: 0.03,
        measurement_sigma: 2.0,
        ..Default::default()
    };
    s.config.seed = 1;
    s.path.kind = PathKind::Track;
    s.path.length = 60.0;
    s.power.mode = PowerMode::Excitation;
    s.power.excitation = ExcitationKind::Prbs;
    s
}

pub fn preset(name: &str) -> Result<Scenario> {
    use Classification::*;
    Ok(match name {
        "nominal" => {
            let mut s = named("nominal");
            s.config.initial_temp = Some(888.0);
            s.config.thresholds = TRACK_THRESHOLDS;
            s.expected = Some(Stable);
            s
        }
        "track-df10-ol" => open_loop(track(name, 10.0), 70.0, TooColdCurl),
        "track-df10-cl" => closed_loop(track(name, 10.0), 800.0, Stable),
        "track-df3-ol-10" => open_loop(track(name, 3.0), 10.0, TooColdNoWet),
        "track-df3-ol-20" => open_loop(track(name, 3.0), 20.0, Detached),
        "track-df3-ol-30" => open_loop(track(name, 3.0), 30.0, Detached),
        "track-df3-cl" => closed_loop(track(name, 3.0), 850.0, Stable),
        "wall-ol" => open_loop(wall(name, 5.0), 40.0, Detached),
        "wall-cl" => closed_loop(wall(name, 5.0), 940.0, Stable),
        "wall-ol-df3" => open_loop(wall(name, 3.0), 40.0, Detached),
        "wall-cl-df3" => closed_loop(wall(name, 3.0), 940.0, Stable),
        "chimney" => chimney(),
        "map" => map(name),
        "map-wide" => {
            let mut s = map(name);
            s.map.l_min = 10.0;
            s.map.l_max = 70.0;
            s.map.df_min = 3.0;
            s.map.df_max = 10.0;
            s
        }
        "sysid" => sysid(),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; known: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}
