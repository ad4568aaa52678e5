//! Scenario presets, key-value configuration, experiment runners and file
//! outputs.

mod output;
mod presets;
mod runs;
mod scenario;

pub use output::{
    beam_summary, read_table, read_table_file, write_beam, write_design, write_manifest, write_map,
    write_run, write_sysid, write_trajectory_svg, BeamSummary, Table, ABSORPTION_OFFSETS_MM,
    QUOTED_SPOT_DIAMETER_AT_7MM, VERSION,
};
pub use presets::{preset, PRESET_NAMES};
pub use runs::{
    axis, build_design, build_path, cell_seed, corner_dips, excitation_signal, hot_deviation,
    run_chimney, run_map, run_scenario, run_sysid, run_track, run_wall, CameraSample, CameraSensor,
    ClosedLoopPower, CornerDip, Event, MapCell, MapResult, ScenarioRun, SysidResult, SysidSeries,
};
pub use scenario::{
    BeamSettings, CameraSettings, ControllerSettings, DesignPlant, MapSettings, PathKind,
    PathSettings, PowerMode, PowerSettings, Scenario, SineUnits, SysidSettings,
};
