use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path as FsPath, PathBuf};

use crate::control::ControllerDesign;
use crate::error::{Error, Result};
use crate::optics::{
    absorption_curve, expander_chain, fiber_beam, field_grid, forming_head_chain, propagate,
    AxisRange, GaussianBeam,
};
use crate::plant::{write_trajectory_csv, TrajectoryRow};
use crate::sysid::{write_series_csv, SUMMARY_HEADER};

use super::runs::{MapResult, ScenarioRun, SysidResult};
use super::scenario::Scenario;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn create(dir: &FsPath, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Full resolved configuration, seed and version for a run.
pub fn write_manifest(dir: &FsPath, command: &str, scenario: &Scenario) -> Result<PathBuf> {
    let mut w = create(dir, "manifest.txt")?;
    writeln!(w, "# dgf run manifest")?;
    writeln!(w, "version = {VERSION}")?;
    writeln!(w, "command = {command}")?;
    w.write_all(scenario.to_text().as_bytes())?;
    w.flush()?;
    Ok(dir.join("manifest.txt"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

pub fn write_run(dir: &FsPath, run: &ScenarioRun) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let rec = &run.record;

    write_trajectory_csv(create(dir, "trajectory.csv")?, &rec.rows)?;
    files.push(dir.join("trajectory.csv"));

    let mut s = create(dir, "summary.txt")?;
    let o = &rec.outcome;
    writeln!(s, "classification = {}", o.classification)?;
    writeln!(s, "failure_time_s = {}", opt(o.failure_time))?;
    writeln!(s, "failure_position_mm = {}", opt(o.failure_position))?;
    writeln!(
        s,
        "failure_corner = {}",
        rec.failure_corner()
            .map(|c| c.to_string())
            .unwrap_or("none".into())
    )?;
    writeln!(s, "max_temperature_C = {}", rec.max_temperature())?;
    writeln!(s, "mean_power_W = {}", rec.mean_power())?;
    writeln!(
        s,
        "deposition_start_s = {}",
        rec.rows[rec.deposition_start].t
    )?;
    writeln!(s, "controller_faults = {}", run.controller_faults)?;
    s.flush()?;
    files.push(dir.join("summary.txt"));

    let mut w = csv::Writer::from_writer(create(dir, "layer_power.csv")?);
    w.write_record(["layer", "mean_power_W"])?;
    for (i, p) in rec.layer_mean_power().iter().enumerate() {
        w.write_record([(i + 1).to_string(), p.to_string()])?;
    }
    w.flush()?;
    files.push(dir.join("layer_power.csv"));

    if let Some(d) = &run.design {
        write_design(dir, d)?;
        files.push(dir.join("design.txt"));
    }

    if let Some(cam) = &run.camera {
        let mut w = csv::Writer::from_writer(create(dir, "sensing.csv")?);
        w.write_record(["t_s", "T_hot200_C", "T_roi_C", "L_W", "available"])?;
        for (c, row) in cam.iter().zip(&rec.rows) {
            w.write_record([
                c.t.to_string(),
                c.hot.to_string(),
                c.roi.to_string(),
                row.power.to_string(),
                (c.available as u8).to_string(),
            ])?;
        }
        w.flush()?;
        files.push(dir.join("sensing.csv"));
    }

    if !run.events.is_empty() {
        let mut w = csv::Writer::from_writer(create(dir, "events.csv")?);
        w.write_record(["t_s", "event", "feed_rate_mm_per_s"])?;
        for e in &run.events {
            w.write_record([e.t.to_string(), e.name.to_string(), e.feed_rate.to_string()])?;
        }
        w.flush()?;
        files.push(dir.join("events.csv"));
    }
    Ok(files)
}

pub fn write_design(dir: &FsPath, d: &ControllerDesign) -> Result<PathBuf> {
    let mut w = create(dir, "design.txt")?;
    d.write_report(&mut w)?;
    w.flush()?;
    Ok(dir.join("design.txt"))
}

pub fn write_map(dir: &FsPath, map: &MapResult) -> Result<PathBuf> {
    let mut w = csv::Writer::from_writer(create(dir, "map.csv")?);
    w.write_record(["L_W", "d_f_mm", "T_max_C", "classification"])?;
    for c in &map.cells {
        w.write_record([
            c.power.to_string(),
            c.df.to_string(),
            c.max_temperature.to_string(),
            c.classification.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(dir.join("map.csv"))
}

pub fn write_sysid(dir: &FsPath, result: &SysidResult, dt: f64) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for s in &result.series {
        let name = format!("sysid_{}.csv", s.kind);
        write_series_csv(create(dir, &name)?, dt, &s.u, &s.y, &s.yhat)?;
        files.push(dir.join(name));
    }
    let m = &result.model;
    let mut w = csv::Writer::from_writer(create(dir, "sysid_summary.csv")?);
    w.write_record(SUMMARY_HEADER)?;
    for s in &result.series {
        w.write_record([
            s.kind.to_string(),
            m.gain.to_string(),
            m.time_constant.to_string(),
            m.nominal_temp.to_string(),
            m.nominal_power.to_string(),
            s.fit_percent.to_string(),
        ])?;
    }
    w.flush()?;
    files.push(dir.join("sysid_summary.csv"));
    Ok(files)
}

/// Beam numbers reported by the `beam` command, SI units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamSummary {
    pub expanded_diameter: f64,
    pub waist_radius: f64,
    pub rayleigh_range: f64,
    pub radius_at_4mm: f64,
    pub radius_at_9mm: f64,
    /// 1/e^2 diameter at the 7 mm working distance.
    pub spot_diameter_at_7mm: f64,
}

/// Spot diameter quoted for the 7 mm working distance.
pub const QUOTED_SPOT_DIAMETER_AT_7MM: f64 = 3.5e-3;

pub fn beam_summary() -> Result<BeamSummary> {
    let expanded = propagate(&fiber_beam(), &expander_chain())?;
    let focus = propagate(&fiber_beam(), &forming_head_chain(0.0))?;
    Ok(BeamSummary {
        expanded_diameter: 2.0 * expanded.waist_radius,
        waist_radius: focus.waist_radius,
        rayleigh_range: focus.rayleigh_range(),
        radius_at_4mm: focus.radius_at(4e-3),
        radius_at_9mm: focus.radius_at(9e-3),
        spot_diameter_at_7mm: 2.0 * focus.radius_at(7e-3),
    })
}

/// Focus offsets (mm) tabulated in `absorption.csv`.
pub const ABSORPTION_OFFSETS_MM: [f64; 8] = [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];

/// Writes `beam.txt`, `beam_field.csv` and `absorption.csv`.
pub fn write_beam(dir: &FsPath, scenario: &Scenario) -> Result<Vec<PathBuf>> {
    let b = &scenario.beam;
    let sum = beam_summary()?;
    let mut w = create(dir, "beam.txt")?;
    writeln!(w, "expanded_diameter_mm = {}", sum.expanded_diameter * 1e3)?;
    writeln!(w, "waist_radius_um = {}", sum.waist_radius * 1e6)?;
    writeln!(w, "rayleigh_range_um = {}", sum.rayleigh_range * 1e6)?;
    writeln!(w, "radius_at_4mm_mm = {}", sum.radius_at_4mm * 1e3)?;
    writeln!(w, "radius_at_9mm_mm = {}", sum.radius_at_9mm * 1e3)?;
    writeln!(
        w,
        "spot_diameter_at_7mm_mm = {}",
        sum.spot_diameter_at_7mm * 1e3
    )?;
    writeln!(
        w,
        "quoted_spot_diameter_at_7mm_mm = {}",
        QUOTED_SPOT_DIAMETER_AT_7MM * 1e3
    )?;
    w.flush()?;

    let beam = GaussianBeam::dgf_focus();
    let grid = field_grid(
        &beam,
        b.power,
        AxisRange::new(b.x_min, b.x_max, b.x_count),
        AxisRange::new(b.z_min, b.z_max, b.z_count),
    )?;
    let mut f = create(dir, "beam_field.csv")?;
    grid.write_csv(&mut f)?;
    f.flush()?;

    let angles_deg: Vec<f64> = (0..=30).map(f64::from).collect();
    let angles: Vec<f64> = angles_deg.iter().map(|a| a.to_radians()).collect();
    let diameter = scenario.config.filament_diameter * 1e-3;
    let free = b.free_length_mm * 1e-3;
    let curves = ABSORPTION_OFFSETS_MM
        .iter()
        .map(|df| absorption_curve(&beam, df * 1e-3, diameter, free, &angles))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(create(dir, "absorption.csv")?);
    let mut header = vec!["angle_deg".to_string()];
    header.extend(
        ABSORPTION_OFFSETS_MM
            .iter()
            .map(|df| format!("df{df}_percent")),
    );
    w.write_record(&header)?;
    for (i, a) in angles_deg.iter().enumerate() {
        let mut rec = vec![a.to_string()];
        rec.extend(curves.iter().map(|c| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(["beam.txt", "beam_field.csv", "absorption.csv"]
        .iter()
        .map(|n| dir.join(n))
        .collect())
}

/// Two-panel line plot of temperature and laser power against time.
pub fn write_trajectory_svg(dir: &FsPath, rows: &[TrajectoryRow], title: &str) -> Result<PathBuf> {
    const W: f64 = 800.0;
    const H: f64 = 240.0;
    const PAD: f64 = 50.0;
    let mut w = create(dir, "trajectory.svg")?;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{}" font-family="sans-serif" font-size="12">"#,
        2.0 * H + 30.0
    )?;
    writeln!(w, r#"<text x="{PAD}" y="18">{}</text>"#, escape(title))?;
    let t_max = rows.last().map_or(1.0, |r| r.t.max(1e-9));
    let panels: [(&str, &str, fn(&TrajectoryRow) -> f64); 2] = [
        ("T (C)", "#c0392b", |r| r.temperature),
        ("L (W)", "#2c6fbb", |r| r.power),
    ];
    for (i, (label, colour, get)) in panels.iter().enumerate() {
        let top = 30.0 + i as f64 * H;
        let (lo, hi) = rows
            .iter()
            .map(get)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, lo + 1.0)
        };
        let sx = |t: f64| PAD + (W - 2.0 * PAD) * t / t_max;
        let sy = |v: f64| top + H - PAD / 2.0 - (H - PAD) * (v - lo) / (hi - lo);
        writeln!(
            w,
            r##"<rect x="{PAD}" y="{}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
            top + PAD / 2.0,
            W - 2.0 * PAD,
            H - PAD
        )?;
        writeln!(
            w,
            r#"<text x="4" y="{}">{label}</text>"#,
            top + PAD / 2.0 - 4.0
        )?;
        writeln!(
            w,
            r#"<text x="4" y="{}">{hi:.1}</text>"#,
            top + PAD / 2.0 + 12.0
        )?;
        writeln!(
            w,
            r#"<text x="4" y="{}">{lo:.1}</text>"#,
            top + H - PAD / 2.0
        )?;
        let points: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.t), sy(get(r))))
            .collect();
        writeln!(
            w,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1" points="{}"/>"#,
            points.join(" ")
        )?;
    }
    writeln!(
        w,
        r#"<text x="{}" y="{}">t = {t_max:.1} s</text>"#,
        W - PAD - 80.0,
        2.0 * H + 24.0
    )?;
    writeln!(w, "</svg>")?;
    w.flush()?;
    Ok(dir.join("trajectory.svg"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// A CSV file as a header plus string cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing column `{name}`")))
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse()
                    .map_err(|_| Error::Config(format!("bad number `{}` in `{name}`", r[i])))
            })
            .collect()
    }
}

pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| Ok(rec?.iter().map(String::from).collect()))
        .collect::<Result<_>>()?;
    Ok(Table { header, rows })
}

pub fn read_table_file(path: &FsPath) -> Result<Table> {
    read_table(File::open(path)?)
}
