//! `dgf`: run glass forming scenarios, sweeps, identification and design
//! from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dgf_core::harness::{
    beam_summary, build_design, preset, run_map, run_scenario, run_sysid, write_beam, write_design,
    write_manifest, write_map, write_run, write_sysid, write_trajectory_svg, PathKind, Scenario,
    PRESET_NAMES, QUOTED_SPOT_DIAMETER_AT_7MM,
};
use dgf_core::optics::GaussianBeam;
use dgf_core::plant::{Classification, PlantModel};
use dgf_core::sysid::ExcitationKind;

#[derive(Parser)]
#[command(
    name = "dgf",
    version,
    about = "Digital glass forming temperature-control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Start from a named preset.
    #[arg(long)]
    preset: Option<String>,
    /// Key-value configuration file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single key, e.g. `--set power.watts=30`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Single track on a substrate.
    Track {
        #[command(flatten)]
        common: Common,
        /// Also write trajectory.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Multi-layer wall.
    Wall {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        svg: bool,
    },
    /// Square chimney with thermal camera and pyrometer emulation.
    Chimney {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        svg: bool,
    },
    /// Process parameter map over laser power and focus offset.
    Map {
        #[command(flatten)]
        common: Common,
    },
    /// Identify a first-order model from excitation runs.
    Sysid {
        #[command(flatten)]
        common: Common,
        /// Excitation used for fitting; the others validate.
        #[arg(long, default_value = "prbs")]
        fit_on: ExcitationKind,
    },
    /// Pole-placement controller design report.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Beam propagation numbers, intensity field and absorption curves.
    Beam {
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved configuration, or list presets.
    Defaults {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        list: bool,
    },
}

fn resolve(common: &Common, fallback: &str) -> Result<Scenario> {
    let name = common.preset.as_deref().unwrap_or(fallback);
    let mut s = preset(name)?;
    if let Some(path) = &common.config {
        s.apply_file(path)
            .with_context(|| format!("reading {}", path.display()))?;
    }
    for o in &common.overrides {
        s.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        s.config.seed = seed;
    }
    Ok(s)
}

fn require_kind(s: &Scenario, kind: PathKind, command: &str) -> Result<()> {
    if s.path.kind != kind {
        bail!(
            "`{command}` needs path.kind = {kind}, preset `{}` has {}",
            s.name,
            s.path.kind
        );
    }
    Ok(())
}

fn deposition(
    command: &str,
    common: &Common,
    kind: PathKind,
    fallback: &str,
    svg: bool,
) -> Result<ExitCode> {
    let s = resolve(common, fallback)?;
    require_kind(&s, kind, command)?;
    let run = run_scenario(&s)?;
    let out = &common.out;
    write_manifest(out, command, &s)?;
    write_run(out, &run)?;
    if svg {
        write_trajectory_svg(
            out,
            &run.record.rows,
            &format!("{} ({})", s.name, run.outcome().classification),
        )?;
    }
    let rec = &run.record;
    let o = rec.outcome;
    println!("scenario: {}", s.name);
    println!("classification: {}", o.classification);
    if let (Some(t), Some(x)) = (o.failure_time, o.failure_position) {
        println!("failure at t = {t:.1} s, s = {x:.1} mm");
    }
    if let Some(c) = rec.failure_corner() {
        println!("failure corner: {c}");
    }
    println!("max temperature: {:.1} C", rec.max_temperature());
    println!("mean power: {:.2} W", rec.mean_power());
    let layers = rec.layer_mean_power();
    if layers.len() > 1 {
        let rest = &layers[1..];
        println!("layer 1 mean power: {:.2} W", layers[0]);
        println!(
            "layers 2+ mean power: {:.2} W",
            rest.iter().sum::<f64>() / rest.len() as f64
        );
    }
    if run.controller_faults > 0 {
        println!(
            "controller held its command on {} missing samples",
            run.controller_faults
        );
    }
    if let Some(e) = s.expected {
        if e != o.classification {
            eprintln!("note: preset `{}` expects {e}", s.name);
        }
    }
    println!("output: {}", out.display());
    Ok(exit_for(o.classification))
}

fn exit_for(c: Classification) -> ExitCode {
    if c.is_failure() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn map(common: &Common) -> Result<ExitCode> {
    let s = resolve(common, "map")?;
    let m = run_map(&s)?;
    write_manifest(&common.out, "map", &s)?;
    write_map(&common.out, &m)?;
    print!("{:>8}", "d_f\\L");
    for p in &m.powers {
        print!("{p:>12}");
    }
    println!();
    for (idf, df) in m.dfs.iter().enumerate() {
        print!("{df:>8}");
        for ip in 0..m.powers.len() {
            let c = m.cell(ip, idf);
            let mark = if c.classification.is_failure() {
                "x"
            } else {
                " "
            };
            print!("{:>11.0}{mark}", c.max_temperature);
        }
        println!();
    }
    println!("output: {}", common.out.display());
    Ok(ExitCode::SUCCESS)
}

fn sysid(common: &Common, fit_on: ExcitationKind) -> Result<ExitCode> {
    let s = resolve(common, "sysid")?;
    let r = run_sysid(&s, fit_on)?;
    write_manifest(&common.out, "sysid", &s)?;
    write_sysid(&common.out, &r, s.config.dt)?;
    let m = &r.model;
    println!("K = {:.4} C/W, tau = {:.4} s", m.gain, m.time_constant);
    println!(
        "T_n = {:.1} C, L_n = {:.2} W",
        m.nominal_temp, m.nominal_power
    );
    for series in &r.series {
        println!("fit {}: {:.1} %", series.kind, series.fit_percent);
    }
    println!("output: {}", common.out.display());
    Ok(ExitCode::SUCCESS)
}

fn design(common: &Common) -> Result<ExitCode> {
    let s = resolve(common, "nominal")?;
    let model = PlantModel::new(s.config.clone(), GaussianBeam::dgf_focus())?;
    let d = build_design(&s, &model)?;
    write_manifest(&common.out, "design", &s)?;
    write_design(&common.out, &d)?;
    let mut text = Vec::new();
    d.write_report(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(ExitCode::SUCCESS)
}

fn beam(common: &Common) -> Result<ExitCode> {
    let s = resolve(common, "nominal")?;
    write_manifest(&common.out, "beam", &s)?;
    write_beam(&common.out, &s)?;
    let b = beam_summary()?;
    println!("expanded diameter: {:.3} mm", b.expanded_diameter * 1e3);
    println!("focus waist radius: {:.4} um", b.waist_radius * 1e6);
    println!("Rayleigh range: {:.4} um", b.rayleigh_range * 1e6);
    println!("radius at 4 mm: {:.3} mm", b.radius_at_4mm * 1e3);
    println!("radius at 9 mm: {:.3} mm", b.radius_at_9mm * 1e3);
    println!(
        "spot diameter at 7 mm: {:.2} mm (quoted {:.1} mm)",
        b.spot_diameter_at_7mm * 1e3,
        QUOTED_SPOT_DIAMETER_AT_7MM * 1e3
    );
    println!("output: {}", common.out.display());
    Ok(ExitCode::SUCCESS)
}

fn defaults(common: &Common, list: bool) -> Result<ExitCode> {
    if list {
        for name in PRESET_NAMES {
            println!("{name}");
        }
    } else {
        print!("{}", resolve(common, "nominal")?.to_text());
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Track { common, svg } => {
            deposition("track", &common, PathKind::Track, "nominal", svg)
        }
        Command::Wall { common, svg } => {
            deposition("wall", &common, PathKind::Wall, "wall-cl", svg)
        }
        Command::Chimney { common, svg } => {
            deposition("chimney", &common, PathKind::Square, "chimney", svg)
        }
        Command::Map { common } => map(&common),
        Command::Sysid { common, fit_on } => sysid(&common, fit_on),
        Command::Design { common } => design(&common),
        Command::Beam { common } => beam(&common),
        Command::Defaults { common, list } => defaults(&common, list),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
