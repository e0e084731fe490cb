use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use freebound::output::{
    write_active_csv, write_envelopes_csv, write_json, write_plan_csv, write_samples_csv,
    write_spherical_csv, write_summary_csv, Stamp,
};
use freebound::pipeline::{run_stages, sampled_a3, PipelineOutput, RunRecord, Stage};
use freebound::scenario::{parse_scenario, CostSpec, Scenario, SphereExampleSpec};
use serde::Serialize;

/// Partial optimal transport solver and free-boundary certificate checker.
#[derive(Parser)]
#[command(name = "freebound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the scenario's partial transport problem.
    Solve(RunArgs),
    /// Solve and extract the active region, free boundary and envelopes.
    Boundary(RunArgs),
    /// Run every enabled geometric predicate.
    Verify(RunArgs),
    /// Sampled A3 minimization of the MTW tensor.
    Mtw(MtwArgs),
    /// Reproduce the polar-cap construction on the 2-sphere.
    SphereDemo(SphereArgs),
    /// Run everything and write all outputs.
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the evaluation grid resolution.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct MtwArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of source/target basepoints.
    #[arg(long)]
    basepoints: Option<usize>,
    /// Direction pairs per basepoint, beyond the axis pairs.
    #[arg(long)]
    directions: Option<usize>,
}

#[derive(Args)]
struct SphereArgs {
    /// Scenario file with a `[sphere_example]` table; flags override it.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Fibonacci lattice points on the sphere.
    #[arg(long)]
    resolution: Option<usize>,
    /// Relative excess of target mass over the source mass on the cap.
    #[arg(long)]
    rho: Option<f64>,
    /// Largest tolerated active mass in the north cap.
    #[arg(long)]
    mass_margin: Option<f64>,
}

fn load(args: &RunArgs) -> Result<Scenario> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let mut s = parse_scenario(&text).with_context(|| format!("in {}", args.scenario.display()))?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(res) = args.grid {
        s.grid.resolution = res;
    }
    s.validate()?;
    Ok(s)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn json<T: Serialize>(dir: &Path, name: &str, stamp: &Stamp, value: &T) -> Result<()> {
    write_json(create(dir, name)?, stamp, value)?;
    Ok(())
}

fn print_timings(record: &RunRecord) {
    for (stage, secs) in &record.timings {
        eprintln!("timing {stage}: {secs:.3}s");
    }
}

fn exit_for(record: &RunRecord) -> ExitCode {
    if record.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

#[derive(Serialize)]
struct SolveSummary {
    objective: Option<f64>,
    mass: Option<f64>,
    duality_violation: Option<f64>,
}

fn write_solve(dir: &Path, out: &PipelineOutput, stamp: &Stamp) -> Result<()> {
    if let Some(plan) = &out.plan {
        write_plan_csv(create(dir, "plan.csv")?, stamp, plan)?;
    }
    let r = &out.record;
    let summary =
        SolveSummary { objective: r.objective, mass: r.mass, duality_violation: r.duality_violation };
    json(dir, "summary.json", stamp, &summary)
}

fn write_boundary(dir: &Path, out: &PipelineOutput, stamp: &Stamp) -> Result<()> {
    if let Some(field) = &out.field {
        write_active_csv(create(dir, "active.csv")?, stamp, field)?;
        write_samples_csv(create(dir, "samples.csv")?, stamp, &out.samples, field.grid().dim())?;
        write_envelopes_csv(create(dir, "envelope.csv")?, stamp, &out.envelopes)?;
    }
    if let Some(sphere) = &out.record.sphere {
        write_spherical_csv(create(dir, "sphere_boundary.csv")?, stamp, &sphere.boundary_samples)?;
    }
    Ok(())
}

fn write_verify(dir: &Path, out: &PipelineOutput, stamp: &Stamp) -> Result<()> {
    let r = &out.record;
    for report in &r.reports {
        json(dir, &format!("report_{}.json", report.name), stamp, report)?;
    }
    write_summary_csv(create(dir, "summary.csv")?, r)?;
    json(dir, "record.json", stamp, r)
}

fn run(args: &RunArgs, stage: Stage, all: bool) -> Result<ExitCode> {
    let s = load(args)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    // Envelopes are built alongside the predicates, so the boundary
    // outputs need the full run.
    let depth = if stage == Stage::Solve { Stage::Solve } else { Stage::Verify };
    let out = run_stages(&s, depth)?;
    let stamp = Stamp::of(&out.record);
    print_timings(&out.record);
    if stage == Stage::Solve || all {
        write_solve(&args.out, &out, &stamp)?;
    }
    if stage == Stage::Boundary || all {
        write_boundary(&args.out, &out, &stamp)?;
    }
    if stage == Stage::Verify {
        write_verify(&args.out, &out, &stamp)?;
        for r in &out.record.reports {
            eprintln!("{:<20} {}", r.name, if r.pass { "pass" } else { "FAIL" });
        }
        for k in &out.record.skipped {
            eprintln!("{:<20} skipped: {}", k.name, k.reason);
        }
        for w in &out.record.warnings {
            eprintln!("warning: {w}");
        }
        return Ok(exit_for(&out.record));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_mtw(args: &MtwArgs) -> Result<ExitCode> {
    let mut s = load(&args.run)?;
    if let Some(b) = args.basepoints {
        s.mtw.basepoints = b;
    }
    if let Some(d) = args.directions {
        s.mtw.directions = d;
    }
    let cost = s.cost_model()?;
    if cost.smoothness() < 4 {
        bail!("cost `{}` has no fourth derivatives; the MTW tensor is unavailable", cost.id());
    }
    let (f, g) = s.measures()?;
    let report = sampled_a3(&s, &cost, &f, &g)?;
    fs::create_dir_all(&args.run.out)?;
    let stamp = Stamp { scenario_digest: s.digest(), seed: s.seed };
    json(&args.run.out, "mtw.json", &stamp, &report)?;
    match report.c0_estimate {
        Some(c0) => eprintln!("a3 infimum estimate: {c0:e} ({})", report.bound_kind),
        None => eprintln!("a3 infimum undefined: {}", report.flagged.as_deref().unwrap_or("")),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_sphere(args: &SphereArgs) -> Result<ExitCode> {
    let mut s = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_scenario(&text)?
        }
        None => Scenario {
            name: Some("sphere-cap".into()),
            seed: 0,
            cost: CostSpec::Id("sphere".into()),
            mass_fraction: 1.0,
            source: None,
            target: None,
            grid: Default::default(),
            predicates: Default::default(),
            mtw: Default::default(),
            sphere_example: Some(SphereExampleSpec::default()),
        },
    };
    let ex = s.sphere_example.get_or_insert_with(SphereExampleSpec::default);
    if let Some(r) = args.resolution {
        ex.resolution = r;
    }
    if let Some(r) = args.rho {
        ex.rho = r;
    }
    if let Some(m) = args.mass_margin {
        ex.mass_margin = m;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    s.validate()?;
    fs::create_dir_all(&args.out)?;
    let out = run_stages(&s, Stage::Verify)?;
    let stamp = Stamp::of(&out.record);
    print_timings(&out.record);
    let r = &out.record;
    let Some(report) = &r.sphere else {
        bail!("scenario did not produce a sphere example report");
    };
    #[derive(Serialize)]
    struct SphereOutput<'a> {
        example: &'a freebound::sphere::CapExampleReport,
        annulus: &'a Option<freebound::geometry::PredicateReport>,
        reports: &'a [freebound::geometry::PredicateReport],
    }
    json(
        &args.out,
        "sphere_report.json",
        &stamp,
        &SphereOutput { example: report, annulus: &r.sphere_annulus, reports: &r.reports },
    )?;
    write_spherical_csv(create(&args.out, "sphere_boundary.csv")?, &stamp, &report.boundary_samples)?;
    let annulus_fails = r.sphere_annulus.as_ref().is_some_and(|a| !a.pass);
    eprintln!("north cap active mass: {:e}", report.north_cap_active_mass);
    eprintln!("tan(theta) = {}, 2 theta = {}", report.tan_theta, report.two_theta);
    eprintln!("annulus image fails c-convexity: {annulus_fails}");
    if r.all_pass() && annulus_fails {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Solve(a) => run(a, Stage::Solve, false),
        Command::Boundary(a) => run(a, Stage::Boundary, false),
        Command::Verify(a) => run(a, Stage::Verify, false),
        Command::Report(a) => run(a, Stage::Verify, true),
        Command::Mtw(a) => run_mtw(a),
        Command::SphereDemo(a) => run_sphere(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
