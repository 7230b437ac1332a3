use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::json;

use thyrosim::analysis::{
    marinelli_activity, run_ablation, run_conventional_baseline, run_robotic_volumetry, DoseParams,
    ELLIPSOID_COEFFICIENT,
};
use thyrosim::export::{export_frames, export_volume, write_atomic, write_events, write_json, write_poses};
use thyrosim::phantom::{build_phantom, Lobe, PhantomModel};
use thyrosim::scenario::{Perturbation, Scenario};
use thyrosim::MM3_PER_ML;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_TRENDS: u8 = 3;

#[derive(Parser)]
#[command(name = "thyrosim", version, about = "Robotic thyroid ultrasound volumetry simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed, overrides the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Voxel pitch in mm for ground truth and compounding.
    #[arg(long, global = true)]
    pitch: Option<f64>,
    #[arg(long, global = true)]
    no_shadow_correction: bool,
    #[arg(long, global = true)]
    no_centering: bool,
    /// Worker threads for the ablation harness.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Also write every recorded frame as PGM.
    #[arg(long, global = true)]
    export_frames: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize the phantom and report its ground-truth volume.
    Phantom,
    /// Scan both lobes and write recordings and event logs.
    Scan,
    /// Robotic volume estimate against the ellipsoid-formula baseline.
    Volumetry,
    /// Paired ablation over the four correction configurations.
    Ablate {
        /// Exit with status 3 if an expected ordering does not hold.
        #[arg(long)]
        check_trends: bool,
    },
    /// Administered activity from the Marinelli formula.
    Dose {
        /// Thyroid mass, g.
        #[arg(long)]
        mass: f64,
        /// Target dose, Gy.
        #[arg(long)]
        dose: f64,
        /// 24 h uptake fraction in (0, 1].
        #[arg(long)]
        uptake: f64,
        /// Effective half-life, h.
        #[arg(long)]
        t_eff: f64,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let validation = error
            .chain()
            .any(|c| c.downcast_ref::<thyrosim::Error>().is_some_and(|e| e.is_validation()));
        Failure {
            code: if validation { EXIT_VALIDATION } else { EXIT_RUNTIME },
            error,
        }
    }
}

impl From<thyrosim::Error> for Failure {
    fn from(e: thyrosim::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_scenario(common: &Common) -> Result<Scenario, Failure> {
    let mut s = match &common.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    if let Some(pitch) = common.pitch {
        s.phantom.voxel_pitch = pitch;
        s.compounding.voxel_pitch = pitch;
    }
    if common.no_shadow_correction {
        s.scan.shadow_correction = false;
    }
    if common.no_centering {
        s.scan.centering = false;
    }
    s.validate()?;
    Ok(s)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    if let Command::Dose { mass, dose, uptake, t_eff } = cli.command {
        let params = DoseParams {
            m: mass,
            d: dose,
            iu_24h: uptake,
            t_eff,
        };
        let activity = marinelli_activity(&params)?;
        println!("{activity}");
        if let Some(out) = &common.out {
            write_json(&out.join("dose.json"), &json!({ "params": params, "activity": activity }))?;
        }
        return Ok(());
    }
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let scenario = load_scenario(common)?;
    let model = build_phantom(scenario.phantom.clone())?;
    let ctx = RunContext {
        out: &out,
        sha: scenario.sha256(),
        scenario: &scenario,
        model: &model,
        export_frames: common.export_frames,
    };
    write_atomic(&out.join("scenario.json"), scenario.to_json().as_bytes())?;
    match cli.command {
        Command::Phantom => cmd_phantom(&ctx),
        Command::Scan => cmd_scan(&ctx),
        Command::Volumetry => cmd_volumetry(&ctx),
        Command::Ablate { check_trends } => cmd_ablate(&ctx, check_trends),
        Command::Dose { .. } => unreachable!(),
    }
}

struct RunContext<'a> {
    out: &'a Path,
    sha: String,
    scenario: &'a Scenario,
    model: &'a PhantomModel,
    export_frames: bool,
}

#[derive(Serialize)]
struct EventHeader<'a> {
    lobe: Lobe,
    seed: u64,
    scenario_sha256: &'a str,
    shadow_correction: bool,
    centering: bool,
}

fn cmd_phantom(ctx: &RunContext) -> Result<(), Failure> {
    let spec = ctx.model.spec();
    export_volume(ctx.out, "ground_truth", "label", ctx.model.labels(), &ctx.sha, ctx.scenario.seed)?;
    let lobes_analytic: f64 = Lobe::BOTH
        .into_iter()
        .filter_map(|l| spec.lobe(l))
        .map(|e| e.analytic_volume_mm3() / MM3_PER_ML)
        .sum();
    let gt = ctx.model.ground_truth_volume();
    // the lobe/isthmus overlap has no closed form
    let has_isthmus = spec.isthmus.as_ref().is_some_and(|b| !b.is_empty());
    let analytic = (!has_isthmus).then_some(lobes_analytic);
    let report = json!({
        "voxel_pitch": spec.voxel_pitch,
        "thyroid_voxels": ctx.model.thyroid_voxel_count(),
        "ground_truth_ml": gt,
        "lobes_analytic_ml": lobes_analytic,
        "analytic_ml": analytic,
        "discretization_error_ml": analytic.map(|a| gt - a),
        "scenario_sha256": ctx.sha,
    });
    write_json(&ctx.out.join("phantom.json"), &report)?;
    println!("ground truth volume: {gt:.3} ml");
    if let Some(a) = analytic {
        println!("analytic volume:     {a:.3} ml ({:+.4} ml)", gt - a);
    }
    Ok(())
}

fn scan_artifacts(ctx: &RunContext, run: &thyrosim::analysis::VolumetryRun) -> Result<(), Failure> {
    let scan = &ctx.scenario.scan;
    for lobe in &run.lobes {
        let dir = ctx.out.join(lobe.lobe.name());
        let header = EventHeader {
            lobe: lobe.lobe,
            seed: ctx.scenario.seed,
            scenario_sha256: &ctx.sha,
            shadow_correction: scan.shadow_correction,
            centering: scan.centering,
        };
        write_events(&dir.join("events.jsonl"), &header, &lobe.scan.events)?;
        write_poses(&dir.join("poses.json"), &lobe.scan.recording)?;
        if ctx.export_frames {
            export_frames(&dir.join("frames"), &lobe.scan.recording)?;
        }
    }
    Ok(())
}

fn robotic(ctx: &RunContext) -> Result<thyrosim::analysis::VolumetryRun, Failure> {
    let poses = ctx.scenario.initial_poses().to_poses(ctx.model.surface())?;
    info!("scanning both lobes, seed {}", ctx.scenario.seed);
    Ok(run_robotic_volumetry(ctx.model, &ctx.scenario.pipeline(), &poses, ctx.scenario.seed)?)
}

fn cmd_scan(ctx: &RunContext) -> Result<(), Failure> {
    let run = robotic(ctx)?;
    scan_artifacts(ctx, &run)?;
    let lobes: Vec<_> = run
        .lobes
        .iter()
        .map(|l| {
            json!({
                "lobe": l.lobe,
                "recorded_frames": l.scan.recording.frames.len(),
                "recorded_poses": l.scan.recording.poses.len(),
                "frames_rendered": l.scan.frames_rendered,
                "total_steps": l.scan.total_steps,
                "warnings": l.scan.warnings,
            })
        })
        .collect();
    write_json(&ctx.out.join("scan.json"), &json!({ "seed": ctx.scenario.seed, "lobes": lobes }))?;
    for l in &run.lobes {
        println!(
            "{} lobe: {} frames recorded over {} steps",
            l.lobe,
            l.scan.recording.frames.len(),
            l.scan.total_steps
        );
    }
    Ok(())
}

fn cmd_volumetry(ctx: &RunContext) -> Result<(), Failure> {
    let run = robotic(ctx)?;
    scan_artifacts(ctx, &run)?;
    let seed = ctx.scenario.seed;
    export_volume(ctx.out, "robotic_label", "label", &run.merged.grid, &ctx.sha, seed)?;
    for l in &run.lobes {
        let dir = ctx.out.join(l.lobe.name());
        export_volume(&dir, "label", "label", &l.label.grid, &ctx.sha, seed)?;
        export_volume(&dir, "intensity", "intensity", &l.intensity, &ctx.sha, seed)?;
    }
    let conv = run_conventional_baseline(ctx.model, ELLIPSOID_COEFFICIENT)?;
    let gt = ctx.model.ground_truth_volume();
    let rel = |v: f64| (v - gt) / gt;
    let comparison = json!({
        "seed": seed,
        "scenario_sha256": ctx.sha,
        "ground_truth_ml": gt,
        "robotic": {
            "volume_ml": run.volume_ml,
            "rel_err": rel(run.volume_ml),
            "lobes": run.lobes.iter().map(|l| json!({"lobe": l.lobe, "volume_ml": l.volume_ml})).collect::<Vec<_>>(),
        },
        "conventional": {
            "volume_ml": conv.volume_ml,
            "rel_err": rel(conv.volume_ml),
            "coefficient": conv.coefficient,
            "lobes": conv.lobes,
        },
    });
    write_json(&ctx.out.join("comparison.json"), &comparison)?;
    println!("ground truth  {gt:8.3} ml");
    println!("robotic       {:8.3} ml ({:+.2}%)", run.volume_ml, 100.0 * rel(run.volume_ml));
    println!("conventional  {:8.3} ml ({:+.2}%)", conv.volume_ml, 100.0 * rel(conv.volume_ml));
    Ok(())
}

fn cmd_ablate(ctx: &RunContext, check_trends: bool) -> Result<(), Failure> {
    let perturbation = ctx.scenario.perturbation.unwrap_or_default();
    let nominal = ctx.scenario.initial_poses();
    let surface = ctx.model.surface();
    let poses = perturbation
        .sample(&nominal, thyrosim::rng::derive_str(ctx.scenario.seed, "poses"))
        .iter()
        .map(|p| p.to_poses(surface))
        .collect::<thyrosim::Result<Vec<_>>>()?;
    let result = run_ablation(ctx.model, &ctx.scenario.pipeline(), &poses, ctx.scenario.seed)?;
    let trends = result.check_trends();
    write_atomic(&ctx.out.join("ablation_runs.csv"), result.rows_csv().as_bytes())?;
    write_atomic(&ctx.out.join("ablation_summary.csv"), result.summary_csv().as_bytes())?;
    write_json(
        &ctx.out.join("ablation.json"),
        &json!({
            "statistics": "population std (divide by N)",
            "seed": ctx.scenario.seed,
            "scenario_sha256": ctx.sha,
            "perturbation": Perturbation { count: poses.len(), ..perturbation },
            "ground_truth_ml": result.ground_truth_ml,
            "conventional_ml": result.conventional_ml,
            "excluded_runs": result.excluded_runs,
            "summaries": result.summaries,
            "trends": trends,
        }),
    )?;
    println!("ground truth {:.3} ml, {} paired runs", result.ground_truth_ml, poses.len());
    println!("{:<10} {:>9} {:>8} {:>10}", "config", "mean_ml", "std_ml", "|err| %");
    for s in &result.summaries {
        println!(
            "{:<10} {:>9.3} {:>8.3} {:>10.2}",
            s.config.name(),
            s.mean_ml,
            s.std_ml,
            s.mean_abs_err_pct
        );
    }
    for t in &trends {
        println!("{} {}: {}", if t.passed { "PASS" } else { "FAIL" }, t.name, t.detail);
    }
    if check_trends && trends.iter().any(|t| !t.passed) {
        return Err(Failure {
            code: EXIT_TRENDS,
            error: anyhow::anyhow!("trend check failed"),
        });
    }
    Ok(())
}
