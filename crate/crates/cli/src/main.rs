//! `tsmlab` command line: one subcommand per experiment.
//!
//! Every run reads a flat `section.key = value` config; flags override the
//! matching keys. Failures print a single `error kind=... message="..."`
//! line on stderr and exit nonzero.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tsmlab::harness::{self, artifacts, RawConfig, RunConfig};
use tsmlab::Result;

#[derive(Parser, Debug)]
#[command(name = "tsmlab", version, about = "Score-distillation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Config file (`section.key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `run.out`; default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `run.seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    estimator: Option<Estimator>,
    /// Trajectory offset rate in [0, 1].
    #[arg(long, global = true, value_name = "F")]
    gamma: Option<f64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Estimator {
    Sds,
    Ism,
    Tsm,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    PaperLiteral,
    DdimStandard,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One distillation run: metrics, checkpoint renders, depth maps, summary.
    RunDistill,
    /// Monte-Carlo comparison of ISM and TSM trajectory gaps.
    AnalyzeTrajectory {
        /// Number of samples (overrides `suite.samples`).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// TSM runs over a list of offset rates with matched seeds.
    AblateGamma {
        /// Comma-separated offset rates (overrides `suite.gammas`).
        #[arg(long)]
        gammas: Option<String>,
    },
    /// Final-render variance across noise seeds, ISM vs TSM.
    SeedConsistency {
        /// Comma-separated noise seeds (overrides `suite.seeds`).
        #[arg(long)]
        seeds: Option<String>,
    },
    /// SDS, ISM and TSM with matched seeds.
    CompareEstimators,
}

fn load_config(common: &Common, command: &Command) -> Result<RunConfig> {
    let mut raw = match &common.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::parse("")?,
    };
    if let Some(seed) = common.seed {
        raw.set("run.seed", seed.to_string());
    }
    if let Some(out) = &common.out {
        raw.set("run.out", out.display().to_string());
    }
    if let Some(e) = common.estimator {
        let name = match e {
            Estimator::Sds => "sds",
            Estimator::Ism => "ism",
            Estimator::Tsm => "tsm",
        };
        raw.set("estimator.kind", name);
    }
    if let Some(g) = common.gamma {
        raw.set("estimator.gamma", g.to_string());
    }
    if let Some(m) = common.mode {
        let name = match m {
            Mode::PaperLiteral => "paper-literal",
            Mode::DdimStandard => "ddim-standard",
        };
        raw.set("estimator.mode", name);
    }
    match command {
        Command::AnalyzeTrajectory { samples: Some(n) } => raw.set("suite.samples", n.to_string()),
        Command::AblateGamma { gammas: Some(g) } => raw.set("suite.gammas", g.clone()),
        Command::SeedConsistency { seeds: Some(s) } => raw.set("suite.seeds", s.clone()),
        _ => {}
    }
    let cfg = RunConfig::from_raw(&raw)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String> {
    let cfg = load_config(&cli.common, &cli.command)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::RunDistill => run_distill(&cfg, &out),
        Command::AnalyzeTrajectory { .. } => analyze(&cfg, &out),
        Command::AblateGamma { .. } => ablate(&cfg, &out),
        Command::SeedConsistency { .. } => seeds(&cfg, &out),
        Command::CompareEstimators => compare(&cfg, &out),
    }
}

fn run_distill(cfg: &RunConfig, out: &Path) -> Result<String> {
    let res = harness::run_distill(cfg)?;
    artifacts::write_run(out, cfg, &res)?;
    Ok(artifacts::summary_text(cfg, &res, cfg.suite.tail))
}

fn analyze(cfg: &RunConfig, out: &Path) -> Result<String> {
    let report = harness::analyze_trajectory(cfg, cfg.suite.samples)?;
    artifacts::write_csv(&out.join("trajectory.csv"), &harness::TrajectoryReport::HEADER, report.rows())?;
    let (ism, tsm) = report.mean_gaps();
    let mut s = String::new();
    let _ = writeln!(s, "samples={}", report.samples.len());
    let _ = writeln!(s, "gamma={}", cfg.estimator_cfg.gamma);
    let _ = writeln!(s, "mode={}", cfg.estimator_cfg.mode.name());
    let _ = writeln!(s, "win_rate={}", report.win_rate());
    let _ = writeln!(s, "eligible_win_rate={}", report.eligible_win_rate());
    let _ = writeln!(s, "mean_gap_ism={ism}");
    let _ = writeln!(s, "mean_gap_tsm={tsm}");
    artifacts::write_text(&out.join("summary.txt"), &s)?;
    Ok(s)
}

fn ablate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let rows = harness::ablate_gamma(cfg, &cfg.suite.gammas)?;
    let tail = cfg.suite.tail;
    artifacts::write_csv(
        &out.join("ablation.csv"),
        &harness::suites::ABLATION_HEADER,
        rows.iter().map(|r| r.fields(tail)),
    )?;
    let mut s = String::new();
    for r in &rows {
        let label = format!("gamma_{:.2}", r.gamma);
        artifacts::write_metrics(&out.join(format!("metrics_{label}.csv")), &r.result.records)?;
        artifacts::write_snapshot_images(out, cfg, r.result.final_snapshot(), &label)?;
        let _ = writeln!(
            s,
            "{label}: final_distance={} tail_grad_norm={}",
            r.result.final_distance(),
            r.result.tail_grad_norm(tail)
        );
    }
    let finals: Vec<_> = rows.iter().map(|r| r.result.final_snapshot()).collect();
    artifacts::write_grid(&out.join("images").join("grid.png"), cfg, &finals)?;
    artifacts::write_text(&out.join("summary.txt"), &s)?;
    Ok(s)
}

fn seeds(cfg: &RunConfig, out: &Path) -> Result<String> {
    let g = &cfg.generator;
    let mut rows = Vec::new();
    let mut s = String::new();
    let mut tsm_wins = 0;
    for &init in &cfg.suite.inits {
        let mut c = cfg.clone();
        c.init_seed = init;
        let maps = harness::seed_consistency(&c, &cfg.suite.seeds)?;
        for v in &maps {
            let name = v.estimator.name();
            rows.push(vec![init.to_string(), name.to_string(), v.gamma.to_string(), v.scalar.to_string()]);
            if v.map.len() == g.pixels() {
                artifacts::write_pgm16(&out.join("variance").join(format!("init{init}_{name}.pgm")), &v.map, g.width, g.height)?;
            }
            for (seed, r) in cfg.suite.seeds.iter().zip(&v.results) {
                artifacts::write_snapshot_images(out, cfg, r.final_snapshot(), &format!("init{init}_{name}_seed{seed}"))?;
            }
        }
        let [ism, tsm] = &maps;
        tsm_wins += usize::from(tsm.scalar <= ism.scalar);
        let _ = writeln!(s, "init {init}: ism_variance={} tsm_variance={}", ism.scalar, tsm.scalar);
    }
    let _ = writeln!(s, "tsm_not_worse={tsm_wins}/{}", cfg.suite.inits.len());
    artifacts::write_csv(&out.join("variance.csv"), &["init_seed", "estimator", "gamma", "pixel_variance"], rows)?;
    artifacts::write_text(&out.join("summary.txt"), &s)?;
    Ok(s)
}

fn compare(cfg: &RunConfig, out: &Path) -> Result<String> {
    let rows = harness::compare_estimators(cfg)?;
    let tail = cfg.suite.tail;
    artifacts::write_csv(
        &out.join("comparison.csv"),
        &harness::suites::COMPARISON_HEADER,
        rows.iter().map(|r| r.fields(tail)),
    )?;
    let mut s = String::new();
    for r in &rows {
        let name = r.estimator.name();
        artifacts::write_metrics(&out.join(format!("metrics_{name}.csv")), &r.result.records)?;
        artifacts::write_snapshot_images(out, cfg, r.result.final_snapshot(), name)?;
        let _ = writeln!(
            s,
            "{name}: distance {} -> {} tail_grad_norm={}",
            r.result.initial_distance,
            r.result.final_distance(),
            r.result.tail_grad_norm(tail)
        );
    }
    artifacts::write_text(&out.join("summary.txt"), &s)?;
    Ok(s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage message={first:?}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
