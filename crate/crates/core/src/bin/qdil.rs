use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qdil::config::RunConfig;
use qdil::driver::{self, rescore_archive, LemmaConfig, QdRun};
use qdil::output::{MetricsLog, SavedArchive};
use qdil::Error;

#[derive(Parser)]
#[command(name = "qdil", version, about = "Quality-diversity imitation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seeds.base`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full QD imitation loop.
    Train(Common),
    /// Write demonstrations to `<out>/demos.jsonl`.
    GenDemos(Common),
    /// Export a saved archive as a fitness grid CSV.
    ExportHeatmap {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/archive.json`.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Monte-Carlo check that PPO on the empty-region indicator raises the
    /// chance of reaching it.
    VerifyLemma(Common),
    /// Re-score a saved archive's elites with the true reward.
    EvalArchive {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
    },
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Parse { .. })
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn new(c: &Common) -> qdil::Result<Self> {
        let mut cfg = RunConfig::load(&c.config)?;
        if let Some(s) = c.seed {
            cfg.seeds.base = s;
        }
        if let Some(o) = &c.out {
            cfg.output.dir = o.clone();
        }
        let out = cfg.output.dir.clone();
        fs::create_dir_all(&out)?;
        fs::write(out.join("config.toml"), cfg.echo())?;
        Ok(Ctx { seed: cfg.seeds.base, cfg, out })
    }
}

fn thread_pool() -> qdil::Result<()> {
    let Ok(raw) = std::env::var("QDIL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("QDIL_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn train(c: &Common) -> qdil::Result<()> {
    let ctx = Ctx::new(c)?;
    let qd_cfg = ctx.cfg.qd_config(ctx.seed)?;
    let demos = ctx.cfg.demos()?;
    let mut run = QdRun::new(qd_cfg, Some(&demos))?;
    run.wall_clock = ctx.cfg.output.wall_clock;
    let mut log = MetricsLog::create(&ctx.out.join("metrics.csv"))?;
    let total = run.cfg.iterations;
    let result = run.run_with(|r| {
        log.row(r)?;
        if r.iter % 10 == 0 || r.iter == total {
            eprintln!(
                "iter {:>4}  coverage {:.3}  qd_score {:.1}  restart {}",
                r.iter, r.metrics.coverage, r.metrics.qd_score, r.restart
            );
        }
        Ok(())
    });
    let saved = SavedArchive {
        env: run.cfg.env,
        policy_hidden: run.cfg.ppo.hidden.clone(),
        archive: run.archive.clone(),
    };
    saved.save(&ctx.out.join("archive.json"))?;
    if ctx.cfg.output.heatmap && run.true_archive.config().dims() == 2 {
        run.true_archive.export_heatmap(&ctx.out.join("heatmap.csv"))?;
    }
    result?;
    let m = run.true_archive.metrics();
    println!("coverage {:.4} qd_score {:.2} cells {}", m.coverage, m.qd_score, m.occupied_count);
    Ok(())
}

fn gen_demos(c: &Common) -> qdil::Result<()> {
    let ctx = Ctx::new(c)?;
    let set = ctx.cfg.demos()?;
    let path = ctx.out.join("demos.jsonl");
    set.save(&path)?;
    println!("{} demonstrations written to {}", set.episodes.len(), path.display());
    Ok(())
}

fn archive_path(ctx: &Ctx, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| ctx.out.join("archive.json"))
}

fn export_heatmap(c: &Common, archive: &Option<PathBuf>) -> qdil::Result<()> {
    let ctx = Ctx::new(c)?;
    let saved = SavedArchive::load(&archive_path(&ctx, archive))?;
    let path = ctx.out.join("heatmap.csv");
    saved.archive.export_heatmap(&path)?;
    println!("heatmap written to {}", path.display());
    Ok(())
}

fn verify_lemma(c: &Common) -> qdil::Result<()> {
    let ctx = Ctx::new(c)?;
    let cfg = LemmaConfig {
        seeds: (0..3).map(|i| ctx.seed + i).collect(),
        ppo: ctx.cfg.ppo.clone(),
        ..LemmaConfig::default()
    };
    let outcomes = driver::verify_lemma(&cfg)?;
    let mut csv = String::from("seed,p_old,p_new\n");
    for o in &outcomes {
        println!("seed {:>3}  P_old {:.5}  P_new {:.5}", o.seed, o.p_old, o.p_new);
        csv.push_str(&format!("{},{},{}\n", o.seed, o.p_old, o.p_new));
    }
    write(&ctx.out.join("lemma.csv"), &csv)
}

fn eval_archive(c: &Common, archive: &Option<PathBuf>) -> qdil::Result<()> {
    let ctx = Ctx::new(c)?;
    let saved = SavedArchive::load(&archive_path(&ctx, archive))?;
    let policy = saved.policy()?;
    let scored = rescore_archive(&saved.archive, &policy, &saved.env, ctx.seed)?;
    let m = scored.metrics();
    write(&ctx.out.join("eval.json"), &serde_json::to_string_pretty(&m)?)?;
    if scored.config().dims() == 2 {
        scored.export_heatmap(&ctx.out.join("eval_heatmap.csv"))?;
    }
    println!("coverage {:.4} qd_score {:.2} cells {}", m.coverage, m.qd_score, m.occupied_count);
    Ok(())
}

fn write(path: &Path, text: &str) -> qdil::Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = thread_pool().and_then(|()| match &cli.command {
        Command::Train(c) => train(c),
        Command::GenDemos(c) => gen_demos(c),
        Command::ExportHeatmap { common, archive } => export_heatmap(common, archive),
        Command::VerifyLemma(c) => verify_lemma(c),
        Command::EvalArchive { common, archive } => eval_archive(common, archive),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 3 })
        }
    }
}
