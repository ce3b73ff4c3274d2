//! Command-line harness: two-phase training, task-vector extraction,
//! personalization runs, and report consolidation.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use taskmix::checkpoint;
use taskmix::config::ExperimentConfig;
use taskmix::error::{Error, Result};
use taskmix::personalize::CoefficientMatrix;
use taskmix::protocol::{run_protocol, MergeAssets, Method, ProtocolResult};
use taskmix::report::{fnv1a_str, run_label, Consolidated, RunReport, SimilarityReport};
use taskmix::synth::{samples_to_csv, TaskUniverse};
use taskmix::taskvec;
use taskmix::trainer::run_phase1;

#[derive(Parser)]
#[command(
    name = "taskmix",
    version,
    about = "Personalized score regression via merge-coefficient training over task vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML). Defaults are used when omitted.
    #[arg(global = true, long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(global = true, long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(global = true, long, value_name = "DIR", default_value = "taskmix-out")]
    out: PathBuf,
    /// Worker threads for independent jobs (0 = one per core).
    #[arg(global = true, long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared base, then one model per synthetic database.
    Finetune,
    /// Derive task vectors from checkpoints and emit their similarity matrix.
    Extract {
        /// Checkpoint directory (defaults to <out>/checkpoints).
        #[arg(long, value_name = "DIR")]
        checkpoints: Option<PathBuf>,
    },
    /// Run the personalization protocol with the configured ablations.
    Personalize {
        /// Task-vector archive (defaults to <out>/task_vectors).
        #[arg(long, value_name = "DIR")]
        archive: Option<PathBuf>,
        /// Checkpoint directory holding the base model
        /// (defaults to <out>/checkpoints).
        #[arg(long, value_name = "DIR")]
        checkpoints: Option<PathBuf>,
    },
    /// Consolidate completed runs into tables and figure data files.
    Report {
        /// Run directories (each holding a report.json).
        #[arg(long, value_name = "DIR", required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
    /// Generate a synthetic universe and export its databases for inspection.
    Simbench {
        /// Samples exported per database.
        #[arg(long, value_name = "N", default_value_t = 200)]
        count: usize,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))?;
        }
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    match cli.command {
        Command::Finetune => finetune(&cfg, &cli.out),
        Command::Extract { checkpoints } => {
            let dir = checkpoints.unwrap_or_else(|| cli.out.join("checkpoints"));
            extract(&dir, &cli.out)
        }
        Command::Personalize {
            archive,
            checkpoints,
        } => {
            let archive = archive.unwrap_or_else(|| cli.out.join("task_vectors"));
            let ckpts = checkpoints.unwrap_or_else(|| cli.out.join("checkpoints"));
            personalize(&cfg, &archive, &ckpts, &cli.out)
        }
        Command::Report { runs } => {
            let merged = Consolidated::from_dirs(&runs)?;
            let dir = cli.out.join("report");
            merged.emit(&dir)?;
            println!(
                "consolidated {} records into {}",
                merged.record_count(),
                dir.display()
            );
            Ok(())
        }
        Command::Simbench { count } => simbench(&cfg, count, &cli.out),
    }
}

fn finetune(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let universe = TaskUniverse::generate(cfg.universe.clone(), cfg.master_seed)?;
    println!(
        "training base + {} database models (seed {})",
        cfg.universe.n_databases, cfg.master_seed
    );
    let phase1 = run_phase1(&universe, &cfg.architecture, &cfg.phase1, cfg.master_seed)?;
    let dir = out.join("checkpoints");
    std::fs::create_dir_all(&dir)?;
    checkpoint::save_params(&phase1.base, "pre", &dir.join("pre.ckpt"))?;
    for (id, params) in &phase1.fine_tuned {
        checkpoint::save_params(params, id, &dir.join(format!("{id}.ckpt")))?;
    }
    let manifest = serde_json::json!({
        "base": "pre.ckpt",
        "tasks": phase1.fine_tuned.iter().map(|(id, _)| format!("{id}.ckpt")).collect::<Vec<_>>(),
        "master_seed": cfg.master_seed,
        "config_digest": fnv1a_str(&cfg.to_toml()),
    });
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest"),
    )?;
    for (i, &s) in phase1.holdout_srocc.iter().enumerate() {
        println!("  db{i}: holdout srocc {s:.4}");
    }
    println!(
        "wrote {} checkpoints to {}",
        phase1.fine_tuned.len() + 1,
        dir.display()
    );
    Ok(())
}

fn load_assets(checkpoint_dir: &Path) -> Result<MergeAssets> {
    let pre_path = checkpoint_dir.join("pre.ckpt");
    if !pre_path.exists() {
        return Err(Error::Dependency(format!(
            "missing base checkpoint {}",
            pre_path.display()
        )));
    }
    let (_, base) = checkpoint::load_params(&pre_path)?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(checkpoint_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "ckpt")
                && p.file_name().is_some_and(|n| n != "pre.ckpt")
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Dependency(format!(
            "no fine-tuned checkpoints in {}",
            checkpoint_dir.display()
        )));
    }
    let mut tvs = Vec::with_capacity(entries.len());
    for path in &entries {
        let (id, ft) = checkpoint::load_params(path)?;
        tvs.push(taskvec::extract(&base, &ft, &id)?);
    }
    MergeAssets::new(base, tvs)
}

fn similarity_report(assets: &MergeAssets) -> Result<SimilarityReport> {
    let matrix = taskvec::cosine_similarity_matrix(&assets.task_vectors)?;
    let n = assets.task_vectors.len();
    Ok(SimilarityReport {
        task_ids: assets
            .task_vectors
            .iter()
            .map(|tv| tv.task_id.clone())
            .collect(),
        matrix: (0..n).map(|i| matrix.row(i).to_vec()).collect(),
    })
}

fn extract(checkpoint_dir: &Path, out: &Path) -> Result<()> {
    let assets = load_assets(checkpoint_dir)?;
    let dir = out.join("task_vectors");
    std::fs::create_dir_all(&dir)?;
    checkpoint::save_params(&assets.base, "pre", &dir.join("pre.ckpt"))?;
    for tv in &assets.task_vectors {
        checkpoint::save_task_vector(
            tv,
            assets.base.descriptor(),
            &dir.join(format!("{}.tv", tv.task_id)),
        )?;
    }
    let sim = similarity_report(&assets)?;
    std::fs::write(dir.join("similarity.csv"), sim.to_csv())?;
    println!(
        "wrote {} task vectors and similarity.csv to {}",
        assets.task_vectors.len(),
        dir.display()
    );
    Ok(())
}

fn load_archive(archive: &Path, checkpoint_dir: &Path) -> Result<MergeAssets> {
    let pre_path = if archive.join("pre.ckpt").exists() {
        archive.join("pre.ckpt")
    } else {
        checkpoint_dir.join("pre.ckpt")
    };
    if !pre_path.exists() {
        return Err(Error::Dependency(format!(
            "missing base checkpoint {}",
            pre_path.display()
        )));
    }
    let (_, base) = checkpoint::load_params(&pre_path)?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(archive)
        .map_err(|e| Error::Dependency(format!("cannot read archive {}: {e}", archive.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tv"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Dependency(format!(
            "no task vectors in {}",
            archive.display()
        )));
    }
    let descriptor = base.descriptor().clone();
    let mut tvs = Vec::with_capacity(entries.len());
    for path in &entries {
        let (stored_desc, tv) = checkpoint::load_task_vector(path)?;
        if stored_desc != descriptor {
            return Err(Error::DescriptorMismatch(format!(
                "{} was extracted for a different architecture",
                path.display()
            )));
        }
        tvs.push(tv);
    }
    MergeAssets::new(base, tvs)
}

fn personalize(
    cfg: &ExperimentConfig,
    archive: &Path,
    checkpoints: &Path,
    out: &Path,
) -> Result<()> {
    let assets = load_archive(archive, checkpoints)?;
    let universe = TaskUniverse::generate(cfg.universe.clone(), cfg.master_seed)?;
    let section = &cfg.personalize;
    let similarity = similarity_report(&assets)?;

    let mut runs: Vec<ProtocolResult> = Vec::new();
    for &k in &section.k_shots {
        let users = universe.sample_user_specs(&cfg.users, k, 1)?;
        let mut protocols = vec![section.protocol_config(k, section.method())?];
        for &n_tasks in &section.n_tasks_sweep {
            let mut p = section.protocol_config(k, section.method())?;
            p.n_tasks = Some(n_tasks);
            protocols.push(p);
        }
        if section.best_fit_ft {
            protocols.push(section.protocol_config(k, Method::BestFitFinetune)?);
        }
        for protocol in protocols {
            let result = run_protocol(&universe, &users, &assets, &protocol, cfg.master_seed)?;
            println!(
                "{}: mean srocc {:.4} +/- {:.4}",
                run_label(&result),
                result.aggregate_mean,
                result.aggregate_std
            );
            runs.push(result);
        }
    }

    let report = RunReport::new(cfg.master_seed, cfg.to_toml(), Some(similarity), runs);
    report.verify_aggregates()?;
    let dir = out.join("personalize");
    report.save(&dir)?;
    dump_coefficients(&report, &dir)?;
    println!("wrote report to {}", dir.display());
    Ok(())
}

/// Per-run text dumps of the trained coefficients, plus one binary record
/// per run as an interchange example.
fn dump_coefficients(report: &RunReport, dir: &Path) -> Result<()> {
    let coef_dir = dir.join("coefficients");
    std::fs::create_dir_all(&coef_dir)?;
    for run in &report.runs {
        let label = sanitize(&run_label(run));
        let mut text = String::new();
        let mut first: Option<&CoefficientMatrix> = None;
        for user in &run.users {
            for trial in &user.trials {
                if let Some(cm) = &trial.coefficients {
                    text.push_str(&format!("# user {} trial {}\n", user.user, trial.trial));
                    text.push_str(&cm.to_text());
                    text.push('\n');
                    first.get_or_insert(cm);
                }
            }
        }
        if let Some(cm) = first {
            std::fs::write(coef_dir.join(format!("{label}.txt")), &text)?;
            checkpoint::save_coefficients(cm, &coef_dir.join(format!("{label}.ckpt")))?;
        }
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn simbench(cfg: &ExperimentConfig, count: usize, out: &Path) -> Result<()> {
    let universe = TaskUniverse::generate(cfg.universe.clone(), cfg.master_seed)?;
    let dir = out.join("simbench");
    std::fs::create_dir_all(&dir)?;
    let archive = serde_json::json!({
        "master_seed": cfg.master_seed,
        "universe": cfg.universe,
        "scorers": universe.scorers(),
    });
    std::fs::write(
        dir.join("universe.json"),
        serde_json::to_string_pretty(&archive).expect("universe"),
    )?;
    for i in 0..cfg.universe.n_databases {
        let set = universe.generate_database(i, count, 0)?;
        std::fs::write(dir.join(format!("db{i}.csv")), samples_to_csv(&set))?;
    }
    println!(
        "wrote universe.json and {} database exports ({count} samples each) to {}",
        cfg.universe.n_databases,
        dir.display()
    );
    for i in 0..cfg.universe.n_databases {
        for j in (i + 1)..cfg.universe.n_databases {
            let cos: f64 = universe
                .scorer(i)
                .iter()
                .zip(universe.scorer(j))
                .map(|(a, b)| a * b)
                .sum();
            println!(
                "  angle(db{i}, db{j}) = {:.1} deg",
                cos.clamp(-1.0, 1.0).acos().to_degrees()
            );
        }
    }
    Ok(())
}
