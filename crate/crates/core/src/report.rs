//! Run reports: persistence, CSV emission, consolidation across runs, and
//! plot-ready data files.
//!
//! Reports carry every per-trial record they aggregate, so any summary
//! statistic can be recomputed from the raw rows it ships with. Emission is
//! pure and order-canonicalized; re-emitting an unchanged report is
//! byte-identical.

use crate::error::{Error, Result};
use crate::protocol::ProtocolResult;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Cosine similarities between the task vectors used in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub task_ids: Vec<String>,
    /// Row-major n x n matrix.
    pub matrix: Vec<Vec<f64>>,
}

impl SimilarityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_id");
        for id in &self.task_ids {
            let _ = write!(out, ",{id}");
        }
        out.push('\n');
        for (id, row) in self.task_ids.iter().zip(&self.matrix) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Everything one `personalize` invocation produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub master_seed: u64,
    /// Canonical TOML snapshot of the experiment configuration.
    pub config_snapshot: String,
    pub config_digest: u64,
    pub similarity: Option<SimilarityReport>,
    pub runs: Vec<ProtocolResult>,
}

impl RunReport {
    pub fn new(
        master_seed: u64,
        config_snapshot: String,
        similarity: Option<SimilarityReport>,
        runs: Vec<ProtocolResult>,
    ) -> Self {
        let config_digest = fnv1a_str(&config_snapshot);
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            config_snapshot,
            config_digest,
            similarity,
            runs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(
            dir.join("records.csv"),
            records_csv(std::slice::from_ref(self)),
        )?;
        std::fs::write(
            dir.join("summary.csv"),
            summary_csv(std::slice::from_ref(self)),
        )?;
        if let Some(sim) = &self.similarity {
            std::fs::write(dir.join("similarity.csv"), sim.to_csv())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Dependency(format!("cannot read {}: {e}", path.display())))?;
        let report: RunReport = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "{}: report schema version {} (expected {REPORT_SCHEMA_VERSION})",
                path.display(),
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub fn record_count(&self) -> usize {
        self.runs
            .iter()
            .map(|r| r.users.iter().map(|u| u.trials.len()).sum::<usize>())
            .sum()
    }

    /// Recompute every aggregate from its raw records and check the stored
    /// values to an absolute 1e-12.
    pub fn verify_aggregates(&self) -> Result<()> {
        for run in &self.runs {
            for user in &run.users {
                let sroccs: Vec<f64> = user.trials.iter().map(|t| t.final_srocc).collect();
                let mean = mean_of(&sroccs);
                if (mean - user.mean_srocc).abs() > 1e-12 {
                    return Err(Error::Format(format!(
                        "user {} mean {} does not match records ({mean})",
                        user.user, user.mean_srocc
                    )));
                }
            }
            let user_means: Vec<f64> = run.users.iter().map(|u| u.mean_srocc).collect();
            let mean = mean_of(&user_means);
            if (mean - run.aggregate_mean).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "run '{}' aggregate {} does not match records ({mean})",
                    run_label(run),
                    run.aggregate_mean
                )));
            }
        }
        Ok(())
    }
}

/// Stable identifier for one protocol run inside the CSVs.
pub fn run_label(run: &ProtocolResult) -> String {
    format!(
        "{}|init={}|loss={:?}|n={}|k={}",
        run.method.label(),
        run.init_label,
        run.loss,
        run.n_tasks,
        run.shots
    )
    .to_lowercase()
}

/// One row per (run, user, trial), ordered by run, then user, then trial.
pub fn records_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("run,user,trial,seed,shots,final_srocc,zero_shot_mean\n");
    for report in reports {
        for run in &report.runs {
            let label = run_label(run);
            for user in &run.users {
                for trial in &user.trials {
                    let _ = writeln!(
                        out,
                        "{label},{},{},{},{},{},{}",
                        user.user,
                        trial.trial,
                        trial.seed,
                        trial.shots,
                        trial.final_srocc,
                        user.zero_shot_mean
                    );
                }
            }
        }
    }
    out
}

/// One row per run.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut out =
        String::from("run,method,init,loss,n_tasks,shots,trials,users,mean_srocc,std_srocc\n");
    for report in reports {
        for run in &report.runs {
            let _ = writeln!(
                out,
                "{},{},{},{:?},{},{},{},{},{},{}",
                run_label(run),
                run.method.label(),
                run.init_label,
                run.loss,
                run.n_tasks,
                run.shots,
                run.trials,
                run.users.len(),
                run.aggregate_mean,
                run.aggregate_std
            );
        }
    }
    out
}

/// Merge reports from several run directories into consolidated tables and
/// per-figure data series.
#[derive(Debug)]
pub struct Consolidated {
    pub reports: Vec<RunReport>,
}

impl Consolidated {
    pub fn from_dirs(dirs: &[std::path::PathBuf]) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::Dependency("no run directories given".into()));
        }
        let mut reports = Vec::with_capacity(dirs.len());
        for dir in dirs {
            let path = dir.join("report.json");
            if !path.exists() {
                return Err(Error::Dependency(format!(
                    "{} has no report.json",
                    dir.display()
                )));
            }
            let report = RunReport::load(&path)?;
            report.verify_aggregates()?;
            reports.push(report);
        }
        Ok(Self { reports })
    }

    pub fn record_count(&self) -> usize {
        self.reports.iter().map(RunReport::record_count).sum()
    }

    /// Write consolidated CSV/JSON plus x/y series files for the standard
    /// figures (scaling over task count, init comparison, step curves).
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("records.csv"), records_csv(&self.reports))?;
        std::fs::write(dir.join("summary.csv"), summary_csv(&self.reports))?;
        let summaries: Vec<serde_json::Value> = self
            .reports
            .iter()
            .flat_map(|r| r.runs.iter())
            .map(|run| {
                serde_json::json!({
                    "run": run_label(run),
                    "method": run.method.label(),
                    "init": run.init_label,
                    "loss": format!("{:?}", run.loss).to_lowercase(),
                    "n_tasks": run.n_tasks,
                    "shots": run.shots,
                    "mean_srocc": run.aggregate_mean,
                    "std_srocc": run.aggregate_std,
                })
            })
            .collect();
        let json = serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "record_count": self.record_count(),
            "runs": summaries,
        }))
        .expect("summary serializes");
        std::fs::write(dir.join("consolidated.json"), json)?;

        for (name, content) in self.figure_files() {
            std::fs::write(dir.join(name), content)?;
        }
        Ok(())
    }

    /// Figure data series keyed by file name.
    pub fn figure_files(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let runs: Vec<&ProtocolResult> = self.reports.iter().flat_map(|r| r.runs.iter()).collect();
        let mut shots: Vec<usize> = runs.iter().map(|r| r.shots).collect();
        shots.sort_unstable();
        shots.dedup();

        for &k in &shots {
            // Scaling over the number of task vectors.
            let mut scaling: Vec<(usize, f64, f64)> = runs
                .iter()
                .filter(|r| r.shots == k && r.method == crate::protocol::Method::Coefficients)
                .map(|r| (r.n_tasks, r.aggregate_mean, r.aggregate_std))
                .collect();
            scaling.sort_by_key(|&(n, _, _)| n);
            scaling.dedup_by_key(|&mut (n, _, _)| n);
            if scaling.len() > 1 {
                let mut csv = String::from("n_tasks,mean_srocc,std_srocc\n");
                for (n, mean, std) in scaling {
                    let _ = writeln!(csv, "{n},{mean},{std}");
                }
                out.push((format!("fig_scaling_k{k}.csv"), csv));
            }

            // Initialization comparison.
            let mut inits: Vec<(String, f64, f64)> = runs
                .iter()
                .filter(|r| r.shots == k)
                .map(|r| (r.init_label.clone(), r.aggregate_mean, r.aggregate_std))
                .collect();
            inits.sort_by(|a, b| a.0.cmp(&b.0));
            inits.dedup_by(|a, b| a.0 == b.0);
            if inits.len() > 1 {
                let mut csv = String::from("init,mean_srocc,std_srocc\n");
                for (init, mean, std) in inits {
                    let _ = writeln!(csv, "{init},{mean},{std}");
                }
                out.push((format!("fig_init_k{k}.csv"), csv));
            }

            // Held-out correlation over optimizer steps, averaged over
            // records, one series per run that captured snapshots.
            let mut curves: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
            for run in runs.iter().filter(|r| r.shots == k) {
                let mut by_step: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
                for user in &run.users {
                    for trial in &user.trials {
                        for &(step, s) in &trial.eval_curve {
                            by_step.entry(step).or_default().push(s);
                        }
                    }
                }
                if !by_step.is_empty() {
                    curves.push((
                        run_label(run),
                        by_step
                            .into_iter()
                            .map(|(step, v)| (step, mean_of(&v)))
                            .collect(),
                    ));
                }
            }
            if !curves.is_empty() {
                let mut csv = String::from("run,step,mean_srocc\n");
                curves.sort_by(|a, b| a.0.cmp(&b.0));
                for (label, points) in curves {
                    for (step, mean) in points {
                        let _ = writeln!(csv, "{label},{step},{mean}");
                    }
                }
                out.push((format!("fig_step_curves_k{k}.csv"), csv));
            }
        }
        out
    }
}

/// FNV-1a digest of a configuration snapshot.
pub fn fnv1a_str(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in s.as_bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
