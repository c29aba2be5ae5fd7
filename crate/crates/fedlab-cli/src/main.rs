//! Command line driver for the federated-learning laboratory: single
//! runs, defense comparisons, hyperparameter grid scans, and the
//! malicious-majority probability calculator.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use fedlab::analysis::{
    chernoff_majority_bound, danger_zone_scan, exact_majority_prob, normal_majority_approx,
    GridEntry, MajorityQuery, SamplingModel,
};
use fedlab::config::{DefenseSpec, ExperimentSpec};
use fedlab::exp::{run_spec, RunSummary};
use fedlab::fed::CsvSink;
use fedlab::nn::TrainingConfig;
use fedlab::{Error, Result};

#[derive(Parser)]
#[command(name = "fedlab", version, about = "Federated-learning attack/defense laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML or JSON config file.
    Run {
        /// Experiment config (.toml or .json).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for rounds.csv, summary.json, manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for client training (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run every config in a directory (same experiment, different
    /// defenses) and merge the per-round metrics.
    Compare {
        /// Directory of .toml/.json configs, processed in filename order.
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override every config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Scan a training-hyperparameter grid with an undefended federation
    /// and flag stealthy-attack-friendly cells.
    Grid {
        /// Grid spec: axes, thresholds, and a base experiment.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print malicious-majority probabilities as JSON.
    Bounds {
        /// Fraction of clients controlled by the attacker.
        #[arg(long)]
        rho: f64,
        /// Total federation size N.
        #[arg(long)]
        clients: usize,
        /// Clients sampled per round C.
        #[arg(long)]
        sampled: usize,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FEDLAB_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

/// 1 for bad configs or arguments, 3 for filesystem/format trouble,
/// 2 for failures inside a run.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::InsufficientVictims { .. } => 1,
        Error::Io(_) | Error::Format(_) => 3,
        Error::Shape(_) => 2,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out, seed, jobs } => {
            configure_pool(jobs)?;
            cmd_run(&config, &out, seed)
        }
        Command::Compare { configs, out, seed, jobs } => {
            configure_pool(jobs)?;
            cmd_compare(&configs, &out, seed)
        }
        Command::Grid { config, out, jobs } => {
            configure_pool(jobs)?;
            cmd_grid(&config, &out)
        }
        Command::Bounds { rho, clients, sampled } => cmd_bounds(rho, clients, sampled),
    }
}

fn configure_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::config("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let spec = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        _ => {
            return Err(Error::config(format!(
                "{}: config files must end in .toml or .json",
                path.display()
            )))
        }
    };
    Ok(spec)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// The manifest is written last, so its presence marks a completed
/// command and its absence a crashed or interrupted one.
fn write_manifest(out: &Path, files: &[String]) -> Result<()> {
    write_json(out.join("manifest.json").as_path(), &serde_json::json!({ "files": files }))
}

fn summary_json(spec: &ExperimentSpec, summary: &RunSummary) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "schema_version": 1,
        "git_hash": env!("GIT_HASH"),
        "config": serde_json::to_value(spec)
            .map_err(|e| Error::format(format!("config echo: {e}")))?,
        "summary": serde_json::to_value(summary)
            .map_err(|e| Error::format(format!("summary: {e}")))?,
    }))
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = load_spec(config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    fs::create_dir_all(out)?;
    let output = {
        let mut sink = CsvSink::create(out.join("rounds.csv").as_path())?;
        run_spec(&spec, &mut sink)?
    };
    write_json(out.join("summary.json").as_path(), &summary_json(&spec, &output.summary)?)?;
    write_manifest(out, &["rounds.csv".into(), "summary.json".into()])?;
    println!(
        "{}: {} rounds, final mta {:.4}, final asr {:.4}",
        output.summary.defense, output.summary.rounds, output.summary.final_mta,
        output.summary.final_asr
    );
    Ok(())
}

/// Configs are comparable when they describe the same experiment apart
/// from the defense block.
fn assert_comparable(name_a: &str, a: &ExperimentSpec, name_b: &str, b: &ExperimentSpec) -> Result<()> {
    let mut a = a.clone();
    let mut b = b.clone();
    a.defense = DefenseSpec::Fedavg;
    b.defense = DefenseSpec::Fedavg;
    if a != b {
        return Err(Error::config(format!(
            "{name_a} and {name_b} differ outside the defense block and cannot be compared"
        )));
    }
    Ok(())
}

fn cmd_compare(configs: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(configs)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("toml") | Some("json"))
        })
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(Error::config(format!(
            "compare needs at least two configs in {}, found {}",
            configs.display(),
            paths.len()
        )));
    }

    let mut labeled: Vec<(String, ExperimentSpec)> = Vec::new();
    for p in &paths {
        let mut spec = load_spec(p)?;
        if let Some(s) = seed {
            spec.seed = s;
        }
        spec.validate()?;
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::config(format!("unusable file name {}", p.display())))?
            .to_string();
        labeled.push((stem, spec));
    }
    for (name, spec) in &labeled[1..] {
        assert_comparable(&labeled[0].0, &labeled[0].1, name, spec)?;
    }

    fs::create_dir_all(out)?;
    let mut writer = csv::Writer::from_path(out.join("compare.csv"))?;
    writer.write_record(["round", "defense", "mta", "asr", "excluded_count"])?;
    let mut summaries = Vec::new();
    for (label, spec) in &labeled {
        log::info!("running {label}");
        let output = run_spec(spec, &mut fedlab::fed::NullSink)?;
        for rec in &output.records {
            writer.write_record([
                rec.round.to_string(),
                label.clone(),
                format!("{}", rec.mta),
                format!("{}", rec.asr),
                rec.excluded.len().to_string(),
            ])?;
        }
        writer.flush()?;
        summaries.push(serde_json::json!({
            "label": label,
            "report": summary_json(spec, &output.summary)?,
        }));
        println!(
            "{label}: final mta {:.4}, final asr {:.4}",
            output.summary.final_mta, output.summary.final_asr
        );
    }
    drop(writer);
    write_json(out.join("summaries.json").as_path(), &serde_json::Value::Array(summaries))?;
    write_manifest(out, &["compare.csv".into(), "summaries.json".into()])?;
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct GridAxes {
    lr: Vec<f64>,
    batch_size: Vec<usize>,
    epochs: Vec<usize>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    #[serde(default = "default_lambda")]
    lambda: f64,
    #[serde(default = "default_tau")]
    tau: f64,
    axes: GridAxes,
    base: ExperimentSpec,
}

fn default_lambda() -> f64 {
    0.8
}
fn default_tau() -> f64 {
    0.85
}

fn load_grid(path: &Path) -> Result<GridSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let grid: GridSpec = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        _ => {
            return Err(Error::config(format!(
                "{}: grid files must end in .toml or .json",
                path.display()
            )))
        }
    };
    if grid.axes.lr.is_empty() || grid.axes.batch_size.is_empty() || grid.axes.epochs.is_empty() {
        return Err(Error::config("every grid axis needs at least one value"));
    }
    grid.base.validate()?;
    Ok(grid)
}

fn cmd_grid(config: &Path, out: &Path) -> Result<()> {
    let grid = load_grid(config)?;
    let mut cells = Vec::new();
    for lr in &grid.axes.lr {
        for bs in &grid.axes.batch_size {
            for ep in &grid.axes.epochs {
                cells.push(TrainingConfig { lr: *lr, batch_size: *bs, epochs: *ep });
            }
        }
    }

    fs::create_dir_all(out.join("cells"))?;
    let mut entries: Vec<GridEntry> = Vec::with_capacity(cells.len());
    let mut manifest = Vec::new();
    for (id, cell) in cells.iter().enumerate() {
        let cell_dir = out.join("cells").join(format!("cell_{id:03}"));
        let cell_file = cell_dir.join("cell.json");
        manifest.push(format!("cells/cell_{id:03}/cell.json"));
        if let Some(entry) = read_finished_cell(&cell_file, cell) {
            log::info!("cell {id} already complete, skipping");
            entries.push(entry);
            continue;
        }
        let report = danger_zone_scan(std::slice::from_ref(cell), &grid.base, grid.lambda, grid.tau)?;
        let entry = report.entries.into_iter().next().expect("one cell in, one entry out");
        fs::create_dir_all(&cell_dir)?;
        write_json(
            &cell_file,
            &serde_json::to_value(&entry).map_err(|e| Error::format(format!("cell {id}: {e}")))?,
        )?;
        entries.push(entry);
    }

    let mut writer = csv::Writer::from_path(out.join("danger_zones.csv"))?;
    writer.write_record([
        "config_id", "lr", "batch_size", "epochs", "mta", "asr", "lambda", "tau", "in_zone",
        "error",
    ])?;
    for (id, e) in entries.iter().enumerate() {
        writer.write_record([
            format!("cell_{id:03}"),
            format!("{}", e.training.lr),
            e.training.batch_size.to_string(),
            e.training.epochs.to_string(),
            e.mta.map(|v| format!("{v}")).unwrap_or_default(),
            e.asr.map(|v| format!("{v}")).unwrap_or_default(),
            format!("{}", grid.lambda),
            format!("{}", grid.tau),
            e.in_zone.to_string(),
            e.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    drop(writer);

    manifest.push("danger_zones.csv".into());
    write_manifest(out, &manifest)?;
    let zones = entries.iter().filter(|e| e.in_zone).count();
    println!("{} cells scanned, {zones} in the danger zone", entries.len());
    Ok(())
}

/// A cell is reused only if its file parses and describes the same
/// training configuration; anything else forces a re-run.
fn read_finished_cell(path: &Path, cell: &TrainingConfig) -> Option<GridEntry> {
    let text = fs::read_to_string(path).ok()?;
    let entry: GridEntry = serde_json::from_str(&text).ok()?;
    (entry.training == *cell).then_some(entry)
}

fn cmd_bounds(rho: f64, clients: usize, sampled: usize) -> Result<()> {
    let q = MajorityQuery::new(rho, sampled, clients)?;
    let report = serde_json::json!({
        "chernoff": chernoff_majority_bound(&q),
        "exact_binomial": exact_majority_prob(&q, SamplingModel::Binomial)?,
        "exact_hypergeometric": exact_majority_prob(&q, SamplingModel::Hypergeometric)?,
        "normal_approx": normal_majority_approx(&q),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::format(format!("bounds report: {e}")))?
    );
    Ok(())
}
