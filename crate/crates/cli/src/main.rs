use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hgcn::coarsen::coarsen_dataset;
use hgcn::dataset::{load_dataset, save_dataset, DatasetBundle};
use hgcn::gradcheck::{run_gradcheck, GradcheckConfig};
use hgcn::model::SavedModel;
use hgcn::train::evaluate;
use hgcn_cli::{
    model_file_name, parse_list, parse_seeds, run_experiment, summarize, summary_line, write_json,
    ExperimentSpec,
};

#[derive(Parser)]
#[command(name = "hgcn", version, about = "Hierarchical graph convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write reports and models.
    Train(Box<TrainArgs>),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    /// Write every coarsening level of a dataset.
    Coarsen(CoarsenArgs),
    /// Finite-difference check of the model gradients on a random small graph.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for reports and models.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed count (starting at --seed) or comma-separated seed list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Node-weight embedding width; 0 disables the embedding.
    #[arg(long)]
    nwe_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_coarsen: bool,
    #[arg(long)]
    no_nwe: bool,
    /// Comma-separated labeled nodes per class, one sweep point each.
    #[arg(long)]
    labels_per_class: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Saved model JSON written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::All)]
    split: Split,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct CoarsenArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest node count of the random graph.
    #[arg(long, default_value_t = 12)]
    nodes: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    no_nwe: bool,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<hgcn::Error> for Failure {
    fn from(e: hgcn::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(*a),
        Command::Eval(a) => eval(a),
        Command::Coarsen(a) => coarsen(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(dir: &Path) -> Result<DatasetBundle, Failure> {
    if !dir.is_dir() {
        return Err(Failure::Usage(format!("{} is not a dataset directory", dir.display())));
    }
    load_dataset(dir).map_err(Failure::from)
}

fn experiment_spec(a: &TrainArgs) -> Result<ExperimentSpec, Failure> {
    let mut spec = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(d) = &a.data {
        spec.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        spec.out = Some(o.clone());
    }
    let m = &mut spec.model;
    m.layers = a.layers.unwrap_or(m.layers);
    m.channels = a.channels.unwrap_or(m.channels);
    m.hidden = a.hidden.unwrap_or(m.hidden);
    m.nwe_dim = a.nwe_dim.unwrap_or(m.nwe_dim);
    m.dropout = a.dropout.unwrap_or(m.dropout);
    m.use_coarsening &= !a.no_coarsen;
    m.use_node_weight_embedding &= !a.no_nwe;
    let t = &mut spec.train;
    t.lr = a.lr.unwrap_or(t.lr);
    t.l2 = a.l2.unwrap_or(t.l2);
    t.epochs = a.epochs.unwrap_or(t.epochs);
    if let Some(seed) = a.seed {
        t.seed = seed;
        spec.seeds = vec![seed];
    }
    if let Some(s) = &a.seeds {
        spec.seeds = parse_seeds(s, t.seed).map_err(Failure::Usage)?;
    }
    if let Some(l) = &a.labels_per_class {
        spec.labels_per_class = parse_list(l).map_err(Failure::Usage)?;
    }
    spec.normalize();
    spec.model
        .validate()
        .and_then(|_| spec.train.validate())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(spec)
}

fn train(a: TrainArgs) -> Result<ExitCode, Failure> {
    let spec = experiment_spec(&a)?;
    let data = spec
        .data
        .clone()
        .ok_or_else(|| Failure::Usage("--data is required".into()))?;
    let bundle = load(&data)?;
    let out = spec.out.clone().unwrap_or_else(|| PathBuf::from("hgcn-runs"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("experiment.json"), &spec)?;

    let runs = run_experiment(&spec, &bundle)?;
    let fingerprint = bundle.fingerprint();
    let mut timings = Vec::with_capacity(runs.len());
    for run in &runs {
        let r = &run.report;
        eprintln!(
            "{}\tseed {}\tepoch {}\tval {:.4}\ttest {:.4}\t{:.1}s",
            r.dataset,
            r.seed,
            r.selected_epoch,
            r.val_accuracy.unwrap_or(f64::NAN),
            r.test_accuracy.unwrap_or(f64::NAN),
            r.wall_clock_secs
        );
        let path = out.join(model_file_name(run.labels_per_class, r.seed));
        write_json(&path, &run.model.to_saved(fingerprint.clone()))?;
        timings.push(serde_json::json!({
            "labels_per_class": run.labels_per_class,
            "seed": r.seed,
            "wall_clock_secs": r.wall_clock_secs,
        }));
    }
    let reports: Vec<_> = runs.iter().map(|r| &r.report).collect();
    write_json(&out.join("reports.json"), &reports)?;
    write_json(&out.join("timings.json"), &timings)?;

    let stdout = std::io::stdout();
    let mut stdout = stdout.lock();
    if spec.labels_per_class.is_empty() {
        let (mean, std) = summarize(reports.iter().copied());
        writeln!(stdout, "{}", summary_line(&bundle.name, spec.seeds.len(), mean, std)).ok();
    } else {
        for &k in &spec.labels_per_class {
            let point = runs
                .iter()
                .filter(|r| r.labels_per_class == Some(k))
                .map(|r| &r.report);
            let (mean, std) = summarize(point);
            let name = format!("{}:{k}", bundle.name);
            writeln!(stdout, "{}", summary_line(&name, spec.seeds.len(), mean, std)).ok();
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode, Failure> {
    let bundle = load(&a.data)?;
    let text = fs::read_to_string(&a.model)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", a.model.display())))?;
    let saved: SavedModel = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", a.model.display()))?;
    let ms = saved.restore(&bundle)?;
    let s = &bundle.splits;
    let splits: Vec<(&str, &[usize])> = match a.split {
        Split::Train => vec![("train", &s.train)],
        Split::Val => vec![("val", &s.val)],
        Split::Test => vec![("test", &s.test)],
        Split::All => vec![("train", &s.train), ("val", &s.val), ("test", &s.test)],
    };
    for (name, nodes) in splits {
        if nodes.is_empty() {
            continue;
        }
        println!("{name}\t{}", evaluate(&ms, &bundle, nodes)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn coarsen(a: CoarsenArgs) -> Result<ExitCode, Failure> {
    let mut level = load(&a.data)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_dataset(&level, a.out.join("level_0"))?;
    let mut sizes = vec![level.graph.n()];
    for i in 0..a.levels {
        let (coarse, m) = coarsen_dataset(&level)?;
        let path = a.out.join(format!("grouping_{i}.tsv"));
        let body: String = m
            .assignment()
            .iter()
            .enumerate()
            .map(|(f, c)| format!("{f}\t{c}\n"))
            .collect();
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        save_dataset(&coarse, a.out.join(format!("level_{}", i + 1)))?;
        sizes.push(coarse.graph.n());
        level = coarse;
    }
    let line: Vec<String> = sizes.iter().map(usize::to_string).collect();
    println!("{}", line.join(" -> "));
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode, Failure> {
    if a.nodes < 2 {
        return Err(Failure::Usage("--nodes must be at least 2".into()));
    }
    let report = run_gradcheck(&GradcheckConfig {
        seed: a.seed,
        max_nodes: a.nodes,
        use_node_weight_embedding: !a.no_nwe,
        ..GradcheckConfig::default()
    })?;
    println!(
        "max_rel_error\t{:.3e}\t{}\tnodes={}\tscalars={}",
        report.max_rel_error, report.worst_param, report.nodes, report.scalars
    );
    Ok(if report.max_rel_error < a.tol {
        ExitCode::SUCCESS
    } else {
        eprintln!("gradient check failed: {:.3e} >= {:.1e}", report.max_rel_error, a.tol);
        ExitCode::from(1)
    })
}
