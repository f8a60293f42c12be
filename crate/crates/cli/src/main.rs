#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use resolvnet::experiments::{run_clique_experiment, run_collapse_experiment, ExperimentConfig, ExperimentKind};
use resolvnet::model::{
    accuracy, predict_classes, train, Dataset, Mode, ModelSpec, ResolvNetModel, Split, TrainConfig,
};
use resolvnet::multiscale::ScaleDecomposition;
use resolvnet::suites::{self, SuiteOptions};
use resolvnet::{coarsen, decompose, load_graph, CheckReport, GraphDocument, WeightedGraph};

#[derive(Parser)]
#[command(name = "resolvnet", version, about = "Resolvent-based multi-scale graph networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Graph document (JSON or edge list).
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print machine-readable JSON to stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Split a graph into regular and high-scale parts.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau: f64,
    },
    /// Build the coarse graph over high-scale components.
    Coarsen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau: f64,
    },
    /// Run a battery of checks; exits non-zero if any fails.
    Verify {
        which: Check,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau: Option<f64>,
        /// Comma-separated scale values.
        #[arg(long, value_delimiter = ',')]
        scan: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        z: f64,
    },
    /// Train a node classifier on a labeled graph.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a graph.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run a desk-scale experiment.
    Experiment {
        which: ExperimentKindArg,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Thm31,
    Thm32,
    Thm41,
    Thm42,
    #[value(name = "appA")]
    AppA,
    #[value(name = "appD")]
    AppD,
    Mpnn,
}

impl Check {
    fn file_stem(self) -> &'static str {
        match self {
            Check::Thm31 => "thm31",
            Check::Thm32 => "thm32",
            Check::Thm41 => "thm41",
            Check::Thm42 => "thm42",
            Check::AppA => "appA",
            Check::AppD => "appD",
            Check::Mpnn => "mpnn",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKindArg {
    Clique,
    Collapse,
}

fn read_graph(path: &Path) -> Result<WeightedGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(load_graph(&GraphDocument::parse(&text)?)?)
}

fn need_graph(c: &Common) -> Result<WeightedGraph> {
    match &c.graph {
        Some(p) => read_graph(p),
        None => bail!("--graph is required"),
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
}

fn warn_separation(d: &ScaleDecomposition) {
    match d.separation_ratio() {
        Ok(r) if r >= 1.0 => eprintln!("warning: scales are not separated (ratio {r:.3} >= 1)"),
        Ok(_) => {}
        Err(_) => eprintln!("warning: no edge reaches the threshold; the high-scale part is empty"),
    }
}

#[derive(Serialize)]
struct DecompositionSummary {
    nodes: usize,
    tau: f64,
    regular_edges: usize,
    high_edges: usize,
    components: Vec<Vec<String>>,
    lambda_max_reg: f64,
    lambda_1_high: Option<f64>,
    separation_ratio: Option<f64>,
}

fn count_edges(w: &nalgebra::DMatrix<f64>) -> usize {
    let n = w.nrows();
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| w[(i, j)] != 0.0).count()
}

fn print_reports(reports: &[CheckReport], json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(reports)?);
        return Ok(());
    }
    for r in reports {
        let mut line = format!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name);
        if let Some(l) = r.lhs {
            line.push_str(&format!(" lhs={l:.6e}"));
        }
        if let Some(b) = r.rhs_bound {
            line.push_str(&format!(" bound={b:.6e}"));
        }
        if let Some(s) = r.slope {
            line.push_str(&format!(" slope={s:.4}"));
        }
        println!("{line}");
    }
    Ok(())
}

fn scans_csv(reports: &[CheckReport]) -> String {
    let mut s = String::from("check,S,value\n");
    for r in reports {
        for p in &r.scan {
            s.push_str(&format!("{},{},{}\n", r.name, p.s, p.gap));
        }
    }
    s
}

fn finish(reports: &[CheckReport], common: &Common, stem: &str) -> Result<ExitCode> {
    print_reports(reports, common.json)?;
    if let Some(dir) = &common.out {
        write_out(dir, &format!("{stem}.json"), &serde_json::to_string_pretty(reports)?)?;
        write_out(dir, &format!("{stem}_scans.csv"), &scans_csv(reports))?;
    }
    Ok(if reports.iter().all(|r| r.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// Training settings for the `train` and `eval` subcommands.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainRunConfig {
    layers: usize,
    hidden: usize,
    a: usize,
    #[serde(rename = "K")]
    k_max: usize,
    z: f64,
    c_nf: Option<f64>,
    head_hidden: Option<usize>,
    train_frac: f64,
    val_frac: f64,
    train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            hidden: 32,
            a: 0,
            k_max: 1,
            z: -1.0,
            c_nf: None,
            head_hidden: None,
            train_frac: 0.6,
            val_frac: 0.2,
            train: TrainConfig::default(),
        }
    }
}

fn read_train_config(c: &Common) -> Result<TrainRunConfig> {
    let mut cfg: TrainRunConfig = match &c.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).context("parsing train config")?,
        None => TrainRunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct NodeMetrics {
    train_accuracy: f64,
    val_accuracy: f64,
    test_accuracy: f64,
}

fn node_metrics(model: &ResolvNetModel, g: &WeightedGraph, split: &Split) -> Result<NodeMetrics> {
    let x = g.features().context("graph has no node features")?;
    let labels = g.class_labels().context("graph has no class labels")?;
    let pred = predict_classes(&model.forward(&model.prepare(g, x)?)?);
    Ok(NodeMetrics {
        train_accuracy: accuracy(&pred, labels, &split.train),
        val_accuracy: accuracy(&pred, labels, &split.val),
        test_accuracy: accuracy(&pred, labels, &split.test),
    })
}

fn run_train(common: &Common) -> Result<ExitCode> {
    let g = need_graph(common)?;
    let cfg = read_train_config(common)?;
    let x = g.features().context("graph has no node features")?.clone();
    let labels = g.class_labels().context("graph has no class labels")?.to_vec();
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let spec = ModelSpec {
        input_dim: x.ncols(),
        layer_dims: vec![cfg.hidden; cfg.layers],
        a: cfg.a,
        k_max: cfg.k_max,
        z: cfg.z,
        mode: Mode::NodeClassification,
        head_hidden: cfg.head_hidden,
        output_dim: classes,
        c_nf: cfg.c_nf,
    };
    let seed = cfg.train.seed;
    let split = Split::random(g.n(), cfg.train_frac, cfg.val_frac, seed);
    let mut model = ResolvNetModel::init(&spec, seed)?;
    let prep = model.prepare(&g, &x)?;
    let hist = train(
        &mut model,
        &Dataset::Nodes {
            graph: &prep,
            labels: &labels,
            split: &split,
        },
        &cfg.train,
    )?;
    let metrics = node_metrics(&model, &g, &split)?;
    let metrics_json = serde_json::to_string_pretty(&metrics)?;
    if let Some(dir) = &common.out {
        write_out(dir, "model.json", &model.to_json()?)?;
        write_out(dir, "history.csv", &hist.to_csv())?;
        write_out(dir, "metrics.json", &metrics_json)?;
        write_out(dir, "split.json", &serde_json::to_string_pretty(&split)?)?;
    }
    if common.json {
        println!("{metrics_json}");
    } else {
        println!(
            "best epoch {}  train {:.4}  val {:.4}  test {:.4}",
            hist.best_epoch, metrics.train_accuracy, metrics.val_accuracy, metrics.test_accuracy
        );
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GraphMetrics {
    prediction: f64,
    target: Option<f64>,
    abs_error: Option<f64>,
}

fn run_eval(common: &Common, model_path: &Path) -> Result<ExitCode> {
    let g = need_graph(common)?;
    let model = ResolvNetModel::from_json(&fs::read_to_string(model_path)?)?;
    let text = match model.mode {
        Mode::NodeClassification => {
            let cfg = read_train_config(common)?;
            let split = Split::random(g.n(), cfg.train_frac, cfg.val_frac, cfg.train.seed);
            serde_json::to_string_pretty(&node_metrics(&model, &g, &split)?)?
        }
        Mode::GraphRegression => {
            let x = g.features().context("graph has no node features")?;
            let prediction = model.forward(&model.prepare(&g, x)?)?[(0, 0)];
            let target = match g.labels() {
                Some(resolvnet::graph::GraphLabels::GraphTarget(t)) => Some(*t),
                _ => None,
            };
            serde_json::to_string_pretty(&GraphMetrics {
                prediction,
                target,
                abs_error: target.map(|t| (prediction - t).abs()),
            })?
        }
    };
    println!("{text}");
    if let Some(dir) = &common.out {
        write_out(dir, "eval.json", &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_verify(which: Check, common: &Common, tau: Option<f64>, opts: SuiteOptions) -> Result<ExitCode> {
    let mut reports = match which {
        Check::Thm31 => suites::resolvent_rate_suite(&opts)?,
        Check::Thm32 => suites::expressivity_suite()?,
        Check::Thm41 => suites::scale_consistency_suite(&opts)?,
        Check::Thm42 => suites::graph_consistency_suite(&opts)?,
        Check::AppA => suites::limit_suite(&opts)?,
        Check::AppD => suites::stability_suite(&opts)?,
        Check::Mpnn => suites::mpnn_suite(&opts)?,
    };
    if let Some(path) = &common.graph {
        let tau = tau.context("--tau is required with --graph")?;
        let g = read_graph(path)?;
        let d = decompose(&g, tau)?;
        warn_separation(&d);
        reports.extend(suites::graph_checks(&d, opts.z)?);
    }
    finish(&reports, common, which.file_stem())
}

fn experiment_config(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let cfg = ExperimentConfig::from_json(&text)?;
            if cfg.experiment != kind {
                bail!("config describes a different experiment");
            }
            cfg
        }
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run_experiment(which: ExperimentKindArg, common: &Common) -> Result<ExitCode> {
    let kind = match which {
        ExperimentKindArg::Clique => ExperimentKind::Clique,
        ExperimentKindArg::Collapse => ExperimentKind::Collapse,
    };
    let cfg = experiment_config(kind, common)?;
    let out = common.out.clone().or_else(|| cfg.out.clone().map(PathBuf::from));
    let (checks, files): (Vec<CheckReport>, Vec<(&str, String)>) = match kind {
        ExperimentKind::Clique => {
            let path = common.graph.clone().or_else(|| cfg.source.clone().map(PathBuf::from));
            let source = path.as_deref().map(read_graph).transpose()?;
            let r = run_clique_experiment(&cfg, source.as_ref())?;
            (r.checks(), vec![("clique.csv", r.to_csv())])
        }
        ExperimentKind::Collapse => {
            let r = run_collapse_experiment(&cfg)?;
            (
                r.checks(),
                vec![("collapse_distances.csv", r.distance_csv()), ("collapse_mae.csv", r.mae_csv())],
            )
        }
    };
    if let Some(dir) = &out {
        for (name, body) in &files {
            write_out(dir, name, body)?;
        }
        write_out(dir, "config.json", &cfg.to_json()?)?;
    }
    if !common.json {
        for (_, body) in &files {
            print!("{body}");
        }
    }
    let stem = match kind {
        ExperimentKind::Clique => "clique_checks",
        ExperimentKind::Collapse => "collapse_checks",
    };
    finish(&checks, &Common { out, ..common.clone() }, stem)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Decompose { common, tau } => {
            let g = need_graph(&common)?;
            let d = decompose(&g, tau)?;
            warn_separation(&d);
            let ids = g.ids();
            let summary = DecompositionSummary {
                nodes: g.n(),
                tau,
                regular_edges: count_edges(d.w_reg()),
                high_edges: count_edges(d.w_high()),
                components: d
                    .high_components()
                    .iter()
                    .map(|c| c.iter().map(|&i| ids[i].clone()).collect())
                    .collect(),
                lambda_max_reg: d.lambda_max_reg(),
                lambda_1_high: d.lambda_1_high(),
                separation_ratio: d.separation_ratio().ok(),
            };
            let text = serde_json::to_string_pretty(&summary)?;
            if let Some(dir) = &common.out {
                write_out(dir, "decomposition.json", &text)?;
            }
            if common.json || common.out.is_none() {
                println!("{text}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Coarsen { common, tau } => {
            let g = need_graph(&common)?;
            let d = decompose(&g, tau)?;
            warn_separation(&d);
            let c = coarsen(&d)?;
            let text = serde_json::to_string_pretty(&c.to_document())?;
            if let Some(dir) = &common.out {
                write_out(dir, "coarsening.json", &text)?;
            }
            if common.json || common.out.is_none() {
                println!("{text}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            which,
            common,
            tau,
            scan,
            instances,
            z,
        } => {
            let mut opts = SuiteOptions {
                seed: common.seed.unwrap_or(0),
                instances,
                z,
                ..SuiteOptions::default()
            };
            if let Some(s) = scan {
                if s.len() < 3 || s.windows(2).any(|w| !(w[0] < w[1])) {
                    bail!("--scan needs at least three increasing values");
                }
                opts.scan = s;
            }
            run_verify(which, &common, tau, opts)
        }
        Command::Train { common } => run_train(&common),
        Command::Eval { common, model } => run_eval(&common, &model),
        Command::Experiment { which, common } => run_experiment(which, &common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
