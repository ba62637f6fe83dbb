//! `graphhull`: command-line driver for the archetypal convex-hull graph
//! model. Five subcommands cover the full pipeline: `split` holds out test
//! pairs, `fit` runs MAP inference, `sample` draws synthetic graphs with
//! ground truth, `evaluate` scores held-out pairs, and `diagnose` exports
//! geometry reports and figure data.
//!
//! Every run writes exactly one `manifest.json` next to its outputs recording
//! the resolved flags, input/output paths, seed, library version, and wall
//! time. All randomness flows from the single `--seed` flag through named
//! sub-streams, so reruns with identical flags reproduce outputs byte for
//! byte. `GRAPHHULL_THREADS` caps the worker pool.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use graphhull::diagnostics::geometry_report;
use graphhull::evaluation::{
    ari, auc_pr, auc_roc, circular_membership_layout, link_scores, nmi, pca_project,
    reorder_adjacency, MetricsReport,
};
use graphhull::generator::sample_draw;
use graphhull::graph::{format_pair_list, split_links, Graph};
use graphhull::inference::{fit, FitConfig};
use graphhull::io::{
    load_model, model_from_state, save_model, write_circular_anchors_tsv, write_circular_tsv,
    write_embeddings_tsv, write_pca_tsv, write_reorder_tsv, write_spectra_tsv, SavedModel,
};
use graphhull::params::Hyperparams;
use graphhull::spectral::spectral_init;

#[derive(Parser)]
#[command(
    name = "graphhull",
    version,
    about = "Archetypal convex-hull graph models: split, fit, sample, evaluate, diagnose"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hold out a connectivity-preserving test split of edges plus matched non-edges.
    Split(SplitArgs),
    /// Fit a model to an edge list by penalized MAP ascent.
    Fit(FitArgs),
    /// Sample a synthetic graph and its ground-truth model.
    Sample(SampleArgs),
    /// Score held-out pairs (and optionally communities) with a fitted model.
    Evaluate(EvaluateArgs),
    /// Export geometry diagnostics and figure data for a fitted model.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Edge-list file (one `id id` pair per line).
    #[arg(long)]
    graph: PathBuf,
    /// Fraction of edges to hold out, strictly inside (0, 1).
    #[arg(long)]
    holdout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Edge-list file to fit.
    #[arg(long)]
    graph: PathBuf,
    /// Latent dimension D.
    #[arg(long)]
    dim: usize,
    /// Number of hulls K (defaults to D; must satisfy K <= D).
    #[arg(long)]
    hulls: Option<usize>,
    /// Anchor mass bound; hulls are pairwise disjoint below 1/2.
    #[arg(long, default_value_t = 0.45)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.3)]
    sigma_min: f64,
    #[arg(long, default_value_t = 1.5)]
    sigma_max: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Negative pairs per epoch (defaults to the edge count).
    #[arg(long)]
    neg_samples: Option<usize>,
    /// Diversity prior weight; 0 disables it.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Assignment temperature at the first epoch.
    #[arg(long, default_value_t = 1.0)]
    gs_start: f64,
    /// Assignment temperature at the last epoch.
    #[arg(long, default_value_t = 0.1)]
    gs_end: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    nodes: usize,
    /// Latent dimension D.
    #[arg(long)]
    dim: usize,
    /// Number of hulls K (defaults to D; must satisfy K <= D).
    #[arg(long)]
    hulls: Option<usize>,
    #[arg(long, default_value_t = 0.45)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Held-out edges (`id id` per line).
    #[arg(long)]
    positives: PathBuf,
    /// Held-out non-edges (`id id` per line).
    #[arg(long)]
    negatives: PathBuf,
    /// Optional community labels (`id label` per line) for NMI/ARI.
    #[arg(long)]
    truth_labels: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Optional edge list; enables the curvature bound and adjacency reordering.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

/// The reproducibility record written next to every run's outputs.
#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    flags: BTreeMap<String, String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    seed: u64,
    library_version: String,
    wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

/// What a subcommand hands back for the manifest.
struct Outcome {
    out_dir: PathBuf,
    flags: BTreeMap<String, String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: u64,
    warnings: Vec<String>,
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let started = Instant::now();
    match run(cli.command, started) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_thread_pool() {
    if let Ok(text) = std::env::var("GRAPHHULL_THREADS") {
        match text.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!(
                "warning: ignoring GRAPHHULL_THREADS={text:?} (expected a positive integer)"
            ),
        }
    }
}

fn run(command: Command, started: Instant) -> Result<()> {
    let (subcommand, outcome) = match command {
        Command::Split(a) => ("split", cmd_split(&a)?),
        Command::Fit(a) => ("fit", cmd_fit(&a)?),
        Command::Sample(a) => ("sample", cmd_sample(&a)?),
        Command::Evaluate(a) => ("evaluate", cmd_evaluate(&a)?),
        Command::Diagnose(a) => ("diagnose", cmd_diagnose(&a)?),
    };
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        flags: outcome.flags,
        inputs: outcome.inputs.iter().map(|p| display_path(p)).collect(),
        outputs: outcome.outputs.iter().map(|p| display_path(p)).collect(),
        seed: outcome.seed,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        warnings: outcome.warnings,
    };
    let path = outcome.out_dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(())
}

fn display_path(p: &Path) -> String {
    p.display().to_string()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_graph(path: &Path) -> Result<Graph> {
    Graph::load(path).with_context(|| format!("reading graph {}", path.display()))
}

fn cmd_split(a: &SplitArgs) -> Result<Outcome> {
    fs::create_dir_all(&a.out_dir)?;
    let g = load_graph(&a.graph)?;
    let split = split_links(&g, a.holdout, a.seed)?;

    let residual_path = a.out_dir.join("residual.edges");
    split.residual.save(&residual_path)?;
    let positives_path = a.out_dir.join("test_positives.pairs");
    fs::write(&positives_path, format_pair_list(&g, &split.test_positives))?;
    let negatives_path = a.out_dir.join("test_negatives.pairs");
    fs::write(&negatives_path, format_pair_list(&g, &split.test_negatives))?;

    let mut warnings = Vec::new();
    if split.shortfall > 0 {
        warnings.push(format!(
            "holdout shortfall: {} of {} requested edges could not be removed without \
             disconnecting the residual graph; the split holds out {} pairs per side",
            split.shortfall,
            split.test_positives.len() + split.shortfall,
            split.test_positives.len()
        ));
    }

    Ok(Outcome {
        out_dir: a.out_dir.clone(),
        flags: BTreeMap::from([
            ("graph".into(), display_path(&a.graph)),
            ("holdout".into(), a.holdout.to_string()),
            ("seed".into(), a.seed.to_string()),
            ("out-dir".into(), display_path(&a.out_dir)),
        ]),
        inputs: vec![a.graph.clone()],
        outputs: vec![residual_path, positives_path, negatives_path],
        seed: a.seed,
        warnings,
    })
}

/// The serialized half of a fit report (the full state lives in the model
/// JSON; this captures how the run went).
#[derive(Serialize)]
struct FitSummary {
    objective_trace: Vec<f64>,
    diagnostics: graphhull::diagnostics::GeometryReport,
    seed: u64,
    epochs_run: usize,
    early_stopped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    aborted: Option<String>,
}

fn resolve_hulls(hulls: Option<usize>, dim: usize) -> Result<usize> {
    let k = hulls.unwrap_or(dim);
    if k > dim {
        bail!(
            "--hulls {k} exceeds --dim {dim}: each hull is anchored at its own archetype, so \
             the hull count K must satisfy K <= D; raise --dim or lower --hulls"
        );
    }
    Ok(k)
}

fn cmd_fit(a: &FitArgs) -> Result<Outcome> {
    let k = resolve_hulls(a.hulls, a.dim)?;
    let mut hp = Hyperparams::new(k, a.dim);
    hp.epsilon = a.epsilon;
    hp.sigma_min = a.sigma_min;
    hp.sigma_max = a.sigma_max;
    hp.kappa = a.kappa;
    hp.gs_temp_start = a.gs_start;
    hp.gs_temp_end = a.gs_end;
    hp.validate()?;

    fs::create_dir_all(&a.out_dir)?;
    let g = load_graph(&a.graph)?;
    let init = spectral_init(&g, &hp, a.seed)?;
    let mut cfg = FitConfig::new(a.epochs, a.seed);
    cfg.learning_rate = a.lr;
    cfg.n_negative_samples = a.neg_samples;
    cfg.validate()?;
    let report = fit(&g, &hp, &init, &cfg)?;

    let model_path = a.out_dir.join("model.json");
    save_model(&model_path, &report.final_state, &hp, &g.node_labels, a.seed)?;
    let embeddings_path = a.out_dir.join("embeddings.tsv");
    write_embeddings_tsv(&embeddings_path, &g.node_labels, &report.final_state)?;
    let summary_path = a.out_dir.join("fit_report.json");
    write_json(
        &summary_path,
        &FitSummary {
            objective_trace: report.objective_trace,
            diagnostics: report.diagnostics,
            seed: report.seed,
            epochs_run: report.epochs_run,
            early_stopped: report.early_stopped,
            aborted: report.aborted.clone(),
        },
    )?;

    let mut warnings = Vec::new();
    if let Some(reason) = report.aborted {
        warnings.push(format!(
            "optimizer stopped early and kept the last finite parameters: {reason}"
        ));
    }

    Ok(Outcome {
        out_dir: a.out_dir.clone(),
        flags: BTreeMap::from([
            ("graph".into(), display_path(&a.graph)),
            ("dim".into(), a.dim.to_string()),
            ("hulls".into(), k.to_string()),
            ("epsilon".into(), a.epsilon.to_string()),
            ("sigma-min".into(), a.sigma_min.to_string()),
            ("sigma-max".into(), a.sigma_max.to_string()),
            ("lr".into(), a.lr.to_string()),
            ("epochs".into(), a.epochs.to_string()),
            (
                "neg-samples".into(),
                a.neg_samples.map_or("auto".into(), |v| v.to_string()),
            ),
            ("kappa".into(), a.kappa.to_string()),
            ("gs-start".into(), a.gs_start.to_string()),
            ("gs-end".into(), a.gs_end.to_string()),
            ("seed".into(), a.seed.to_string()),
            ("out-dir".into(), display_path(&a.out_dir)),
        ]),
        inputs: vec![a.graph.clone()],
        outputs: vec![model_path, embeddings_path, summary_path],
        seed: a.seed,
        warnings,
    })
}

/// Ground truth emitted by `sample`: the mixing proportions plus the full
/// generating model in the same schema `fit` produces.
#[derive(Serialize)]
struct TruthJson {
    pi: Vec<f64>,
    model: SavedModel,
}

fn cmd_sample(a: &SampleArgs) -> Result<Outcome> {
    let k = resolve_hulls(a.hulls, a.dim)?;
    let mut hp = Hyperparams::new(k, a.dim);
    hp.epsilon = a.epsilon;
    hp.validate()?;
    if a.nodes == 0 {
        bail!("--nodes must be positive");
    }

    fs::create_dir_all(&a.out_dir)?;
    let draw = sample_draw(&hp, a.nodes, a.seed)?;

    let graph_path = a.out_dir.join("graph.edges");
    draw.graph.save(&graph_path)?;
    let truth_path = a.out_dir.join("truth.json");
    write_json(
        &truth_path,
        &TruthJson {
            pi: draw.pi.clone(),
            model: model_from_state(&draw.state, &hp, &draw.graph.node_labels, a.seed),
        },
    )?;
    let report = geometry_report(&draw.state, &hp, Some(draw.graph.deg_max()))?;
    let diagnostics_path = a.out_dir.join("diagnostics.json");
    write_json(&diagnostics_path, &report)?;

    Ok(Outcome {
        out_dir: a.out_dir.clone(),
        flags: BTreeMap::from([
            ("nodes".into(), a.nodes.to_string()),
            ("dim".into(), a.dim.to_string()),
            ("hulls".into(), k.to_string()),
            ("epsilon".into(), a.epsilon.to_string()),
            ("seed".into(), a.seed.to_string()),
            ("out-dir".into(), display_path(&a.out_dir)),
        ]),
        inputs: vec![],
        outputs: vec![graph_path, truth_path, diagnostics_path],
        seed: a.seed,
        warnings: Vec::new(),
    })
}

/// Parses a pair file (`id id` per line) against the model's label map.
fn parse_pairs(path: &Path, index: &HashMap<&str, usize>) -> Result<Vec<(usize, usize)>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading pairs {}", path.display()))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            bail!(
                "{}:{}: expected a pair `id id`, got `{line}`",
                path.display(),
                lineno + 1
            );
        }
        let resolve = |id: &str| {
            index.get(id).copied().ok_or_else(|| {
                anyhow::anyhow!(
                    "{}:{}: pair `{line}` names node `{id}`, which the model does not cover",
                    path.display(),
                    lineno + 1
                )
            })
        };
        pairs.push((resolve(tokens[0])?, resolve(tokens[1])?));
    }
    Ok(pairs)
}

/// Parses a label file (`id label` per line) into per-node predicted/true
/// community index vectors over exactly the listed nodes.
fn parse_truth_labels(
    path: &Path,
    index: &HashMap<&str, usize>,
    assignments: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading labels {}", path.display()))?;
    let mut dense: HashMap<String, usize> = HashMap::new();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            bail!(
                "{}:{}: expected `id label`, got `{line}`",
                path.display(),
                lineno + 1
            );
        }
        let node = index.get(tokens[0]).copied().ok_or_else(|| {
            anyhow::anyhow!(
                "{}:{}: node `{}` is not covered by the model",
                path.display(),
                lineno + 1,
                tokens[0]
            )
        })?;
        let next = dense.len();
        let label = *dense.entry(tokens[1].to_string()).or_insert(next);
        pred.push(assignments[node]);
        truth.push(label);
    }
    if pred.is_empty() {
        bail!("{}: no labeled nodes found", path.display());
    }
    Ok((pred, truth))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<Outcome> {
    let (state, _hp, labels, model_seed) = load_model(&a.model)
        .with_context(|| format!("loading model {}", a.model.display()))?;
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let positives = parse_pairs(&a.positives, &index)?;
    let negatives = parse_pairs(&a.negatives, &index)?;
    let mut pairs = positives.clone();
    pairs.extend_from_slice(&negatives);
    let scores = link_scores(&state, &pairs)?;
    let mut truth_flags = vec![true; positives.len()];
    truth_flags.extend(std::iter::repeat_n(false, negatives.len()));

    let (nmi_value, ari_value) = match &a.truth_labels {
        Some(path) => {
            let (pred, truth) = parse_truth_labels(path, &index, &state.assignments)?;
            (Some(nmi(&pred, &truth)?), Some(ari(&pred, &truth)?))
        }
        None => (None, None),
    };

    let report = MetricsReport {
        auc_roc: auc_roc(&scores, &truth_flags)?,
        auc_pr: auc_pr(&scores, &truth_flags)?,
        nmi: nmi_value,
        ari: ari_value,
        n_test_pairs: pairs.len(),
    };

    fs::create_dir_all(&a.out_dir)?;
    let metrics_path = a.out_dir.join("metrics.json");
    write_json(&metrics_path, &report)?;

    let mut inputs = vec![a.model.clone(), a.positives.clone(), a.negatives.clone()];
    let mut flags = BTreeMap::from([
        ("model".into(), display_path(&a.model)),
        ("positives".into(), display_path(&a.positives)),
        ("negatives".into(), display_path(&a.negatives)),
        ("out-dir".into(), display_path(&a.out_dir)),
    ]);
    if let Some(path) = &a.truth_labels {
        flags.insert("truth-labels".into(), display_path(path));
        inputs.push(path.clone());
    }

    Ok(Outcome {
        out_dir: a.out_dir.clone(),
        flags,
        inputs,
        outputs: vec![metrics_path],
        seed: model_seed,
        warnings: Vec::new(),
    })
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<Outcome> {
    let (state, hp, labels, model_seed) = load_model(&a.model)
        .with_context(|| format!("loading model {}", a.model.display()))?;

    let graph = match &a.graph {
        Some(path) => {
            let g = load_graph(path)?;
            if g.n_nodes != state.z.nrows() {
                bail!(
                    "graph {} has {} nodes but the model covers {}",
                    path.display(),
                    g.n_nodes,
                    state.z.nrows()
                );
            }
            Some(g)
        }
        None => None,
    };

    let report = geometry_report(&state, &hp, graph.as_ref().map(|g| g.deg_max()))?;

    fs::create_dir_all(&a.out_dir)?;
    let geometry_path = a.out_dir.join("geometry.json");
    write_json(&geometry_path, &report)?;
    let spectra_path = a.out_dir.join("spectra.tsv");
    write_spectra_tsv(&spectra_path, &report)?;

    let (projection, _explained) = pca_project(&state.z)?;
    let pca_path = a.out_dir.join("pca.tsv");
    write_pca_tsv(&pca_path, &labels, &state.assignments, &projection)?;

    let layout = circular_membership_layout(&state.omega, &state.assignments)?;
    let circular_path = a.out_dir.join("circular.tsv");
    write_circular_tsv(&circular_path, &labels, &state.assignments, &layout)?;
    let anchors_path = a.out_dir.join("circular_anchors.tsv");
    write_circular_anchors_tsv(&anchors_path, &layout)?;

    let mut outputs = vec![
        geometry_path,
        spectra_path,
        pca_path,
        circular_path,
        anchors_path,
    ];
    let mut inputs = vec![a.model.clone()];
    if let Some(g) = &graph {
        let order = reorder_adjacency(g, &state)?;
        let reorder_path = a.out_dir.join("reorder.tsv");
        write_reorder_tsv(&reorder_path, &labels, &order)?;
        outputs.push(reorder_path);
    }

    let mut flags = BTreeMap::from([
        ("model".into(), display_path(&a.model)),
        ("out-dir".into(), display_path(&a.out_dir)),
    ]);
    if let Some(path) = &a.graph {
        flags.insert("graph".into(), display_path(path));
        inputs.push(path.clone());
    }

    Ok(Outcome {
        out_dir: a.out_dir.clone(),
        flags,
        inputs,
        outputs,
        seed: model_seed,
        warnings: Vec::new(),
    })
}
