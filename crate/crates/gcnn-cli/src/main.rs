//! Command-line driver: training, evaluation, gradient checking, filter and
//! feature-map inspection, and coarsening reports.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use gcnn::coarsen;
use gcnn::data::{self, Dataset, ExperimentManifest};
use gcnn::graph::{self, Graph, WeightMode};
use gcnn::net::{KnotDomain, Network, NetworkConfig};
use gcnn::spectral;
use gcnn::verify::{self, DiffScheme, GradTarget, GradVariant, ProtocolSetup};
use gcnn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gcnn",
    about = "Spectral graph CNN trainer and analysis tools",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics, checkpoints, and a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test set.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump interpolated filters and per-layer feature maps of a checkpoint.
    InspectFilters(InspectArgs),
    /// Report AMG coarsening levels and write coarse graphs.
    CoarsenReport(CoarsenArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridMode {
    Regular,
    Subsampled,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeightModeArg {
    Binary,
    Euclidean,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KnotDomainArg {
    Rank,
    Value,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    Data,
    Filters,
    Tracked,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Proposed,
    Naive,
    Both,
}

/// Flags shared by every command.
#[derive(Args)]
struct CommonArgs {
    /// Input domain: the full 28x28 grid or its random subsampling.
    #[arg(long, value_enum)]
    grid: Option<GridMode>,
    /// Number of vertices to exclude in subsampled mode.
    #[arg(long)]
    exclude: Option<usize>,
    /// Master seed for initialization, shuffling, and subsampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional JSON configuration file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Worker thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Force ordered reductions and zero the timing column for bit-identical
    /// logs.
    #[arg(long)]
    deterministic: bool,
    /// Grid edge-weight convention (identical on the unit grid).
    #[arg(long, value_enum)]
    weight_mode: Option<WeightModeArg>,
    /// Write the (possibly subsampled) input graph as an edge list.
    #[arg(long)]
    graph_out: Option<PathBuf>,
    /// Load the input graph from an edge list instead of constructing it.
    #[arg(long)]
    graph_in: Option<PathBuf>,
    /// Dump the level-0 eigenbasis to a binary file.
    #[arg(long)]
    dump_basis: Option<PathBuf>,
}

#[derive(Args)]
struct NetArgs {
    /// Architecture string, e.g. "C20 P C50 P R F".
    #[arg(long)]
    arch: Option<String>,
    /// Tracked spline weights per convolution.
    #[arg(long)]
    tracked_weights: Option<usize>,
    /// Strength-of-connection threshold for AMG aggregation.
    #[arg(long)]
    beta: Option<f64>,
    /// Internal coarsening levels per pooling layer.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Insert a ReLU after every convolution layer.
    #[arg(long)]
    relu_after_conv: bool,
    /// Hidden width for the fully connected head.
    #[arg(long)]
    fc_hidden: Option<usize>,
    /// Spline knot placement: eigenvalue rank or eigenvalue value.
    #[arg(long, value_enum)]
    knot_domain: Option<KnotDomainArg>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    net: NetArgs,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[arg(long)]
    test_limit: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    net: NetArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test_limit: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Gradient to check.
    #[arg(long, value_enum, default_value = "data")]
    target: TargetArg,
    /// Formulation(s) to score.
    #[arg(long, value_enum, default_value = "both")]
    variant: VariantArg,
    /// Comma-separated tracked-weight counts to sweep.
    #[arg(long, value_delimiter = ',')]
    tracked_weights: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Perturbation scale.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Use one-sided forward differences instead of central.
    #[arg(long)]
    forward_diff: bool,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    in_channels: usize,
    #[arg(long, default_value_t = 1)]
    out_channels: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test-set sample to trace through the network.
    #[arg(long, default_value_t = 0)]
    sample: usize,
}

#[derive(Args)]
struct CoarsenArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    beta: Option<f64>,
    /// Total coarsening levels to report.
    #[arg(long)]
    levels: Option<usize>,
}

/// File-backed configuration; any present field acts as a default that
/// explicit flags override.
#[derive(Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    grid: Option<String>,
    exclude: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    mnist_dir: Option<PathBuf>,
    weight_mode: Option<String>,
    architecture: Option<String>,
    tracked_weights: Option<usize>,
    beta: Option<f64>,
    pool_levels: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    relu_after_conv: Option<bool>,
    fc_hidden: Option<usize>,
    knot_domain: Option<String>,
    deterministic: Option<bool>,
}

/// Fully resolved experiment settings.
struct Resolved {
    grid: GridMode,
    exclude: usize,
    seed: u64,
    out: PathBuf,
    mnist_dir: PathBuf,
    weight_mode: WeightMode,
    net: NetworkConfig,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("config file {}: {e}", p.display())))
        }
    }
}

fn resolve(common: &CommonArgs, net: Option<&NetArgs>) -> Result<Resolved> {
    let file = load_file_config(&common.config)?;
    let grid = match (&common.grid, file.grid.as_deref()) {
        (Some(g), _) => *g,
        (None, Some("regular")) => GridMode::Regular,
        (None, Some("subsampled")) => GridMode::Subsampled,
        (None, Some(other)) => {
            return Err(Error::config(format!("unknown grid mode {other:?}")))
        }
        (None, None) => GridMode::Regular,
    };
    let weight_mode = match (&common.weight_mode, file.weight_mode.as_deref()) {
        (Some(WeightModeArg::Binary), _) => WeightMode::Binary,
        (Some(WeightModeArg::Euclidean), _) => WeightMode::Euclidean,
        (None, Some("binary")) => WeightMode::Binary,
        (None, Some("euclidean")) => WeightMode::Euclidean,
        (None, Some(other)) => {
            return Err(Error::config(format!("unknown weight mode {other:?}")))
        }
        (None, None) => WeightMode::Binary,
    };
    let seed = common.seed.or(file.seed).unwrap_or(0);
    let defaults = NetworkConfig::default();
    let knot_domain = match net.and_then(|n| n.knot_domain) {
        Some(KnotDomainArg::Rank) => KnotDomain::Rank,
        Some(KnotDomainArg::Value) => KnotDomain::Value,
        None => match file.knot_domain.as_deref() {
            Some("rank") | None => KnotDomain::Rank,
            Some("value") => KnotDomain::Value,
            Some(other) => {
                return Err(Error::config(format!("unknown knot domain {other:?}")))
            }
        },
    };
    let cfg = NetworkConfig {
        architecture: net
            .and_then(|n| n.arch.clone())
            .or(file.architecture)
            .unwrap_or(defaults.architecture),
        tracked_weights: net
            .and_then(|n| n.tracked_weights)
            .or(file.tracked_weights)
            .unwrap_or(defaults.tracked_weights),
        beta: net.and_then(|n| n.beta).or(file.beta).unwrap_or(defaults.beta),
        pool_levels: net
            .and_then(|n| n.levels)
            .or(file.pool_levels)
            .unwrap_or(defaults.pool_levels),
        learning_rate: net
            .and_then(|n| n.lr)
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        momentum: net
            .and_then(|n| n.momentum)
            .or(file.momentum)
            .unwrap_or(defaults.momentum),
        batch_size: net
            .and_then(|n| n.batch_size)
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        epochs: net
            .and_then(|n| n.epochs)
            .or(file.epochs)
            .unwrap_or(defaults.epochs),
        seed,
        relu_after_conv: net.map(|n| n.relu_after_conv).unwrap_or(false)
            || file.relu_after_conv.unwrap_or(false),
        fc_hidden: net.and_then(|n| n.fc_hidden).or(file.fc_hidden),
        knot_domain,
        deterministic: common.deterministic || file.deterministic.unwrap_or(false),
    };
    Ok(Resolved {
        grid,
        exclude: common.exclude.or(file.exclude).unwrap_or(84),
        seed,
        out: common
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("out")),
        mnist_dir: common
            .mnist_dir
            .clone()
            .or(file.mnist_dir)
            .unwrap_or_else(|| PathBuf::from("data")),
        weight_mode,
        net: cfg,
    })
}

/// Builds the experiment graph: a 28x28 grid (optionally subsampled with the
/// run seed) or a caller-provided edge list. Returns the graph and, in
/// subsampled mode, the kept original indices.
fn build_experiment_graph(
    r: &Resolved,
    common: &CommonArgs,
) -> Result<(Graph, Option<Vec<usize>>)> {
    if let Some(path) = &common.graph_in {
        let file = File::open(path)?;
        let g = Graph::read_edge_list(file)?;
        return Ok((g, None));
    }
    let full = graph::build_grid_graph_weighted(28, 28, r.weight_mode)?;
    let (g, kept) = match r.grid {
        GridMode::Regular => (full, None),
        GridMode::Subsampled => {
            let (g, kept) = graph::subsample_graph(&full, r.exclude, r.seed)?;
            (g, Some(kept))
        }
    };
    if let Some(path) = &common.graph_out {
        let mut f = BufWriter::new(File::create(path)?);
        g.write_edge_list(&mut f)?;
    }
    Ok((g, kept))
}

fn mnist_paths(dir: &Path) -> [(String, PathBuf); 4] {
    [
        ("train_images".into(), dir.join("train-images-idx3-ubyte")),
        ("train_labels".into(), dir.join("train-labels-idx1-ubyte")),
        ("test_images".into(), dir.join("t10k-images-idx3-ubyte")),
        ("test_labels".into(), dir.join("t10k-labels-idx1-ubyte")),
    ]
}

fn load_datasets(
    r: &Resolved,
    grid_graph: &Graph,
    kept: Option<&[usize]>,
) -> Result<(Dataset, Dataset)> {
    let paths = mnist_paths(&r.mnist_dir);
    for (_, p) in &paths {
        if !p.exists() {
            return Err(Error::config(format!(
                "MNIST file {} not found; pass --mnist-dir or place the IDX files there",
                p.display()
            )));
        }
    }
    let full_grid = graph::build_grid_graph_weighted(28, 28, r.weight_mode)?;
    let train = data::load_mnist(&paths[0].1, &paths[1].1, &full_grid)?;
    let test = data::load_mnist(&paths[2].1, &paths[3].1, &full_grid)?;
    match kept {
        None => Ok((train, test)),
        Some(kept) => Ok((
            data::subsample_dataset(&train, kept, grid_graph)?,
            data::subsample_dataset(&test, kept, grid_graph)?,
        )),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_manifest(
    r: &Resolved,
    kept: Option<&[usize]>,
    include_data_checksums: bool,
) -> Result<()> {
    let mut checksums = std::collections::BTreeMap::new();
    if include_data_checksums {
        for (role, path) in mnist_paths(&r.mnist_dir) {
            checksums.insert(role, sha256_file(&path)?);
        }
    }
    let excluded: Vec<usize> = match kept {
        None => Vec::new(),
        Some(kept) => {
            let kept_set: std::collections::HashSet<usize> = kept.iter().cloned().collect();
            (0..784).filter(|v| !kept_set.contains(v)).collect()
        }
    };
    let manifest = ExperimentManifest {
        seed: r.seed,
        grid: match r.grid {
            GridMode::Regular => "regular".into(),
            GridMode::Subsampled => "subsampled".into(),
        },
        excluded_vertices: excluded,
        config: serde_json::to_value(&r.net)
            .map_err(|e| Error::config(format!("manifest serialization: {e}")))?,
        file_checksums: checksums,
    };
    let path = r.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::config(format!("manifest serialization: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let r = resolve(&args.common, Some(&args.net))?;
    fs::create_dir_all(&r.out)?;
    let (g, kept) = build_experiment_graph(&r, &args.common)?;
    let (mut train, mut test) = load_datasets(&r, &g, kept.as_deref())?;
    if let Some(limit) = args.train_limit {
        train = train.take(limit);
    }
    if let Some(limit) = args.test_limit {
        test = test.take(limit);
    }
    println!(
        "graph: {} vertices ({} components); train {} / test {} samples",
        g.n(),
        g.component_count(),
        train.len(),
        test.len()
    );

    let mut net = Network::build(&r.net, &g)?;
    if let Some(path) = &args.common.dump_basis {
        let basis = net.basis_for_conv(0);
        let mut f = BufWriter::new(File::create(path)?);
        basis.write_binary(&mut f)?;
    }
    write_manifest(&r, kept.as_deref(), true)?;

    let metrics_path = r.out.join("metrics.csv");
    let mut metrics_file = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics_file, "epoch,train_loss,test_accuracy,seconds")?;
    metrics_file.flush()?;

    let outcome = net.train(&train, &test, &mut |m| {
        writeln!(
            metrics_file,
            "{},{},{},{:.3}",
            m.epoch, m.train_loss, m.test_accuracy, m.seconds
        )?;
        metrics_file.flush()?;
        println!(
            "epoch {:>4}: train_loss {:.6}  test_acc {:.2}%  ({:.1}s)",
            m.epoch, m.train_loss, m.test_accuracy, m.seconds
        );
        Ok(())
    })?;

    let best_path = r.out.join("checkpoint-best.bin");
    let mut f = BufWriter::new(File::create(&best_path)?);
    net.write_checkpoint(&outcome.best_params, &mut f)?;
    let final_path = r.out.join("checkpoint-final.bin");
    let mut f = BufWriter::new(File::create(&final_path)?);
    net.write_checkpoint(net.params(), &mut f)?;
    println!(
        "best test accuracy {:.2}% at epoch {}; artifacts in {}",
        outcome.best_accuracy,
        outcome.best_epoch,
        r.out.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let r = resolve(&args.common, Some(&args.net))?;
    let (g, kept) = build_experiment_graph(&r, &args.common)?;
    let (_, mut test) = load_datasets(&r, &g, kept.as_deref())?;
    if let Some(limit) = args.test_limit {
        test = test.take(limit);
    }
    let mut net = Network::build(&r.net, &g)?;
    let file = File::open(&args.checkpoint)?;
    net.load_checkpoint(file)?;
    let accuracy = net.evaluate(&test)?;
    println!("test_accuracy {accuracy}");
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let r = resolve(&args.common, None)?;
    fs::create_dir_all(&r.out)?;
    let (g, _kept) = build_experiment_graph(&r, &args.common)?;
    let basis = spectral::eigendecompose_cached(&graph::laplacian(&g))?;
    if let Some(path) = &args.common.dump_basis {
        let mut f = BufWriter::new(File::create(path)?);
        basis.write_binary(&mut f)?;
    }
    let setup = ProtocolSetup {
        basis,
        samples: args.samples,
        in_channels: args.in_channels,
        out_channels: args.out_channels,
        step: args.step,
        scheme: if args.forward_diff {
            DiffScheme::Forward
        } else {
            DiffScheme::Central
        },
    };
    let m_values = args
        .tracked_weights
        .clone()
        .unwrap_or_else(|| vec![60.min(g.n())]);
    let target = match args.target {
        TargetArg::Data => GradTarget::Data,
        TargetArg::Filters => GradTarget::Filters,
        TargetArg::Tracked => GradTarget::Tracked,
    };
    let reports = match args.variant {
        VariantArg::Both => {
            verify::compare_variants(&setup, &[target], &m_values, args.runs, r.seed)?
        }
        VariantArg::Proposed => verify::run_protocol(
            &setup,
            target,
            GradVariant::Proposed,
            &m_values,
            args.runs,
            r.seed,
        )?,
        VariantArg::Naive => verify::run_protocol(
            &setup,
            target,
            GradVariant::Naive,
            &m_values,
            args.runs,
            r.seed,
        )?,
    };

    let summary_path = r.out.join("gradcheck.csv");
    let mut f = BufWriter::new(File::create(&summary_path)?);
    writeln!(
        f,
        "target,variant,tracked,runs,mean_pct_error,std_pct_error,max_abs_error,failed_runs"
    )?;
    for rep in &reports {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            rep.target.name(),
            rep.variant.name(),
            rep.tracked,
            rep.runs,
            rep.mean_pct_error,
            rep.std_pct_error,
            rep.max_abs_error,
            rep.failed_runs
        )?;
    }
    let runs_path = r.out.join("gradcheck_runs.csv");
    let mut f = BufWriter::new(File::create(&runs_path)?);
    writeln!(f, "target,variant,tracked,run,pct_error")?;
    for rep in &reports {
        for (i, e) in rep.per_run_pct.iter().enumerate() {
            writeln!(
                f,
                "{},{},{},{},{}",
                rep.target.name(),
                rep.variant.name(),
                rep.tracked,
                i,
                e
            )?;
        }
    }

    for rep in &reports {
        println!(
            "{:<8} {:<9} m={:<5} runs={:<4} mean {:.6}% +- {:.6}%  (max abs {:.3e}, {} failed)",
            rep.target.name(),
            rep.variant.name(),
            rep.tracked,
            rep.runs,
            rep.mean_pct_error,
            rep.std_pct_error,
            rep.max_abs_error,
            rep.failed_runs
        );
    }
    println!("reports written to {}", summary_path.display());
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let r = resolve(&args.common, Some(&args.net))?;
    fs::create_dir_all(&r.out)?;
    let (g, kept) = build_experiment_graph(&r, &args.common)?;
    let (_, test) = load_datasets(&r, &g, kept.as_deref())?;
    if args.sample >= test.len() {
        return Err(Error::invalid_argument(format!(
            "sample {} out of range ({} test samples)",
            args.sample,
            test.len()
        )));
    }
    let mut net = Network::build(&r.net, &g)?;
    let file = File::open(&args.checkpoint)?;
    net.load_checkpoint(file)?;

    // Interpolated filters, one CSV per convolution layer.
    for (idx, conv) in net.params().convs.iter().enumerate() {
        let basis = net.basis_for_conv(idx);
        let k = conv.full_filters()?;
        let path = r.out.join(format!("filters_conv{}.csv", idx + 1));
        let mut f = BufWriter::new(File::create(&path)?);
        writeln!(f, "in_channel,out_channel,bin,eigenvalue,multiplier")?;
        let (i_ch, o_ch, n) = k.dim();
        for i in 0..i_ch {
            for o in 0..o_ch {
                for bin in 0..n {
                    writeln!(
                        f,
                        "{},{},{},{},{}",
                        i,
                        o,
                        bin,
                        basis.lambda()[bin],
                        k[[i, o, bin]]
                    )?;
                }
            }
        }
    }

    // Per-layer feature maps of the chosen sample, in the vertex domain.
    let image = test
        .images()
        .slice(ndarray::s![args.sample..args.sample + 1, ..]);
    let dumps = net.inspect_sample(&image)?;
    let vertex_labels: Option<&[usize]> = g.vertex_labels();
    for dump in &dumps {
        let path = r.out.join(format!("featmap_{}.csv", dump.name));
        let mut f = BufWriter::new(File::create(&path)?);
        let channels = dump.data.nrows();
        let header: Vec<String> = (0..channels).map(|c| format!("ch{c}")).collect();
        writeln!(f, "vertex,row,col,{}", header.join(","))?;
        for v in 0..dump.data.ncols() {
            // Original grid coordinates exist only at the input level.
            let (row, col) = if dump.level == 0 {
                let orig = vertex_labels.map(|l| l[v]).unwrap_or(v);
                ((orig / 28).to_string(), (orig % 28).to_string())
            } else {
                (String::new(), String::new())
            };
            let values: Vec<String> = (0..channels)
                .map(|c| format!("{}", dump.data[[c, v]]))
                .collect();
            writeln!(f, "{},{},{},{}", v, row, col, values.join(","))?;
        }
    }
    println!(
        "wrote {} filter files and {} feature-map files to {}",
        net.params().convs.len(),
        dumps.len(),
        r.out.display()
    );
    Ok(())
}

fn cmd_coarsen_report(args: &CoarsenArgs) -> Result<()> {
    let r = resolve(&args.common, None)?;
    fs::create_dir_all(&r.out)?;
    let (g, _kept) = build_experiment_graph(&r, &args.common)?;
    let beta = args.beta.unwrap_or(r.net.beta);
    let levels = args.levels.unwrap_or(r.net.pool_levels);
    let hierarchy = coarsen::amg_coarsen(&g, beta, levels, r.seed)?;
    println!("level 0: {} vertices, {} edges", g.n(), g.edge_count());
    for (i, lvl) in hierarchy.levels().iter().enumerate() {
        let sizes = lvl.aggregate_sizes();
        let mut histogram = std::collections::BTreeMap::new();
        for s in sizes {
            *histogram.entry(s).or_insert(0usize) += 1;
        }
        let hist: Vec<String> = histogram
            .iter()
            .map(|(size, count)| format!("{size}:{count}"))
            .collect();
        println!(
            "level {}: {} vertices, {} edges, aggregate sizes {{{}}}",
            i + 1,
            lvl.coarse_n(),
            lvl.coarse_graph.edge_count(),
            hist.join(", ")
        );
        let path = r.out.join(format!("coarse_level{}.edges", i + 1));
        let mut f = BufWriter::new(File::create(&path)?);
        lvl.coarse_graph.write_edge_list(&mut f)?;
    }

    // Polarity-split alternative on the input graph.
    let basis = spectral::eigendecompose_cached(&graph::laplacian(&g))?;
    let (kept_set, complement) = coarsen::polarity_split(&basis);
    println!(
        "polarity split of the top eigenvector: {} kept / {} complement",
        kept_set.len(),
        complement.len()
    );
    println!("coarse graphs written to {}", r.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = match &cli.command {
        Command::Train(a) => a.common.threads,
        Command::Eval(a) => a.common.threads,
        Command::Gradcheck(a) => a.common.threads,
        Command::InspectFilters(a) => a.common.threads,
        Command::CoarsenReport(a) => a.common.threads,
    };
    if let Some(n) = threads {
        std::env::set_var("OPENBLAS_NUM_THREADS", n.to_string());
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::InspectFilters(a) => cmd_inspect(a),
        Command::CoarsenReport(a) => cmd_coarsen_report(a),
    }
}

fn main() -> ExitCode {
    // Usage problems exit 1; numerical failures 2; IO/format problems 3.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
