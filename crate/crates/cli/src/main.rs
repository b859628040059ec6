//! `fbgsp`: smoothness analysis, spectra, cSBM generation and FB-GNN
//! training from the command line.
//!
//! Every subcommand writes exactly one JSON document to stdout; progress and
//! human-readable tables go to stderr. Exit codes: 0 success, 1 usage error,
//! 2 input error, 3 computation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fbgsp::data::{self, CsbmParams, Dataset, DatasetFormat};
use fbgsp::eigen::eigendecompose_symmetric;
use fbgsp::model::Architecture;
use fbgsp::smoothness::{smoothness_report, SmoothnessReport};
use fbgsp::train::{run_trial_suite, SuiteConfig, SuiteResult, TrainConfig};
use fbgsp::{OperatorKind, SparseOperator};
use serde::Serialize;

const THREADS_VAR: &str = "FBGSP_THREADS";

#[derive(Parser)]
#[command(name = "fbgsp", version, about = "Graph smoothness analysis and filterbank GNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feature and label smoothness under one or more Laplacians.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated operator kinds; affinities are measured through
        /// their complementary Laplacian.
        #[arg(long, value_delimiter = ',', default_value = "sym")]
        lap: Vec<OperatorKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train models over seeded splits and report mean accuracy.
    Train {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated models; the first is the baseline for deltas.
        #[arg(long, value_delimiter = ',', default_value = "gcn,fb-spectral")]
        model: Vec<Architecture>,
        #[command(flatten)]
        training: TrainArgs,
    },
    /// The channel × transform ablation grid.
    Ablate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        training: TrainArgs,
    },
    /// Write a cSBM sample as a generic bundle plus `params.json`.
    Gen {
        #[command(flatten)]
        csbm: CsbmArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ascending spectrum of a graph operator.
    Eig {
        #[command(flatten)]
        input: InputArgs,
        /// Random-walk kinds are solved through their symmetric similar.
        #[arg(long, default_value = "sym")]
        lap: OperatorKind,
        /// Include `|u_iᵀ x|²` for every feature column.
        #[arg(long)]
        fourier: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Generic,
    Webkb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// p_in 0.2, p_out 0.02
    Homophily,
    /// p_in 0.02, p_out 0.2
    Heterophily,
}

#[derive(Args)]
struct CsbmArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

impl CsbmArgs {
    fn any_set(&self) -> bool {
        self.preset.is_some()
            || self.nodes.is_some()
            || self.classes.is_some()
            || self.p_in.is_some()
            || self.p_out.is_some()
            || self.feature_dim.is_some()
            || self.mu.is_some()
            || self.sigma.is_some()
    }

    fn params(&self, seed: u64) -> CsbmParams {
        let mut p = CsbmParams {
            seed,
            ..CsbmParams::default()
        };
        match self.preset {
            Some(Preset::Homophily) => (p.p_in, p.p_out) = (0.2, 0.02),
            Some(Preset::Heterophily) => (p.p_in, p.p_out) = (0.02, 0.2),
            None => {}
        }
        p.nodes = self.nodes.unwrap_or(p.nodes);
        p.classes = self.classes.unwrap_or(p.classes);
        p.p_in = self.p_in.unwrap_or(p.p_in);
        p.p_out = self.p_out.unwrap_or(p.p_out);
        p.feature_dim = self.feature_dim.unwrap_or(p.feature_dim);
        p.mu = self.mu.unwrap_or(p.mu);
        p.sigma = self.sigma.unwrap_or(p.sigma);
        p
    }
}

#[derive(Args)]
struct InputArgs {
    /// Dataset directory (generic bundle or WebKB layout).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    /// Generate a cSBM sample in memory instead of loading files.
    #[arg(long)]
    csbm: bool,
    #[command(flatten)]
    csbm_args: CsbmArgs,
    /// Seeds the generator and, for training, the first split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 10)]
    splits: usize,
    /// Hidden layer widths, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    hidden: Vec<usize>,
    /// Low-pass operator; the high-pass operator is its complement.
    #[arg(long, default_value = "renorm-rw")]
    lp: OperatorKind,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    patience: usize,
    /// Directory for per-run `epoch,layer,alpha_L,alpha_H` files.
    #[arg(long)]
    alpha_csv: Option<PathBuf>,
    /// Keep per-run wall-clock times (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Input(fbgsp::Error),
    Compute(fbgsp::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Compute(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Input(e) => write!(f, "input error: {e}"),
            Failure::Compute(e) => write!(f, "computation error: {e}"),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn compute<T>(r: fbgsp::Result<T>) -> Outcome<T> {
    r.map_err(Failure::Compute)
}

fn input<T>(r: fbgsp::Result<T>) -> Outcome<T> {
    r.map_err(Failure::Input)
}

fn load_input(args: &InputArgs) -> Outcome<Dataset> {
    let wants_csbm = args.csbm || args.csbm_args.any_set();
    match (&args.data, wants_csbm) {
        (Some(_), true) => Err(Failure::Usage("--data and cSBM flags are mutually exclusive".into())),
        (None, false) => Err(Failure::Usage("give --data DIR or --csbm".into())),
        (Some(dir), false) => {
            let format = match args.format {
                FormatArg::Auto => DatasetFormat::Auto,
                FormatArg::Generic => DatasetFormat::Generic,
                FormatArg::Webkb => DatasetFormat::WebKb,
            };
            let ds = input(data::load_dataset(dir, format))?;
            if ds.dropped_self_loops > 0 {
                eprintln!("note: dropped {} self-loop lines", ds.dropped_self_loops);
            }
            Ok(ds)
        }
        (None, true) => input(data::generate_csbm(&args.csbm_args.params(args.seed))),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Outcome<()> {
    let text = compute(data::report_to_json(value))?;
    if let Some(path) = out {
        input(data::save_report(path, value))?;
    }
    println!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeOutput {
    dataset: String,
    nodes: usize,
    edges: usize,
    features: usize,
    classes: usize,
    reports: Vec<SmoothnessReport>,
}

fn analyze(args: &InputArgs, kinds: &[OperatorKind], out: Option<&Path>) -> Outcome<()> {
    let ds = load_input(args)?;
    let reports = kinds
        .iter()
        .map(|k| compute(smoothness_report(&ds.graph, &ds.features, &ds.labels, ds.num_classes, k.as_laplacian())))
        .collect::<Outcome<Vec<_>>>()?;
    eprintln!(
        "{:<16} {:>10} {:>10} {:>10} {:>8} {:>8}",
        "laplacian", "feature S", "label S", "diff", "h_node", "h_edge"
    );
    for r in &reports {
        eprintln!(
            "{:<16} {:>10.3} {:>10.3} {:>10.3} {:>8.3} {:>8.3}",
            r.laplacian_kind.flag_name(),
            r.feature_s,
            r.label_s,
            r.diff,
            r.node_homophily,
            r.edge_homophily
        );
    }
    let output = AnalyzeOutput {
        dataset: ds.name.clone(),
        nodes: ds.node_count(),
        edges: ds.graph.edge_count(),
        features: ds.features.cols(),
        classes: ds.num_classes,
        reports,
    };
    emit(&output, out)
}

fn threads_from_env() -> Outcome<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

fn suite(args: &InputArgs, archs: &[Architecture], t: &TrainArgs) -> Outcome<()> {
    if archs.is_empty() {
        return Err(Failure::Usage("no models given".into()));
    }
    let hp = t
        .lp
        .complement()
        .filter(|_| !t.lp.is_laplacian())
        .ok_or_else(|| Failure::Usage(format!("--lp {} is not an affinity operator", t.lp)))?;
    let ds = load_input(args)?;
    let cfg = SuiteConfig {
        hidden: t.hidden.clone(),
        lp_kind: t.lp,
        hp_kind: hp,
        train: TrainConfig {
            lr: t.lr,
            weight_decay: t.weight_decay,
            max_epochs: t.epochs,
            patience: t.patience,
            seed: args.seed,
            ..TrainConfig::default()
        },
        split: Default::default(),
        n_splits: t.splits,
        threads: threads_from_env()?,
    };
    eprintln!(
        "{}: {} nodes, {} edges, {} features, {} classes; {} splits",
        ds.name,
        ds.node_count(),
        ds.graph.edge_count(),
        ds.features.cols(),
        ds.num_classes,
        cfg.n_splits
    );
    let mut result: SuiteResult = compute(run_trial_suite(&ds, archs, &cfg))?;
    if !t.timing {
        for r in &mut result.runs {
            r.wall_clock_seconds = None;
        }
    }
    for row in &result.rows {
        eprintln!(
            "{:<14} {:>14}  ±{:.2}  ({} parameters)",
            row.model,
            row.table_cell(),
            100.0 * row.std,
            row.parameter_count
        );
    }
    if let Some(dir) = &t.alpha_csv {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Input(io_error(dir, e)))?;
        for run in result.runs.iter().filter(|r| r.alpha_trajectory.iter().any(|l| !l.is_empty())) {
            let path = dir.join(format!("{}-seed{}.csv", run.model, run.seed));
            std::fs::write(&path, run.alpha_csv()).map_err(|e| Failure::Input(io_error(&path, e)))?;
        }
    }
    emit(&result, t.out.as_deref())
}

fn io_error(path: &Path, e: std::io::Error) -> fbgsp::Error {
    fbgsp::Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn gen(csbm: &CsbmArgs, seed: Option<u64>, out: &Path) -> Outcome<()> {
    let params = csbm.params(seed.unwrap_or(0));
    let ds = input(data::generate_csbm(&params))?;
    input(data::save_bundle(&ds, out))?;
    let params_path = out.join(data::PARAMS_FILE);
    input(data::save_report(&params_path, &params))?;
    eprintln!(
        "wrote {} nodes, {} edges to {}",
        ds.node_count(),
        ds.graph.edge_count(),
        out.display()
    );
    #[derive(Serialize)]
    struct GenOutput<'a> {
        out: String,
        params: &'a CsbmParams,
        nodes: usize,
        edges: usize,
    }
    emit(
        &GenOutput {
            out: out.display().to_string(),
            params: &params,
            nodes: ds.node_count(),
            edges: ds.graph.edge_count(),
        },
        None,
    )
}

#[derive(Serialize)]
struct EigOutput {
    dataset: String,
    requested: OperatorKind,
    solved: OperatorKind,
    eigenvalues: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fourier_energy: Option<Vec<Vec<f64>>>,
}

fn eig(args: &InputArgs, kind: OperatorKind, fourier: bool, out: Option<&Path>) -> Outcome<()> {
    let ds = load_input(args)?;
    let solved = kind.symmetric_similar();
    let op = compute(SparseOperator::build(&ds.graph, solved))?;
    let dec = compute(eigendecompose_symmetric(&op.to_dense()))?;
    if solved != kind {
        eprintln!("solving {} through its symmetric similar {}", kind, solved);
    }
    let fourier_energy = if fourier {
        let mut profile = Vec::with_capacity(ds.features.cols());
        for k in 0..ds.features.cols() {
            let coeffs = compute(dec.fourier_transform(&ds.features.col(k)))?;
            profile.push(coeffs.iter().map(|c| c * c).collect());
        }
        Some(profile)
    } else {
        None
    };
    let (lo, hi) = (dec.eigenvalues[0], dec.eigenvalues[dec.eigenvalues.len() - 1]);
    eprintln!("{}: {} eigenvalues in [{lo:.6}, {hi:.6}]", ds.name, dec.eigenvalues.len());
    emit(
        &EigOutput {
            dataset: ds.name,
            requested: kind,
            solved,
            eigenvalues: dec.eigenvalues,
            fourier_energy,
        },
        out,
    )
}

fn run(cli: Cli) -> Outcome<()> {
    match cli.command {
        Command::Analyze { input, lap, out } => analyze(&input, &lap, out.as_deref()),
        Command::Train {
            input,
            model,
            training,
        } => suite(&input, &model, &training),
        Command::Ablate { input, training } => suite(&input, &Architecture::ABLATION_GRID, &training),
        Command::Gen { csbm, seed, out } => gen(&csbm, seed, &out),
        Command::Eig {
            input,
            lap,
            fourier,
            out,
        } => eig(&input, lap, fourier, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fbgsp: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
