//! `mgfa`: fit constrained mixtures of factor analyzers, rerun the
//! simulation experiments, print the relative-reduction table and sample
//! the builtin mixtures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mgfa::aecm::{factor_scores, ScoreCentering};
use mgfa::data_io::{
    load_csv, load_mixture_spec, load_model, standardize, write_atomically, write_csv, write_model,
    ModelFile,
};
use mgfa::model::relative_reduction_table;
use mgfa::simulation::{
    builtin_mixture, experiment_dataset, format_summary_table, run_experiment, sample_n,
    write_runs_csv, write_summary_csv, BoundsSetting, ExperimentConfig, MixtureSpec,
};
use mgfa::{fit, misclassification_error, EigenBounds, FitConfig, Init, MgfaError, ProjectionMode};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  1  runtime failure (unreadable input, numerical breakdown, I/O error)
  2  usage error (bad flags or values, detected before any fitting)
  3  fit stopped at the iteration limit without converging

Environment:
  MGFA_WORKERS  number of worker threads for experiments (default: all cores)

Any flag may also be given in a file passed with --config FILE, one
`name = value` per line (`#` starts a comment). Flags on the command line
override the file.";

#[derive(Parser, Debug)]
#[command(
    name = "mgfa",
    version,
    about = "Mixtures of factor analyzers with bounded covariance eigenvalues"
)]
#[command(after_long_help = EXIT_CODES_HELP, after_help = EXIT_CODES_HELP, args_override_self = true)]
struct Cli {
    /// Worker threads for experiment restarts.
    #[arg(long, global = true, env = "MGFA_WORKERS")]
    workers: Option<usize>,

    /// Read additional flags from FILE.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model to a CSV dataset.
    Fit(FitArgs),
    /// Run repeated random-start fits under several eigenvalue bounds.
    Experiment(ExperimentArgs),
    /// Print the relative reduction in covariance parameters, RR(d, q).
    RrTable(RrArgs),
    /// Draw a labelled sample from a builtin or user-specified mixture.
    Sample(SampleArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum InitKind {
    Random,
    Labels,
    File,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Projection {
    Literal,
    Strict,
}

impl From<Projection> for ProjectionMode {
    fn from(p: Projection) -> Self {
        match p {
            Projection::Literal => ProjectionMode::Literal,
            Projection::Strict => ProjectionMode::Strict,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Centering {
    Component,
    Grand,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Aitken stopping threshold.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Maximum outer AECM iterations.
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// How bounds are enforced after each update.
    #[arg(long, value_enum, default_value_t = Projection::Literal)]
    projection: Projection,
}

impl SolverArgs {
    fn fit_config(&self, seed: u64, bounds: Option<EigenBounds>) -> FitConfig {
        FitConfig {
            aitken_epsilon: self.epsilon,
            max_outer_iterations: self.max_iter,
            projection: self.projection.into(),
            rng_seed: seed,
            ..FitConfig::default()
        }
        .with_bounds(bounds)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.epsilon > 0.0) {
            return Err(CliError::usage("--epsilon must be positive"));
        }
        if self.max_iter == 0 {
            return Err(CliError::usage("--max-iter must be at least 1"));
        }
        Ok(())
    }

    fn echo(&self, out: &mut String) {
        let projection = match self.projection {
            Projection::Literal => "literal",
            Projection::Strict => "strict",
        };
        let _ = write!(
            out,
            " --epsilon {} --max-iter {} --projection {projection}",
            self.epsilon, self.max_iter
        );
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Column holding known class labels (excluded from the features).
    #[arg(long)]
    labels_col: Option<String>,
    /// Number of mixture components G.
    #[arg(long, short = 'G')]
    components: usize,
    /// Number of factors q (must be below the data dimension).
    #[arg(long, short = 'q')]
    factors: usize,
    /// Lower eigenvalue bound a. Defaults to 0.01 when --upper is given.
    #[arg(long)]
    lower: Option<f64>,
    /// Upper eigenvalue bound b (`inf` for none).
    #[arg(long)]
    upper: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Starting point: a random partition, the label column, or a model file.
    #[arg(long, value_enum, default_value_t = InitKind::Random)]
    init: InitKind,
    /// Model file used by `--init file`.
    #[arg(long)]
    init_model: Option<PathBuf>,
    /// Standardize every feature to mean 0 and unit variance before fitting.
    #[arg(long)]
    scale: bool,
    /// Where to write the fitted model.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of per-observation assigned component and responsibilities.
    #[arg(long)]
    assignments_out: Option<PathBuf>,
    /// CSV of posterior factor scores.
    #[arg(long)]
    scores_out: Option<PathBuf>,
    /// Center factor scores at the assigned component mean or the grand mean.
    #[arg(long, value_enum, default_value_t = Centering::Component)]
    score_centering: Centering,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Builtin mixture to sample the experiment dataset from.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    mixture: Option<u32>,
    /// Labelled CSV dataset to use instead of a builtin mixture.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column of --data.
    #[arg(long, default_value = "label")]
    labels_col: String,
    /// Number of components (defaults to the mixture's or the number of classes).
    #[arg(long, short = 'G')]
    components: Option<usize>,
    /// Number of factors (defaults to the mixture's, or 1).
    #[arg(long, short = 'q')]
    factors: Option<usize>,
    /// Comma-separated bounds columns, e.g. "0.01:6,0.01:10,unbounded".
    #[arg(long, default_value = "0.01:6,unbounded")]
    bounds_list: String,
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standardize --data before fitting.
    #[arg(long)]
    scale: bool,
    /// Directory for summary.csv, per-setting run CSVs and the dataset.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct RrArgs {
    #[arg(long, default_value_t = 15)]
    dmax: usize,
    #[arg(long, default_value_t = 5)]
    qmax: usize,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Builtin mixture id (1, 2 or 3).
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    mixture: Option<u32>,
    /// Mixture specification file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Sample size (defaults to the mixture's).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<MgfaError> for CliError {
    fn from(e: MgfaError) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        MgfaError::from(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let args = match expand_config_file(std::env::args_os().collect()) {
        Ok(args) => args,
        Err(e) => return report(e),
    };
    let cli = Cli::parse_from(args);
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return report(CliError::usage(
                "MGFA_WORKERS / --workers must be at least 1",
            ));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            return report(CliError {
                code: EXIT_FAILURE,
                message: e.to_string(),
            });
        }
    }
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::RrTable(a) => cmd_rr_table(&a),
        Command::Sample(a) => cmd_sample(&a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    let kind = if e.code == EXIT_USAGE {
        "usage error"
    } else {
        "error"
    };
    eprintln!("mgfa: {kind}: {}", e.message);
    ExitCode::from(e.code)
}

/// Splices `name = value` lines from `--config FILE` in right after the
/// subcommand, so explicit flags that follow take precedence.
fn expand_config_file(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            path = Some(
                iter.next()
                    .ok_or_else(|| CliError::usage("--config needs a file"))?,
            );
        } else if let Some(p) = text.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let content = std::fs::read_to_string(&path).map_err(|e| {
        CliError::usage(format!(
            "cannot read config {}: {e}",
            Path::new(&path).display()
        ))
    })?;
    let mut extra = Vec::new();
    for (k, line) in content.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once('=')
            .map(|(n, v)| (n.trim(), v.trim()))
            .ok_or_else(|| {
                CliError::usage(format!("config line {}: expected `name = value`", k + 1))
            })?;
        let name = name.trim_start_matches("--");
        match value {
            "true" => extra.push(OsString::from(format!("--{name}"))),
            "false" => {}
            _ => extra.push(OsString::from(format!("--{name}={value}"))),
        }
    }
    let subcommand_at = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(rest.len(), |p| p + 2);
    let tail = rest.split_off(subcommand_at.min(rest.len()));
    rest.extend(extra);
    rest.extend(tail);
    Ok(rest)
}

fn resolve_bounds(lower: Option<f64>, upper: Option<f64>) -> CliResult<Option<EigenBounds>> {
    let bounds = match (lower, upper) {
        (None, None) => return Ok(None),
        (lower, Some(b)) => {
            let a = lower.unwrap_or(0.01);
            if a > b {
                return Err(CliError::usage(format!("--lower {a} exceeds --upper {b}")));
            }
            if b.is_infinite() {
                EigenBounds::lower_only(a)
            } else {
                EigenBounds::new(a, b)
            }
        }
        (Some(a), None) => EigenBounds::lower_only(a),
    };
    bounds.map(Some).map_err(|e| CliError::usage(e.to_string()))
}

fn bounds_text(bounds: &Option<EigenBounds>) -> String {
    match bounds {
        None => String::new(),
        Some(b) => format!(" --lower {} --upper {}", b.lower(), b.upper_or_inf()),
    }
}

fn write_output(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> mgfa::Result<()>,
) -> CliResult<()> {
    write_atomically(path, body).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("writing {}: {e}", path.display()),
    })
}

fn load_data(path: &Path, labels_col: Option<&str>) -> CliResult<mgfa::Dataset> {
    load_csv(path, labels_col).map_err(|e| CliError {
        code: EXIT_FAILURE,
        message: format!("reading {}: {e}", path.display()),
    })
}

fn cmd_fit(args: &FitArgs) -> CliResult<u8> {
    if args.components == 0 {
        return Err(CliError::usage("--components must be at least 1"));
    }
    if args.factors == 0 {
        return Err(CliError::usage("--factors must be at least 1"));
    }
    let bounds = resolve_bounds(args.lower, args.upper)?;
    args.solver.validate()?;
    if args.init == InitKind::Labels && args.labels_col.is_none() {
        return Err(CliError::usage("--init labels requires --labels-col"));
    }
    if args.init == InitKind::File && args.init_model.is_none() {
        return Err(CliError::usage("--init file requires --init-model"));
    }

    let mut data = load_data(&args.data, args.labels_col.as_deref())?;
    if args.factors >= data.d() {
        return Err(CliError::usage(format!(
            "--factors {} must be below the data dimension {}",
            args.factors,
            data.d()
        )));
    }
    if args.scale {
        data = standardize(&data)?.0;
    }
    let init = match args.init {
        InitKind::Random => Init::Random,
        InitKind::Labels => {
            let labels = data.labels().expect("labels were loaded").to_vec();
            if data.num_classes() != Some(args.components) {
                return Err(CliError::usage(format!(
                    "--init labels: the label column has {} classes but --components is {}",
                    data.num_classes().unwrap_or(0),
                    args.components
                )));
            }
            Init::Labels(labels)
        }
        InitKind::File => {
            let path = args.init_model.as_ref().expect("checked above");
            let model = load_model(path)?;
            let p = &model.params;
            if p.num_components() != args.components
                || p.factors() != args.factors
                || p.dim() != data.d()
            {
                return Err(CliError::usage(format!(
                    "{} has G={}, q={}, d={}, which does not match the requested fit",
                    path.display(),
                    p.num_components(),
                    p.factors(),
                    p.dim()
                )));
            }
            Init::Params(model.params)
        }
    };

    let mut effective = format!(
        "effective config: fit --data {} --components {} --factors {}{} --seed {} --init {}",
        args.data.display(),
        args.components,
        args.factors,
        bounds_text(&bounds),
        args.seed,
        match args.init {
            InitKind::Random => "random",
            InitKind::Labels => "labels",
            InitKind::File => "file",
        }
    );
    if let Some(col) = &args.labels_col {
        let _ = write!(effective, " --labels-col {col}");
    }
    if let Some(p) = &args.init_model {
        let _ = write!(effective, " --init-model {}", p.display());
    }
    if args.scale {
        effective.push_str(" --scale");
    }
    let centering = match args.score_centering {
        Centering::Component => ScoreCentering::ComponentMean,
        Centering::Grand => ScoreCentering::GrandMean,
    };
    let _ = write!(
        effective,
        " --score-centering {}",
        if centering == ScoreCentering::GrandMean {
            "grand"
        } else {
            "component"
        }
    );
    args.solver.echo(&mut effective);
    println!("{effective}");

    let config = args.solver.fit_config(args.seed, bounds);
    let result = fit(&data, args.components, args.factors, init, &config)?;

    println!("log-likelihood: {:.6}", result.log_likelihood());
    println!("iterations: {}", result.outer_iterations);
    println!("converged: {}", result.converged);
    if let Some(truth) = data.labels() {
        let err = misclassification_error(&result.hard_labels, truth)?;
        println!("misclassification error: {:.4}", err);
    }

    if let Some(path) = &args.out {
        let model = ModelFile {
            params: result.params.clone(),
            bounds,
            loglik: Some(result.log_likelihood()),
            iterations: Some(result.outer_iterations),
            converged: Some(result.converged),
        };
        write_output(path, |w| write_model(&model, w))?;
    }
    if let Some(path) = &args.assignments_out {
        write_output(path, |w| {
            let resp = result.responsibilities.matrix();
            let mut header = String::from("component");
            for g in 1..=resp.ncols() {
                let _ = write!(header, ",resp_{g}");
            }
            writeln!(w, "{header}")?;
            for (i, &label) in result.hard_labels.iter().enumerate() {
                let mut line = (label + 1).to_string();
                for g in 0..resp.ncols() {
                    let _ = write!(line, ",{}", resp[(i, g)]);
                }
                writeln!(w, "{line}")?;
            }
            Ok(())
        })?;
    }
    if let Some(path) = &args.scores_out {
        let scores = match centering {
            ScoreCentering::ComponentMean => result.factor_scores.clone(),
            ScoreCentering::GrandMean => factor_scores(&result.params, &data, centering)?,
        };
        write_output(path, |w| {
            let header: Vec<String> = (1..=scores.ncols())
                .map(|k| format!("factor_{k}"))
                .collect();
            writeln!(w, "{}", header.join(","))?;
            for row in scores.row_iter() {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            Ok(())
        })?;
    }
    Ok(if result.converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn builtin(id: u32) -> CliResult<MixtureSpec> {
    builtin_mixture(id)
        .map_err(|_| CliError::usage(format!("unknown mixture {id}; choose 1, 2 or 3")))
}

fn cmd_experiment(args: &ExperimentArgs) -> CliResult<u8> {
    if args.restarts == 0 {
        return Err(CliError::usage("--restarts must be at least 1"));
    }
    let settings =
        BoundsSetting::parse_list(&args.bounds_list).map_err(|e| CliError::usage(e.to_string()))?;
    args.solver.validate()?;
    if args.components == Some(0) || args.factors == Some(0) {
        return Err(CliError::usage(
            "--components and --factors must be at least 1",
        ));
    }

    let (data, source, g, q) = match (args.mixture, &args.data) {
        (Some(id), _) => {
            let spec = builtin(id)?;
            let g = args.components.unwrap_or(spec.num_components());
            let q = args.factors.or(spec.factors()).unwrap_or(1);
            (
                experiment_dataset(&spec, args.seed)?,
                format!("--mixture {id}"),
                g,
                q,
            )
        }
        (None, Some(path)) => {
            let mut data = load_data(path, Some(&args.labels_col))?;
            if args.scale {
                data = standardize(&data)?.0;
            }
            let g = args.components.or(data.num_classes()).unwrap_or(1);
            let q = args.factors.unwrap_or(1);
            let mut source = format!("--data {} --labels-col {}", path.display(), args.labels_col);
            if args.scale {
                source.push_str(" --scale");
            }
            (data, source, g, q)
        }
        (None, None) => return Err(CliError::usage("one of --mixture or --data is required")),
    };
    if q >= data.d() {
        return Err(CliError::usage(format!(
            "--factors {q} must be below the data dimension {}",
            data.d()
        )));
    }
    if data.num_classes() != Some(g) {
        return Err(CliError::usage(format!(
            "--components {g} must equal the number of classes in the labels ({})",
            data.num_classes().unwrap_or(0)
        )));
    }

    let mut effective = format!(
        "effective config: experiment {source} --components {g} --factors {q} --bounds-list {} --restarts {} --seed {}",
        settings.iter().map(|s| s.label.as_str()).collect::<Vec<_>>().join(","),
        args.restarts,
        args.seed
    );
    args.solver.echo(&mut effective);
    println!("{effective}");

    let config = ExperimentConfig {
        restarts: args.restarts,
        seed: args.seed,
        fit: args.solver.fit_config(args.seed, None),
        ..ExperimentConfig::default()
    };
    let reports = run_experiment(&data, g, q, &settings, &config)?;
    print!("{}", format_summary_table(&reports));

    if let Some(dir) = &args.report_dir {
        std::fs::create_dir_all(dir)?;
        write_output(&dir.join("summary.csv"), |w| write_summary_csv(&reports, w))?;
        write_output(&dir.join("dataset.csv"), |w| write_csv(&data, w))?;
        for report in &reports {
            let name = format!("runs_{}.csv", file_safe(&report.setting.label));
            write_output(&dir.join(name), |w| {
                write_runs_csv(std::slice::from_ref(report), w)
            })?;
        }
        println!("reports written to {}", dir.display());
    }
    Ok(0)
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_rr_table(args: &RrArgs) -> CliResult<u8> {
    if args.dmax == 0 || args.qmax == 0 {
        return Err(CliError::usage("--dmax and --qmax must be at least 1"));
    }
    println!(
        "effective config: rr-table --dmax {} --qmax {}",
        args.dmax, args.qmax
    );
    print!("{}", relative_reduction_table(args.dmax, args.qmax));
    Ok(0)
}

fn cmd_sample(args: &SampleArgs) -> CliResult<u8> {
    if args.n == Some(0) {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let (spec, source) = match (args.mixture, &args.spec) {
        (Some(id), _) => (builtin(id)?, format!("--mixture {id}")),
        (None, Some(path)) => (
            load_mixture_spec(path)?,
            format!("--spec {}", path.display()),
        ),
        (None, None) => return Err(CliError::usage("one of --mixture or --spec is required")),
    };
    let n = args.n.unwrap_or(spec.sample_size);
    let data = sample_n(&spec, n, args.seed)?;
    // Keep stdout clean for the CSV when no output file is given.
    let effective = format!(
        "effective config: sample {source} --n {n} --seed {}",
        args.seed
    );
    match &args.out {
        Some(path) => {
            println!("{effective}");
            write_output(path, |w| write_csv(&data, w))?;
        }
        None => {
            eprintln!("{effective}");
            write_csv(&data, std::io::stdout().lock())?;
        }
    }
    Ok(0)
}
