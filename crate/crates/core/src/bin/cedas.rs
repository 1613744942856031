use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cedas::algo::{run_repetitions, AlgoError, Algorithm, RunConfig};
use cedas::config::{ConfigError, RunFile, TopologySource};
use cedas::figures::{run_figure, Figure, FigureError, FigureOptions};
use cedas::metrics::{transient_time, Trace, TransientOptions};
use cedas::output::{write_plot, write_trace, DEFAULT_OUT, OUT_ENV};
use cedas::plot::{Plot, XAxis};
use cedas::topology::{DegreeCount, Graph, GraphKind, MixingMatrix, TopologyFile};
use cedas::verify::{run_checks, Level, VerifyOptions};

const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_VERIFY: u8 = 4;

/// Decentralized SGD with compressed communication.
#[derive(Parser)]
#[command(name = "cedas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Run file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = DEFAULT_OUT)]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key=value` override, may be repeated. Dotted keys reach nested fields.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by --config.
    Run,
    /// Built-in checks of spectra, compressors and algorithm identities.
    Verify {
        #[arg(default_value = "quick")]
        level: Level,
        /// JSON file with a weight matrix (array of rows) to check as well.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Preset sweeps: fig2, fig3 or fig4.
    Figures {
        which: Figure,
        /// Number of agents.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Print the spectrum of a topology.
    Inspect {
        #[arg(long, conflicts_with = "config")]
        topology: Option<GraphKind>,
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long, value_parser = parse_degree)]
        degree: Option<DegreeCount>,
        /// Also print the spectrum of I − (γ/2)(I − W).
        #[arg(long)]
        gamma: Option<f64>,
    },
}

fn parse_degree(s: &str) -> Result<DegreeCount, String> {
    match s {
        "open" => Ok(DegreeCount::Open),
        "closed" => Ok(DegreeCount::Closed),
        _ => Err(format!("expected open or closed, got `{s}`")),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Algo(a) => a.into(),
            e => Failure::usage(e.to_string()),
        }
    }
}

impl From<AlgoError> for Failure {
    fn from(e: AlgoError) -> Self {
        let code = if matches!(e, AlgoError::DivergenceDetected { .. }) { EXIT_DIVERGED } else { EXIT_USAGE };
        Failure { code, message: e.to_string() }
    }
}

impl From<FigureError> for Failure {
    fn from(e: FigureError) -> Self {
        match e {
            FigureError::Run { member, source } => {
                let f: Failure = source.into();
                Failure { code: f.code, message: format!("{member}: {}", f.message) }
            }
            e => Failure::usage(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::usage(format!("cannot write {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.common.clone();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(common.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Run => cmd_run(&common),
        Command::Verify { level, weights } => cmd_verify(level, weights.as_deref()),
        Command::Figures { which, n, iters } => cmd_figures(&common, which, n, iters),
        Command::Inspect { topology, n, degree, gamma } => cmd_inspect(&common, topology, n, degree, gamma),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_run_file(common: &Common) -> Result<RunFile, Failure> {
    let path = common.config.as_ref().ok_or_else(|| Failure::usage("run needs --config <file>"))?;
    let mut file = RunFile::load(path, &common.overrides)?;
    if let Some(seed) = common.seed {
        file.seed = seed;
    }
    if let Some(reps) = common.reps {
        file.reps = reps;
    }
    Ok(file)
}

fn final_metric(t: &Trace) -> String {
    match t.last() {
        Some(r) => match (r.residual, r.grad_norm_sq) {
            (Some(res), _) => format!("residual {res:.4e}"),
            (None, Some(g)) => format!("grad_norm_sq {g:.4e}"),
            _ => format!("consensus {:.4e}", r.consensus_err),
        },
        None => "empty".into(),
    }
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let file = load_run_file(common)?;
    let algorithms = file.algorithms();
    let single = algorithms.len() == 1;
    let mut results: Vec<(Algorithm, RunConfig, Trace)> = Vec::new();
    for alg in algorithms {
        let mut f = file.clone();
        f.algorithm = alg;
        f.sweep.clear();
        let cfg = f.resolve()?;
        let out = run_repetitions(&cfg).map_err(|e| {
            let f: Failure = e.into();
            Failure { code: f.code, message: format!("{alg}: {}", f.message) }
        })?;
        let stem = if single { file.name.clone() } else { format!("{}_{alg}", file.name) };
        let path = write_trace(&common.out, &stem, &out.mean).map_err(|e| io_failure(&common.out, e))?;
        println!("wrote {}", path.display());
        if cfg.repetitions > 1 {
            let path = write_trace(&common.out, &format!("{stem}_sd"), &out.sd).map_err(|e| io_failure(&common.out, e))?;
            println!("wrote {}", path.display());
        }
        results.push((alg, cfg, out.mean));
    }

    let centralized = match results.iter().find(|(a, ..)| *a == Algorithm::Centralized) {
        Some((_, _, t)) => Some(t.clone()),
        None => {
            let (_, cfg, _) = &results[0];
            let mut cen = cfg.clone();
            cen.algorithm = Algorithm::Centralized;
            run_repetitions(&cen).ok().map(|o| o.mean)
        }
    };
    for (alg, _, trace) in &results {
        let bits = trace.last().map_or(0.0, |r| r.bits_cum);
        let transient = match (&centralized, *alg) {
            (_, Algorithm::Centralized) | (None, _) => "-".to_string(),
            (Some(c), _) => transient_time(trace, c, TransientOptions::default())
                .map(|t| t.to_string())
                .unwrap_or_else(|e| e.to_string()),
        };
        println!("{alg:<12} final {}  transient {transient}  bits/agent {bits:.4e}", final_metric(trace));
    }

    if file.plot {
        let series: Vec<(&str, &Trace)> = results.iter().map(|(a, _, t)| (a.name(), t)).collect();
        for (axis, suffix) in [(XAxis::Iteration, ""), (XAxis::Bits, "_bits")] {
            let plot = Plot::from_traces(file.name.as_str(), series.iter().copied(), axis);
            let path =
                write_plot(&common.out, &format!("{}{suffix}", file.name), &plot).map_err(|e| io_failure(&common.out, e))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_verify(level: Level, weights: Option<&Path>) -> Result<(), Failure> {
    let mut opts = VerifyOptions::default();
    if let Some(path) = weights {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
        let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("{}: expected an array of rows: {e}", path.display())))?;
        opts.weights = Some(rows);
    }
    let report = run_checks(level, &opts);
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure { code: EXIT_VERIFY, message: format!("{} verification checks failed", report.failures()) })
    }
}

fn cmd_figures(common: &Common, which: Figure, n: Option<usize>, iters: Option<usize>) -> Result<(), Failure> {
    let mut opts = FigureOptions::default().with_overrides(&common.overrides)?;
    if let Some(n) = n {
        opts.n = n;
    }
    if let Some(k) = iters {
        opts.iters = k;
    }
    if let Some(seed) = common.seed {
        opts.seed = seed;
    }
    if let Some(reps) = common.reps {
        opts.reps = reps;
    }
    let out = run_figure(which, &opts)?;
    for (name, trace) in &out.series {
        let path = write_trace(&common.out, &format!("{which}_{name}"), trace).map_err(|e| io_failure(&common.out, e))?;
        println!("{name:<24} final {}  -> {}", final_metric(trace), path.display());
    }
    let path = write_plot(&common.out, which.name(), &out.plot()).map_err(|e| io_failure(&common.out, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_inspect(
    common: &Common,
    topology: Option<GraphKind>,
    n: usize,
    degree: Option<DegreeCount>,
    gamma: Option<f64>,
) -> Result<(), Failure> {
    let (graph, w) = match (&common.config, topology) {
        (Some(_), _) => {
            let file = load_run_file(common)?;
            let agents = file.problem()?.n();
            let graph = match &file.topology {
                TopologySource::File { path } => TopologyFile::load(path).and_then(|f| f.graph()).map_err(ConfigError::from)?,
                TopologySource::Generated { kind, n, .. } => {
                    Graph::build(*kind, n.unwrap_or(agents)).map_err(ConfigError::from)?
                }
            };
            (graph, file.mixing(agents)?)
        }
        (None, Some(kind)) => {
            let graph = Graph::build(kind, n).map_err(|e| Failure::usage(e.to_string()))?;
            let degree = degree.unwrap_or(if kind == GraphKind::Exponential { DegreeCount::Closed } else { DegreeCount::Open });
            let w = MixingMatrix::lazy_metropolis_with(&graph, degree);
            (graph, w)
        }
        (None, None) => return Err(Failure::usage("inspect needs --topology <kind> or --config <file>")),
    };
    let degrees: Vec<usize> = (0..graph.n()).map(|i| graph.degree(i)).collect();
    println!("topology     {}", graph.kind());
    println!("nodes        {}", graph.n());
    println!("edges        {}", graph.edges().len());
    println!("degree       {}..{}", degrees.iter().min().unwrap_or(&0), degrees.iter().max().unwrap_or(&0));
    println!("lambda_2     {:.6}", w.lambda2());
    println!("gap 1-l2     {:.6}", w.spectral_gap());
    println!("eigenvalues  {}", fmt_list(w.eigenvalues()));
    if let Some(g) = gamma {
        let tilde = w.tilde(g).map_err(|e| Failure::usage(e.to_string()))?;
        println!("tilde(γ={g}) {}", fmt_list(tilde.eigenvalues()));
    }
    Ok(())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}
