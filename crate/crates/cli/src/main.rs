//! `einad`: optimize, differentiate, evaluate and render einsum graphs, and
//! run the tensor-method benchmarks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use einad_core::driver::{self, DeriveMode};
use einad_core::graph::dot::{to_dot, to_dot_roots};
use einad_core::graph::serialize::{from_json, to_json};
use einad_core::methods::{run_bench, InputKind, Method, ProblemConfig};
use einad_core::optimizer::{optimize, PassReport, PASS_NAMES};
use einad_core::{DenseTensor, Error, FeedDict, Graph};

#[derive(Parser)]
#[command(
    name = "einad",
    version,
    about = "Einsum graph differentiation and optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization pipeline over every output of a graph.
    Optimize {
        graph: PathBuf,
        /// Where to write the optimized graph (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the pass report (stderr if absent).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        dump: DumpArgs,
    },
    /// Build a derivative graph of one output.
    Derive {
        graph: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Output to differentiate; may be omitted when the graph has one.
        #[arg(long)]
        of: Option<String>,
        /// Variables to differentiate with respect to (default: all).
        #[arg(long, value_delimiter = ',')]
        wrt: Vec<String>,
        /// Optimize the derivative graph before writing it.
        #[arg(long)]
        optimize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        dump: DumpArgs,
    },
    /// Evaluate outputs of a graph.
    Run {
        graph: PathBuf,
        /// `NAME=VALUE`, where VALUE is a number, a JSON array literal, a
        /// `.bin` tensor file or a text tensor file.
        #[arg(long = "feed", value_name = "NAME=VALUE")]
        feeds: Vec<String>,
        /// Fill variables without a feed with uniform(-1, 1) entries.
        #[arg(long)]
        seed: Option<u64>,
        /// Outputs to evaluate (default: all).
        #[arg(long = "output", value_delimiter = ',')]
        outputs: Vec<String>,
        /// Directory for one `NAME.txt` per output (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the flops of the executed contraction plans.
        #[arg(long)]
        count_flops: bool,
        /// Optimize the graph before evaluating it.
        #[arg(long)]
        optimize: bool,
    },
    /// Run a tensor-method benchmark.
    Bench(BenchArgs),
    /// Render a graph in Graphviz DOT.
    Dot {
        graph: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DumpArgs {
    /// Write a DOT file after every run of this pass (or `all`).
    #[arg(long, value_name = "PASS")]
    dump_after: Option<String>,
    #[arg(long, default_value = ".")]
    dump_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Grad,
    Jacobian,
    Hessian,
    Hvp,
    Jvp,
    Vjp,
}

impl From<Mode> for DeriveMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Grad => DeriveMode::Grad,
            Mode::Jacobian => DeriveMode::Jacobian,
            Mode::Hessian => DeriveMode::Hessian,
            Mode::Hvp => DeriveMode::Hvp,
            Mode::Jvp => DeriveMode::Jvp,
            Mode::Vjp => DeriveMode::Vjp,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMethod {
    CpdAls,
    CpdGn,
    Tucker,
    Dmrg,
}

impl From<BenchMethod> for Method {
    fn from(m: BenchMethod) -> Self {
        match m {
            BenchMethod::CpdAls => Method::CpdAls,
            BenchMethod::CpdGn => Method::CpdGn,
            BenchMethod::Tucker => Method::Tucker,
            BenchMethod::Dmrg => Method::Dmrg,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Input {
    Random,
    Exact,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    method: BenchMethod,
    /// JSON problem file; flags given alongside override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tensor order, or number of sites for DMRG.
    #[arg(long, visible_alias = "sites")]
    order: Option<usize>,
    /// Extent of every mode, or physical dimension for DMRG.
    #[arg(long, visible_alias = "phys", conflicts_with = "sizes")]
    size: Option<usize>,
    /// Per-mode extents, e.g. `4,5,6`.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// CP rank, MPO bond dimension for DMRG, or Tucker ranks (one per mode
    /// or one for all).
    #[arg(long, value_delimiter = ',')]
    rank: Vec<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    input: Option<Input>,
    /// Relative perturbation of the initial factors for exact inputs.
    #[arg(long)]
    perturbation: Option<f64>,
    /// Cap on the MPS bond dimension for DMRG.
    #[arg(long)]
    mps_rank: Option<usize>,
    /// Print the JSON report instead of the text summary.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Precondition(_) => 1,
            Error::Numerical(_) | Error::Singular(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        code: 2,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure {
        code: 2,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn load_graph(path: &Path) -> Result<Graph, Failure> {
    Ok(from_json(&read(path)?)?)
}

/// Writes `text` to `path`, or stdout.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_pass(dump: &DumpArgs) -> Result<(), Failure> {
    match &dump.dump_after {
        Some(p) if p != "all" && !PASS_NAMES.contains(&p.as_str()) => Err(usage(format!(
            "unknown pass `{p}`, expected all or one of: {}",
            PASS_NAMES.join(", ")
        ))),
        _ => Ok(()),
    }
}

fn dump_snapshots(g: &Graph, report: &PassReport, dump: &DumpArgs) -> Result<(), Failure> {
    let Some(pass) = &dump.dump_after else {
        return Ok(());
    };
    for (k, (name, roots)) in report.snapshots.iter().enumerate() {
        if pass == "all" || pass == name {
            let path = dump.dump_dir.join(format!("{k:03}-{name}.dot"));
            write(&path, &to_dot_roots(g, roots))?;
        }
    }
    Ok(())
}

fn optimize_and_dump(g: &mut Graph, dump: &DumpArgs) -> Result<PassReport, Failure> {
    check_pass(dump)?;
    let report = optimize(g)?;
    dump_snapshots(g, &report, dump)?;
    Ok(report)
}

fn parse_feed(spec: &str) -> Result<(String, DenseTensor), Failure> {
    let (name, value) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("feed `{spec}` is not NAME=VALUE")))?;
    let value = value.trim();
    let t = if let Ok(x) = value.parse::<f64>() {
        DenseTensor::scalar(x)
    } else if value.starts_with('[') {
        let v: serde_json::Value = serde_json::from_str(value).map_err(|e| Failure {
            code: 2,
            message: format!("feed `{name}`: {e}"),
        })?;
        DenseTensor::from_json_value(&v)?
    } else if value.ends_with(".bin") {
        let file = fs::File::open(value).map_err(|e| Failure {
            code: 2,
            message: format!("cannot read {value}: {e}"),
        })?;
        DenseTensor::read_binary(std::io::BufReader::new(file))?
    } else {
        DenseTensor::from_text(&read(Path::new(value))?)?
    };
    Ok((name.to_string(), t))
}

fn bench_config(a: &BenchArgs) -> Result<ProblemConfig, Failure> {
    let method = Method::from(a.method);
    let mut c = match &a.config {
        Some(path) => {
            let c = ProblemConfig::from_json(&read(path)?)?;
            if c.method != method {
                return Err(usage(format!(
                    "config is for {}, not {}",
                    c.method.as_str(),
                    method.as_str()
                )));
            }
            c
        }
        None => {
            if a.size.is_none() && a.sizes.is_empty() {
                return Err(usage("bench needs --size, --sizes or --config"));
            }
            if a.rank.is_empty() {
                return Err(usage("bench needs --rank or --config"));
            }
            ProblemConfig::new(method, Vec::new(), Vec::new())
        }
    };
    if !a.sizes.is_empty() {
        c.extents = a.sizes.clone();
    } else if let Some(s) = a.size {
        let order = a.order.unwrap_or(if c.extents.is_empty() {
            3
        } else {
            c.extents.len()
        });
        c.extents = vec![s; order];
    } else if let Some(order) = a.order {
        let s = *c
            .extents
            .first()
            .ok_or_else(|| usage("--order needs --size"))?;
        c.extents = vec![s; order];
    }
    if !a.rank.is_empty() {
        c.ranks = a.rank.clone();
    }
    if let Some(n) = a.iters {
        c.iterations = n;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(t) = a.tol {
        c.tolerance = t;
    }
    if let Some(i) = a.input {
        c.input = match i {
            Input::Random => InputKind::Random,
            Input::Exact => InputKind::Exact,
        };
    }
    if let Some(p) = a.perturbation {
        c.perturbation = p;
    }
    if a.mps_rank.is_some() {
        c.mps_rank = a.mps_rank;
    }
    Ok(c)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Optimize {
            graph,
            out,
            report,
            dump,
        } => {
            let mut g = load_graph(&graph)?;
            let r = optimize_and_dump(&mut g, &dump)?;
            emit(out.as_deref(), &to_json(&g))?;
            match report {
                Some(p) => write(&p, &r.to_text())?,
                None => eprint!("{}", r.to_text()),
            }
        }
        Command::Derive {
            graph,
            mode,
            of,
            wrt,
            optimize,
            out,
            dump,
        } => {
            let g = load_graph(&graph)?;
            let mut d = driver::derive(&g, mode.into(), of.as_deref(), &wrt)?;
            if optimize {
                let r = optimize_and_dump(&mut d, &dump)?;
                eprint!("{}", r.to_text());
            } else if dump.dump_after.is_some() {
                return Err(usage("--dump-after needs --optimize"));
            }
            emit(out.as_deref(), &to_json(&d))?;
        }
        Command::Run {
            graph,
            feeds,
            seed,
            outputs,
            out,
            count_flops,
            optimize: opt,
        } => {
            let mut g = load_graph(&graph)?;
            if opt {
                optimize(&mut g)?;
            }
            let mut feed = FeedDict::new();
            for f in &feeds {
                let (name, t) = parse_feed(f)?;
                feed.insert(name, t);
            }
            if let Some(s) = seed {
                feed = driver::random_feed(&g, s, &feed);
            }
            let (values, flops) = driver::evaluate(&g, &feed, &outputs)?;
            let mut text = String::new();
            for (name, t) in &values {
                match &out {
                    Some(dir) => write(&dir.join(format!("{name}.txt")), &t.to_text())?,
                    None => text += &format!("# {name}\n{}", t.to_text()),
                }
            }
            if count_flops {
                text += &format!("flops {flops}\n");
            }
            print!("{text}");
        }
        Command::Bench(args) => {
            let config = bench_config(&args)?;
            let report = run_bench(&config)?;
            let text = if args.json {
                serde_json::to_string_pretty(&report).expect("reports serialize") + "\n"
            } else {
                report.to_text()
            };
            emit(args.out.as_deref(), &text)?;
        }
        Command::Dot { graph, out } => {
            let g = load_graph(&graph)?;
            emit(out.as_deref(), &to_dot(&g))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
