//! `gstree`: build, query, inspect and benchmark suffix-tree indexes.
//!
//! Results go to standard output; progress and diagnostics go to standard
//! error. Exit status: 0 success, 1 usage error, 2 data error, 3 I/O error.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gstree::harness::linear_fit;
use gstree::{
    build_index, build_index_from_sequence, ingest_paths, BuildConfig, Error, ErrorKind, Index,
    Query,
};

const SPILL_ENV: &str = "GSTREE_TMPDIR";

#[derive(Parser)]
#[command(name = "gstree", version, about = "Disk-backed suffix-tree index for DNA sequences")]
struct Cli {
    /// Only print warnings and errors on standard error.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from FASTA files.
    Build(BuildArgs),
    /// Print every position where a pattern occurs.
    Query(QueryArgs),
    /// Print per-partition sizes and the realized expansion factor.
    Stats(IndexArgs),
    /// Check chunk checksums and tree invariants.
    Verify(VerifyArgs),
    /// Time builds over prefixes of an input at several sizes and worker counts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct BuildParams {
    /// Total memory for the packed sequence and resident trees, in bytes
    /// (K, M, G suffixes are powers of 1024).
    #[arg(long, default_value = "1G", value_parser = parse_bytes)]
    memory: u64,

    /// Number of concurrent partition builds.
    #[arg(long, default_value_t = 1)]
    workers: usize,

    /// Prefix length; raised to the minimum the memory budget requires.
    #[arg(long = "prefix-len")]
    prefix_len: Option<u32>,

    /// Tree bytes per base; estimated by sampling when omitted.
    #[arg(long = "f")]
    f: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,

    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    params: BuildParams,

    /// Keep the per-partition suffix position files.
    #[arg(long = "keep-spills")]
    keep_spills: bool,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    index: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,

    #[arg(long, conflicts_with = "patterns_file", required_unless_present = "patterns_file")]
    pattern: Option<String>,

    /// One pattern per line; blank lines and lines starting with '#' are skipped.
    #[arg(long = "patterns-file")]
    patterns_file: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    index: PathBuf,

    /// Spell out the path label of every Nth terminal.
    #[arg(long = "leaf-stride", default_value_t = 16)]
    leaf_stride: u32,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    input: PathBuf,

    /// Comma-separated base counts (k, M, G suffixes are powers of 1000).
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_bases)]
    sizes: Vec<u64>,

    /// Comma-separated worker counts.
    #[arg(long = "workers", value_delimiter = ',', default_value = "1")]
    worker_counts: Vec<usize>,

    #[arg(long, default_value = "1G", value_parser = parse_bytes)]
    memory: u64,

    #[arg(long = "prefix-len")]
    prefix_len: Option<u32>,

    #[arg(long = "f")]
    f: Option<f64>,
}

fn parse_scaled(text: &str, unit: u64) -> Result<u64, String> {
    let text = text.trim();
    let (digits, scale) = match text.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let power = match c.to_ascii_uppercase() {
                'K' => 1,
                'M' => 2,
                'G' => 3,
                'T' => 4,
                _ => return Err(format!("unknown suffix in {text:?}")),
            };
            (&text[..i], unit.pow(power))
        }
        _ => (text, 1),
    };
    let value: u64 = digits
        .parse()
        .map_err(|e| format!("{text:?} is not a size: {e}"))?;
    value
        .checked_mul(scale)
        .ok_or_else(|| format!("{text:?} is too large"))
}

fn parse_bytes(text: &str) -> Result<u64, String> {
    parse_scaled(text, 1024)
}

fn parse_bases(text: &str) -> Result<u64, String> {
    parse_scaled(text, 1000)
}

/// A failure plus the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Io => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 3,
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

type CmdResult = Result<(), Failure>;

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
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            log::LevelFilter::Warn
        } else {
            log::LevelFilter::Info
        })
        .parse_env("GSTREE_LOG")
        .format(|buf, record| writeln!(buf, "{}", record.args()))
        .init();

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = match cli.command {
        Command::Build(args) => cmd_build(args, &mut out),
        Command::Query(args) => cmd_query(args, &mut out),
        Command::Stats(args) => cmd_stats(args, &mut out),
        Command::Verify(args) => cmd_verify(args, &mut out),
        Command::Bench(args) => cmd_bench(args, &mut out),
    };
    let flushed = out.flush();
    match result.and(flushed.map_err(Failure::from)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn spill_root() -> Option<PathBuf> {
    std::env::var_os(SPILL_ENV).map(PathBuf::from)
}

fn config(params: &BuildParams, inputs: Vec<PathBuf>, out: &Path) -> BuildConfig {
    let mut cfg = BuildConfig::new(inputs, out);
    cfg.memory_budget_total = params.memory;
    cfg.workers = params.workers;
    cfg.prefix_len = params.prefix_len;
    cfg.expansion_factor = params.f;
    cfg
}

fn cmd_build(args: BuildArgs, out: &mut impl Write) -> CmdResult {
    let mut cfg = config(&args.params, args.inputs, &args.out);
    cfg.keep_spills = args.keep_spills;
    if let Some(root) = spill_root() {
        cfg.spill_dir = Some(root.join(format!("gstree-spill-{}", std::process::id())));
    }
    let report = build_index(&cfg)?;
    writeln!(
        out,
        "n={} p={} partitions={} nodes={} seconds={:.3}",
        report.manifest.n,
        report.p,
        report.chunk_count(),
        report.manifest.total_nodes(),
        report.elapsed.as_secs_f64()
    )?;
    Ok(())
}

fn read_patterns(args: &QueryArgs) -> Result<Vec<String>, Failure> {
    match (&args.pattern, &args.patterns_file) {
        (Some(p), _) => Ok(vec![p.clone()]),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::from(Error::Io {
                    context: path.display().to_string(),
                    source: e,
                }))?;
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect())
        }
        (None, None) => Err(usage("one of --pattern or --patterns-file is required")),
    }
}

fn cmd_query(args: QueryArgs, out: &mut impl Write) -> CmdResult {
    let queries = read_patterns(&args)?
        .iter()
        .map(|p| Query::parse(p))
        .collect::<Result<Vec<_>, _>>()?;
    let index = Index::open(&args.index)?;
    for query in &queries {
        let matches = index.search(query)?;
        for pos in matches.positions {
            writeln!(out, "{}\t{pos}", query.pattern())?;
        }
    }
    Ok(())
}

fn cmd_stats(args: IndexArgs, out: &mut impl Write) -> CmdResult {
    let index = Index::open(&args.index)?;
    let stats = index.stats();
    for part in &stats.partitions {
        writeln!(
            out,
            "partition={} prefix={} nodes={} suffixes={} bytes={} f={:.3}",
            part.partition_id,
            part.prefix,
            part.node_count,
            part.suffix_count,
            part.bytes,
            part.bytes as f64 / part.suffix_count as f64
        )?;
    }
    writeln!(
        out,
        "n={} p={} partitions={} overflow={} nodes={} bytes={} f={:.3}",
        stats.n,
        stats.p,
        stats.partitions.len(),
        stats.overflow,
        stats.total_nodes(),
        stats.total_bytes(),
        stats.expansion_factor()
    )?;
    Ok(())
}

fn cmd_verify(args: VerifyArgs, out: &mut impl Write) -> CmdResult {
    let index = Index::open(&args.index)?;
    let report = index.verify(args.leaf_stride)?;
    writeln!(
        out,
        "status=ok chunks={} terminals={} labels_checked={}",
        report.chunks, report.terminals, report.labels_checked
    )?;
    Ok(())
}

fn cmd_bench(args: BenchArgs, out: &mut impl Write) -> CmdResult {
    if args.worker_counts.contains(&0) {
        return Err(usage("worker counts must be at least 1"));
    }
    let (seq, _) = ingest_paths(&[&args.input])?;
    let largest = args.sizes.iter().copied().max().unwrap_or(0);
    if largest > seq.len() as u64 {
        return Err(usage(format!(
            "largest size {largest} exceeds the input's {} bases",
            seq.len()
        )));
    }
    if args.sizes.contains(&0) {
        return Err(usage("sizes must be positive"));
    }
    let scratch = match spill_root() {
        Some(root) => tempfile::tempdir_in(root)?,
        None => tempfile::tempdir()?,
    };

    let mut timings: Vec<(u64, usize, f64)> = Vec::new();
    for &size in &args.sizes {
        let prefix = seq.slice(0, size as u32)?;
        for &workers in &args.worker_counts {
            let dir = scratch.path().join(format!("s{size}-w{workers}"));
            let params = BuildParams {
                memory: args.memory,
                workers,
                prefix_len: args.prefix_len,
                f: args.f,
            };
            let cfg = config(&params, Vec::new(), &dir);
            let started = Instant::now();
            build_index_from_sequence(&prefix, &cfg)?;
            let seconds = started.elapsed().as_secs_f64();
            fs::remove_dir_all(&dir)?;
            writeln!(out, "size={size} workers={workers} seconds={seconds:.6}")?;
            timings.push((size, workers, seconds));
        }
    }

    for &workers in &args.worker_counts {
        let points: Vec<(f64, f64)> = timings
            .iter()
            .filter(|t| t.1 == workers)
            .map(|t| (t.0 as f64, t.2))
            .collect();
        if let Some(fit) = linear_fit(&points) {
            writeln!(
                out,
                "fit workers={workers} points={} slope={:.6e} intercept={:.6} r2={:.6}",
                points.len(),
                fit.slope,
                fit.intercept,
                fit.r_squared
            )?;
        }
    }
    if args.worker_counts.contains(&1) {
        for &size in &args.sizes {
            let base = timings.iter().find(|t| t.0 == size && t.1 == 1).unwrap().2;
            for t in timings.iter().filter(|t| t.0 == size && t.1 != 1) {
                writeln!(
                    out,
                    "speedup size={size} workers={} ratio={:.3} speedup={:.3}",
                    t.1,
                    t.2 / base,
                    base / t.2
                )?;
            }
        }
    }
    Ok(())
}
