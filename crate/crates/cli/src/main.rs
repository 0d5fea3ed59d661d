use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::ffi::OsString;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use coco_ldp::accountant::amplified_epsilon;
use coco_ldp::aggregate::project_to_simplex;
use coco_ldp::harness::{
    format_number, gen_synthetic, parse_list, run_amplification_sweep, run_experiment, write_amplification_csv,
    write_amplification_jsonl, write_dataset_csv, write_rows_csv, write_rows_jsonl, Bound, ExperimentConfig, PointFailure,
};

#[derive(Parser)]
#[command(name = "coco-ldp", version, about = "Hashed local randomizers for sparse ternary vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid and report per-point error metrics.
    Simulate(SimulateArgs),
    /// Amplification-by-shuffling budgets for a grid or an explicit alpha.
    Amplify(AmplifyArgs),
    /// Project a CSV column of estimates onto the scaled simplex.
    Project(ProjectArgs),
    /// Dump a synthetic dataset.
    Gen(GenArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    master_seed: u64,
    /// Flat `key = value` file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the full-scale grid instead of the desk-scale one.
    #[arg(long)]
    full_grid: bool,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    mechanisms: Option<String>,
    #[arg(long)]
    repetitions: Option<String>,
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    projection: Option<String>,
    /// raw_mean or mean_log.
    #[arg(long)]
    report: Option<String>,
    /// Output domain size; defaults to each mechanism's recommended value.
    #[arg(long)]
    t: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AmplifyArgs {
    #[arg(long, default_value = "10000")]
    n: String,
    #[arg(long, default_value = "4")]
    s: String,
    #[arg(long, default_value = "0.5,1,2")]
    epsilon: String,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value = "collision,clone,efmrtt")]
    bounds: String,
    /// Query a single mixture parameter instead of the named bounds.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ProjectArgs {
    /// CSV with a header; the `value` column is projected.
    #[arg(long)]
    input: PathBuf,
    /// Simplex scale, i.e. the sparsity `s`.
    #[arg(long)]
    s: f64,
    #[arg(long, default_value = "value")]
    column: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: u32,
    #[arg(long)]
    s: u32,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

const INVALID_CONFIG: u8 = 1;
const POINT_FAILURES: u8 = 2;

fn report_failures(failures: &[PointFailure]) -> u8 {
    for f in failures {
        eprintln!("point failed: {}: {}", f.description, f.error);
    }
    if failures.is_empty() {
        0
    } else {
        POINT_FAILURES
    }
}

fn simulate(args: SimulateArgs) -> anyhow::Result<u8> {
    let mut cfg = if args.full_grid { ExperimentConfig::full_grid() } else { ExperimentConfig::default() };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)?;
    }
    let overrides = [
        ("n", &args.n),
        ("d", &args.d),
        ("s", &args.s),
        ("epsilon", &args.epsilon),
        ("mechanisms", &args.mechanisms),
        ("repetitions", &args.repetitions),
        ("metrics", &args.metrics),
        ("target", &args.target),
        ("projection", &args.projection),
        ("report", &args.report),
        ("t", &args.t),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.master_seed = args.master_seed;
    let report = run_experiment(&cfg)?;
    let mut out = open_output(args.output.as_deref())?;
    match args.format {
        Format::Csv => write_rows_csv(&report.rows, &mut out)?,
        Format::Jsonl => write_rows_jsonl(&report.rows, &mut out)?,
    }
    out.flush()?;
    Ok(report_failures(&report.failures))
}

fn amplify(args: AmplifyArgs) -> anyhow::Result<u8> {
    let ns: Vec<u64> = parse_list(&args.n)?;
    let epsilons: Vec<f64> = parse_list(&args.epsilon)?;
    if ns.is_empty() || epsilons.is_empty() {
        bail!("n and epsilon must list at least one value");
    }
    let mut out = open_output(args.output.as_deref())?;
    if let Some(alpha) = args.alpha {
        let mut failed = false;
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["n", "epsilon", "alpha", "delta", "epsilon_c"])?;
        for &n in &ns {
            for &eps in &epsilons {
                match amplified_epsilon(n, eps, alpha, args.delta, args.tolerance) {
                    Ok(ec) => w.write_record([
                        n.to_string(),
                        format_number(eps),
                        format_number(alpha),
                        format_number(args.delta),
                        format_number(ec),
                    ])?,
                    Err(e) => {
                        eprintln!("point failed: n={n} epsilon={eps}: {e}");
                        failed = true;
                    }
                }
            }
        }
        w.flush()?;
        drop(w);
        out.flush()?;
        return Ok(if failed { POINT_FAILURES } else { 0 });
    }
    let ss: Vec<u32> = parse_list(&args.s)?;
    let bounds: Vec<Bound> = parse_list(&args.bounds)?;
    if ss.is_empty() || bounds.is_empty() {
        bail!("s and bounds must list at least one value");
    }
    let report = run_amplification_sweep(&ns, &ss, &epsilons, args.delta, &bounds, args.tolerance);
    match args.format {
        Format::Csv => write_amplification_csv(&report.rows, &mut out)?,
        Format::Jsonl => write_amplification_jsonl(&report.rows, &mut out)?,
    }
    out.flush()?;
    Ok(report_failures(&report.failures))
}

fn project(args: ProjectArgs) -> anyhow::Result<u8> {
    if !(args.s.is_finite() && args.s > 0.0) {
        bail!("s must be positive");
    }
    let mut reader = csv::Reader::from_path(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == args.column)
        .with_context(|| format!("no '{}' column in {}", args.column, args.input.display()))?;
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    let values: Vec<f64> = records
        .iter()
        .enumerate()
        .map(|(i, r)| r[col].trim().parse::<f64>().with_context(|| format!("row {}: bad value '{}'", i + 1, &r[col])))
        .collect::<anyhow::Result<_>>()?;
    let projected = project_to_simplex(&values, args.s);
    let mut out = open_output(args.output.as_deref())?;
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(&headers)?;
    for (r, v) in records.iter().zip(projected) {
        let fields: Vec<String> =
            r.iter().enumerate().map(|(i, f)| if i == col { format_number(v) } else { f.to_string() }).collect();
        w.write_record(fields)?;
    }
    w.flush()?;
    drop(w);
    out.flush()?;
    Ok(0)
}

fn gen(args: GenArgs) -> anyhow::Result<u8> {
    let data = gen_synthetic(args.n, args.d, args.s, args.seed)?;
    let mut out = open_output(args.output.as_deref())?;
    write_dataset_csv(&data, &mut out)?;
    out.flush()?;
    Ok(0)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { INVALID_CONFIG } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Amplify(a) => amplify(a),
        Command::Project(a) => project(a),
        Command::Gen(a) => gen(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        INVALID_CONFIG
    })
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> u8 {
        run(std::iter::once("coco-ldp").chain(args.iter().copied()))
    }

    fn call_to(args: &[&str], out: &Path) -> (u8, String) {
        let mut full = args.to_vec();
        full.extend(["--output", out.to_str().unwrap()]);
        let code = call(&full);
        (code, std::fs::read_to_string(out).unwrap_or_default())
    }

    #[test]
    fn simulate_requires_a_master_seed() {
        assert_eq!(call(&["simulate", "--n", "100"]), INVALID_CONFIG);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        std::fs::write(&cfg, "n = 100\nflavour = vanilla\n").unwrap();
        assert_eq!(call(&["simulate", "--master-seed", "1", "--config", cfg.to_str().unwrap()]), INVALID_CONFIG);
        assert_eq!(call(&["simulate", "--master-seed", "1", "--mechanisms", "laplace"]), INVALID_CONFIG);
        assert_eq!(call(&["simulate", "--master-seed", "1", "--repetitions", "0"]), INVALID_CONFIG);
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("grid.cfg");
        std::fs::write(&cfg, "n = 500\nd = 16\ns = 2\nepsilon = 1\nmechanisms = coco\nrepetitions = 2\nmetrics = mae\n")
            .unwrap();
        let args = ["simulate", "--master-seed", "3", "--config", cfg.to_str().unwrap(), "--d", "8", "--projection", "false"];
        let (code, text) = call_to(&args, &dir.path().join("out.csv"));
        assert_eq!(code, 0);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n,d,s,epsilon,mechanism,t,target,metric,value,repetitions,seed");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&row[..3], ["500", "8", "2"]);
        assert_eq!(row[4], "coco");
        assert_eq!(row[7], "mae");
        assert_eq!(row[9], "2");
        assert!(lines.next().is_none());
    }

    #[test]
    fn point_failures_keep_partial_rows() {
        let dir = tempfile::tempdir().unwrap();
        let args = [
            "simulate", "--master-seed", "1", "--n", "200", "--d", "4,16", "--s", "8", "--epsilon", "1", "--mechanisms",
            "collision", "--repetitions", "1",
        ];
        let (code, text) = call_to(&args, &dir.path().join("out.csv"));
        assert_eq!(code, POINT_FAILURES);
        assert!(text.lines().count() > 1);
        assert!(text.lines().skip(1).all(|l| l.starts_with("200,16,")));
    }

    #[test]
    fn jsonl_output() {
        let dir = tempfile::tempdir().unwrap();
        let args = [
            "simulate", "--master-seed", "5", "--n", "300", "--d", "8", "--s", "2", "--epsilon", "1", "--mechanisms",
            "collision", "--repetitions", "1", "--format", "jsonl",
        ];
        let (code, text) = call_to(&args, &dir.path().join("out.jsonl"));
        assert_eq!(code, 0);
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.starts_with('{') && l.ends_with('}') && l.contains("\"metric\":")));
    }

    #[test]
    fn amplify_sweep_and_query() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("amp.csv");
        let (code, text) = call_to(&["amplify", "--n", "10000", "--s", "4", "--epsilon", "1", "--delta", "1e-6"], &out);
        assert_eq!(code, 0);
        assert_eq!(text.lines().count(), 4);
        let (code, text) = call_to(&["amplify", "--n", "1000", "--epsilon", "1", "--alpha", "0.2"], &out);
        assert_eq!(code, 0);
        assert!(text.starts_with("n,epsilon,alpha,delta,epsilon_c\n1000,"));
        let (code, _) = call_to(&["amplify", "--n", "1000", "--epsilon", "1", "--delta", "0.999999999999"], &out);
        assert_eq!(code, POINT_FAILURES);
    }

    #[test]
    fn gen_dumps_sparse_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (code, text) = call_to(&["gen", "--n", "50", "--d", "10", "--s", "3", "--seed", "7"], &dir.path().join("d.csv"));
        assert_eq!(code, 0);
        assert_eq!(text.lines().count(), 1 + 50 * 3);
        assert_eq!(call(&["gen", "--n", "5", "--d", "2", "--s", "3", "--seed", "7"]), INVALID_CONFIG);
    }

    #[test]
    fn project_keeps_other_columns() {
        let dir = tempfile::tempdir().unwrap();
        let est = dir.path().join("est.csv");
        std::fs::write(&est, "event,value\n1,0.9\n2,-0.2\n3,0.8\n4,0.1\n").unwrap();
        let (code, text) = call_to(&["project", "--input", est.to_str().unwrap(), "--s", "1"], &dir.path().join("p.csv"));
        assert_eq!(code, 0);
        assert!(text.starts_with("event,value\n1,"));
        let values: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(values.iter().all(|&v| v >= 0.0));
        assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(call(&["project", "--input", est.to_str().unwrap(), "--s", "1", "--column", "nope"]), INVALID_CONFIG);
    }
}
