use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use cpagain::certificate::Certificate;
use cpagain::export;
use cpagain::expr::{SystemFile, SystemModel};
use cpagain::mesh::{kuhn_triangulate, Triangulation};
use cpagain::pipeline::{analyze, AnalysisConfig, PipelineError};
use cpagain::solve::backend_from_env;
use cpagain::verify::{verify, VerifyOptions};

const EXIT_IO: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "cpagain", version, about = "Certified small-signal L2 gain bounds from CPA storage and barrier functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a storage function, gain bound, barrier function and invariant set.
    Analyze(AnalyzeArgs),
    /// Re-check a certificate without the solver.
    Verify(VerifyArgs),
    /// Write CSV files for plotting.
    Export(ExportArgs),
    /// Generate, refine and validate a Kuhn triangulation.
    Mesh(MeshArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// System file, or the name of a built-in system.
    #[arg(long, required_unless_present = "manifest")]
    system: Option<String>,
    /// Analysis config; defaults to the pendulum reference config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 for one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Re-run with the inputs recorded in a manifest.
    #[arg(long, conflicts_with_all = ["system", "config", "out"])]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    cert: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// System file or built-in name; must match the certificate's system.
    #[arg(long)]
    system: Option<String>,
    /// Report path; defaults to `verify_report.json` next to the certificate.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportKind {
    Mesh,
    Levelset,
    History,
    Fields,
    All,
}

#[derive(Args)]
struct ExportArgs {
    cert: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportKind::All)]
    what: ExportKind,
    #[arg(long)]
    out: PathBuf,
    /// Points per axis of the field grid.
    #[arg(long, default_value_t = 100)]
    resolution: usize,
}

#[derive(Args)]
struct MeshArgs {
    /// Box as `a:b,c:d`.
    #[arg(long = "box", allow_hyphen_values = true)]
    extents: String,
    /// Cells per axis as `k,k`.
    #[arg(long)]
    grid: String,
    /// Refine every simplex once.
    #[arg(long)]
    refine: bool,
    /// Write the mesh JSON here instead of only printing a summary.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Inputs and outputs of one `analyze` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunManifest {
    system: String,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    threads: usize,
    tool_version: String,
    system_hash: String,
    started_unix: f64,
    finished_unix: f64,
    outputs: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))
}

fn load_system(arg: &str) -> Result<SystemModel, Failure> {
    let src = if SystemFile::builtin_names().contains(&arg) {
        SystemFile::builtin(arg)
    } else {
        SystemFile::from_toml_str(&read(Path::new(arg))?)
    }
    .map_err(Failure::io)?;
    SystemModel::from_file(&src).map_err(Failure::io)
}

fn set_threads(threads: usize) {
    if threads > 0 {
        // fails only if a pool already exists, which keeps the earlier setting
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let started = now_unix();
    let (system, config, out, seed, threads) = match &args.manifest {
        Some(path) => {
            let m: RunManifest = serde_json::from_str(&read(path)?)
                .map_err(|e| Failure::io(format!("cannot parse manifest {}: {e}", path.display())))?;
            (m.system, m.config, m.out, m.seed, m.threads)
        }
        None => (
            args.system.clone().unwrap_or_default(),
            args.config.clone(),
            args.out.clone().unwrap_or_default(),
            args.seed,
            args.threads,
        ),
    };
    set_threads(threads);
    let sys = Arc::new(load_system(&system)?);
    let cfg = match &config {
        Some(path) => AnalysisConfig::from_toml_str(&read(path)?).map_err(Failure::io)?,
        None => AnalysisConfig::pendulum_reference(),
    };
    let backend = backend_from_env().map_err(Failure::io)?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::io(format!("cannot create {}: {e}", out.display())))?;

    let analysis = analyze(&sys, &cfg, backend.as_ref()).map_err(|e: PipelineError| Failure {
        code: if e.is_infeasible() { EXIT_INFEASIBLE } else { EXIT_IO },
        message: e.to_string(),
    })?;
    for d in &analysis.diagnostics {
        eprintln!("note: {d}");
    }
    let cert = Certificate::from_analysis(&sys, &cfg, &analysis);
    write_atomic(&out.join("cert.json"), &cert.to_json())?;
    write_atomic(&out.join("history.csv"), &export::history_csv(&cert))?;
    let manifest = RunManifest {
        system,
        config,
        out: out.clone(),
        seed,
        threads,
        tool_version: cert.tool_version.clone(),
        system_hash: cert.system_hash.clone(),
        started_unix: started,
        finished_unix: now_unix(),
        outputs: vec!["cert.json".into(), "history.csv".into()],
    };
    write_atomic(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    println!("gamma       {}", cert.gamma);
    println!("sqrt_gamma  {}", cert.gamma.sqrt());
    println!("uhat        {}", cert.uhat);
    println!("level_c     {}", cert.level_c);
    println!("|A|         {} simplexes", cert.regions.invariant.len());
    println!("certificate {}", out.join("cert.json").display());
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    set_threads(args.threads);
    let cert = Certificate::load(&args.cert).map_err(Failure::io)?;
    if let Some(system) = &args.system {
        let sys = load_system(system)?;
        if sys.hash() != cert.system_hash {
            return Err(Failure {
                code: EXIT_VERIFY,
                message: "the given system does not match the certificate".into(),
            });
        }
    }
    let opts = VerifyOptions {
        samples: args.samples,
        trials: args.trials,
        seed: args.seed,
        ..VerifyOptions::default()
    };
    let report = verify(&cert, &opts).map_err(|e| Failure {
        code: EXIT_VERIFY,
        message: format!("certificate rejected: {e}"),
    })?;
    let path = args
        .report
        .unwrap_or_else(|| args.cert.with_file_name("verify_report.json"));
    write_atomic(
        &path,
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    println!("bounds snapshot      {}", mark(report.bounds_match));
    println!("storage inequalities {} (max H {:.3e})", mark(report.storage.passed()), report.storage.max_h);
    println!("barrier inequalities {} (max D+ {:.3e})", mark(report.barrier.passed()), report.barrier.max_dplus);
    println!("invariant level      {}", mark(report.level.passed && report.invariant_region_matches));
    println!("containment          {}", mark(report.containment_witness.is_none()));
    println!("sampled HJ           {} (max {:.3e})", mark(report.hj_sample.passed), report.hj_sample.max);
    println!("invariance trials    {} ({} failures)", mark(report.invariance.passed), report.invariance.failures.len());
    println!("gain trials          {} ({} failures)", mark(report.gain.passed), report.gain.failures.len());
    println!("report {}", path.display());
    if report.passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            message: "verification failed".into(),
        })
    }
}

fn cmd_export(args: ExportArgs) -> Result<(), Failure> {
    let cert = Certificate::load(&args.cert).map_err(Failure::io)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::io(format!("cannot create {}: {e}", args.out.display())))?;
    let all = args.what == ExportKind::All;
    let mut files: Vec<(&str, String)> = Vec::new();
    if all || args.what == ExportKind::Mesh {
        files.push(("mesh.csv", export::mesh_edges_csv(&cert).map_err(Failure::io)?));
    }
    if all || args.what == ExportKind::Levelset {
        files.push(("levelset.csv", export::levelset_csv(&cert).map_err(Failure::io)?));
    }
    if all || args.what == ExportKind::History {
        files.push(("history.csv", export::history_csv(&cert)));
    }
    if all || args.what == ExportKind::Fields {
        files.push(("fields.csv", export::fields_csv(&cert, args.resolution).map_err(Failure::io)?));
    }
    for (name, body) in files {
        let path = args.out.join(name);
        write_atomic(&path, &body)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| Failure::io(format!("bad {what} entry {s:?}"))))
        .collect()
}

fn cmd_mesh(args: MeshArgs) -> Result<(), Failure> {
    let extents: Vec<(f64, f64)> = args
        .extents
        .split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| Failure::io(format!("bad box entry {pair:?}, expected a:b")))?;
            let a: f64 = a.trim().parse().map_err(|_| Failure::io(format!("bad box bound {a:?}")))?;
            let b: f64 = b.trim().parse().map_err(|_| Failure::io(format!("bad box bound {b:?}")))?;
            Ok((a, b))
        })
        .collect::<Result<_, Failure>>()?;
    let grid: Vec<usize> = parse_list(&args.grid, "grid")?;
    let mut mesh: Triangulation = kuhn_triangulate(&extents, &grid).map_err(Failure::io)?;
    if args.refine {
        mesh = mesh.refine_all().map_err(Failure::io)?;
    }
    let diagnostics = mesh.validate();
    println!("simplexes   {}", mesh.num_simplices());
    println!("vertices    {}", mesh.num_vertices());
    println!("diagnostics {}", diagnostics.len());
    for d in &diagnostics {
        println!("  {d:?}");
    }
    if let Some(out) = &args.out {
        write_atomic(out, &(serde_json::to_string_pretty(&mesh).expect("mesh serializes") + "\n"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_IO)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Export(a) => cmd_export(a),
        Command::Mesh(a) => cmd_mesh(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
