use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sparse_ph::cech::build_filtration;
use sparse_ph::format::{fmt_g17, parse_f64};
use sparse_ph::limits::{
    check_goldens, compute_ck, compute_goldens, estimate_ak, estimate_connected_volume, estimate_mass, estimate_mu,
    CkValue, GoldenFixture, MassMethod, McEstimate, GOLDEN_VERSION,
};
use sparse_ph::persistence::{compute_diagram, Diagram, Rectangle};
use sparse_ph::regimes::{classify, run, ExperimentConfig, Mode, RadiusSpec};
use sparse_ph::sampling::{sample, Density, PointCloud, SampleSpec};
use sparse_ph::Error;

const EXIT_CRASH: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_STATISTICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "sparse-ph", version, about = "Persistence diagrams of Cech filtrations on sparse random point clouds")]
struct Cli {
    /// Worker threads (numeric output does not depend on this).
    #[arg(long, global = true, env = "SPARSE_PH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a cloud and write its diagram, points and a JSON sidecar.
    Simulate(SimulateArgs),
    /// Compute the diagram of a point cloud CSV.
    Diagram(DiagramArgs),
    /// Monte Carlo oracle for a limiting constant.
    Limits(LimitsArgs),
    /// Classify a radius sequence.
    Classify(ClassifyArgs),
    /// Run a statistical harness from a JSON config.
    Verify(VerifyArgs),
    /// Write or check the golden-number fixture.
    Goldens(GoldensArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    /// `a,gamma,beta` for r_n = a n^-gamma (log n)^beta.
    #[arg(long, allow_hyphen_values = true)]
    radius: String,
    /// `cube:SIDE` or `gauss:SIGMA,RADIUS`.
    #[arg(long, default_value = "cube:1")]
    density: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Filtration cutoff in units of r_n.
    #[arg(long, default_value_t = 1.5)]
    cutoff_margin: f64,
    #[arg(long)]
    poissonized: bool,
    /// Diagram CSV; points go to `<stem>.points.csv`, metadata to `<stem>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiagramFormat {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct DiagramArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    k: usize,
    /// Diagram coordinates are filtration values divided by this.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Filtration cutoff in physical units.
    #[arg(long)]
    cutoff: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: DiagramFormat,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Quantity {
    Ck,
    Mass,
    Mu,
    Ak,
    ConnectedVolume,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    BdClosedForm,
    HProduct,
}

#[derive(clap::Args)]
struct LimitsArgs {
    #[arg(long, value_enum)]
    quantity: Quantity,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value = "cube:1")]
    density: String,
    /// Rectangle `s,t,u,v` (scaled units; `inf` allowed for v).
    #[arg(long)]
    rect: Option<String>,
    /// Use the birth window [0, t] instead of (s, t].
    #[arg(long)]
    left_closed: bool,
    #[arg(long, value_enum, default_value = "bd-closed-form")]
    method: MethodArg,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct ClassifyArgs {
    #[arg(long, allow_hyphen_values = true)]
    radius: String,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    d: usize,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = ["divergence", "poisson", "vanishing", "palm"])]
    mode: String,
    /// Directory for `result.json` and `records.jsonl` (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GoldensArgs {
    #[arg(long, default_value = "crates/core/tests/fixtures/goldens.json")]
    fixture: PathBuf,
    /// Recompute and overwrite the fixture instead of checking it.
    #[arg(long)]
    write: bool,
    #[arg(long, default_value_t = 20240610)]
    seed: u64,
    /// Check against a fresh seed instead of the stored one.
    #[arg(long)]
    fresh_seed: Option<u64>,
}

/// Failure with its exit code.
enum Failure {
    Usage(String),
    Crash(String),
    Statistical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Crash(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Crash(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CRASH);
        }
    }
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Diagram(a) => diagram(a),
        Command::Limits(a) => limits(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Verify(a) => verify(a),
        Command::Goldens(a) => goldens(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Crash(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CRASH)
        }
        Err(Failure::Statistical(m)) => {
            eprintln!("statistical failure: {m}");
            ExitCode::from(EXIT_STATISTICAL)
        }
    }
}

fn parse_density(text: &str, d: usize) -> Result<Density, Failure> {
    let bad = || Failure::Usage(format!("bad density {text:?}; use cube:SIDE or gauss:SIGMA,RADIUS"));
    let (kind, params) = text.split_once(':').ok_or_else(bad)?;
    let nums: Vec<f64> = params.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let density = match (kind, nums.as_slice()) {
        ("cube", [side]) => Density::uniform_cube(*side, d)?,
        ("gauss", [sigma, radius]) => Density::truncated_gaussian(*sigma, *radius, d)?,
        _ => return Err(bad()),
    };
    Ok(density)
}

fn parse_rect(text: &str, left_closed: bool) -> Result<Rectangle, Failure> {
    let nums: Vec<f64> = text
        .split(',')
        .map(|p| parse_f64(p).ok_or_else(|| Failure::Usage(format!("bad number {p:?} in rectangle"))))
        .collect::<Result<_, _>>()?;
    let [s, t, u, v] = nums[..] else {
        return Err(Failure::Usage(format!("rectangle must be s,t,u,v, got {text:?}")));
    };
    let rect = if left_closed {
        if s != 0.0 {
            return Err(Failure::Usage("--left-closed needs s = 0".into()));
        }
        Rectangle::left_closed(t, u, v)?
    } else {
        Rectangle::new(s, t, u, v)?
    };
    Ok(rect)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_diagram(diag: &Diagram, format: DiagramFormat, out: &mut dyn Write) -> CliResult {
    match format {
        DiagramFormat::Csv => diag.write_csv(&mut *out)?,
        DiagramFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, diag).map_err(|e| Failure::Crash(e.to_string()))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult {
    let radius: RadiusSpec = a.radius.parse()?;
    let density = parse_density(&a.density, a.d)?;
    let regime = classify(&radius, a.k, a.d)?;
    if !(a.cutoff_margin > 0.0) || !a.cutoff_margin.is_finite() {
        return Err(Failure::Usage("--cutoff-margin must be positive".into()));
    }
    let spec = SampleSpec::new(a.n, a.poissonized, a.seed)?;
    let r_n = radius.radius(a.n)?;
    let normalizer = radius.normalizer(a.n, a.k, a.d)?;
    let cutoff = r_n * a.cutoff_margin;

    let cloud = sample(&density, &spec)?;
    let fc = build_filtration(&cloud, a.k, cutoff)?;
    let diag = compute_diagram(&fc, a.k, r_n)?;

    let points_path = sibling(&a.out, ".points.csv");
    let meta_path = sibling(&a.out, ".json");
    let mut w = BufWriter::new(File::create(&a.out)?);
    diag.write_csv(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(&points_path)?);
    cloud.write_csv(&mut w, false)?;
    w.flush()?;
    let meta = json!({
        "spec": {
            "n": a.n,
            "d": a.d,
            "k": a.k,
            "radius": radius,
            "density": density,
            "seed": a.seed,
            "poissonized": a.poissonized,
        },
        "n_points": cloud.len(),
        "normalizer": normalizer,
        "regime": regime,
        "scale": r_n,
        "cutoff": cutoff,
        "cutoff_margin": a.cutoff_margin,
        "censored": diag.censored,
        "diagram": a.out.file_name().map(|s| s.to_string_lossy().into_owned()),
        "points": points_path.file_name().map(|s| s.to_string_lossy().into_owned()),
    });
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).map_err(|e| Failure::Crash(e.to_string()))? + "\n")?;
    eprintln!(
        "{} points, {} pairs; scale {} cutoff {}",
        cloud.len(),
        diag.len(),
        fmt_g17(r_n),
        fmt_g17(cutoff)
    );
    Ok(())
}

fn diagram(a: DiagramArgs) -> CliResult {
    if a.d == 0 {
        return Err(Failure::Usage("--d must be positive".into()));
    }
    if !(a.scale > 0.0) || !a.scale.is_finite() {
        return Err(Failure::Usage("--scale must be positive".into()));
    }
    let file = File::open(&a.points).map_err(|e| Failure::Crash(format!("{}: {e}", a.points.display())))?;
    let cloud = PointCloud::read_csv(BufReader::new(file), a.d)?;
    let fc = build_filtration(&cloud, a.k, a.cutoff)?;
    let diag = compute_diagram(&fc, a.k, a.scale)?;
    match &a.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write_diagram(&diag, a.format, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write_diagram(&diag, a.format, &mut w)?;
        }
    }
    Ok(())
}

fn limits(a: LimitsArgs) -> CliResult {
    let need = |x: Option<f64>, name: &str| x.ok_or_else(|| Failure::Usage(format!("--quantity needs --{name}")));
    let rect = || -> Result<Rectangle, Failure> {
        let text = a.rect.as_deref().ok_or_else(|| Failure::Usage("--quantity needs --rect".into()))?;
        parse_rect(text, a.left_closed)
    };
    let method = match a.method {
        MethodArg::BdClosedForm => MassMethod::BdClosedForm,
        MethodArg::HProduct => MassMethod::HProduct,
    };
    let method_name = |m: MassMethod| match m {
        MassMethod::BdClosedForm => "bd-closed-form",
        MassMethod::HProduct => "h-product",
    };
    let (est, label): (McEstimate, &str) = match a.quantity {
        Quantity::Ck => match compute_ck(&parse_density(&a.density, a.d)?, a.k, a.samples, a.seed)? {
            CkValue::Exact { value } => (McEstimate { value, std_error: 0.0, n_samples: 0, seed: a.seed }, "exact"),
            CkValue::Estimate(e) => (e, "monte-carlo"),
        },
        Quantity::Mass => (estimate_mass(&rect()?, a.k, a.d, a.samples, a.seed, method)?, method_name(method)),
        Quantity::Mu => (estimate_mu(&rect()?, a.k, &parse_density(&a.density, a.d)?, a.samples, a.seed)?, "bd-closed-form"),
        Quantity::Ak => {
            let density = parse_density(&a.density, a.d)?;
            (estimate_ak(need(a.s, "s")?, need(a.t, "t")?, a.k, &density, a.samples, a.seed)?, "h-product")
        }
        Quantity::ConnectedVolume => (estimate_connected_volume(a.k, a.d, need(a.r, "r")?, a.samples, a.seed)?, "monte-carlo"),
    };
    println!(
        "{}",
        json!({
            "value": est.value,
            "std_error": est.std_error,
            "n_samples": est.n_samples,
            "seed": est.seed,
            "method": label,
        })
    );
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> CliResult {
    let radius: RadiusSpec = a.radius.parse()?;
    let report = classify(&radius, a.k, a.d)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Failure::Crash(e.to_string()))?);
    Ok(())
}

fn verify(a: VerifyArgs) -> CliResult {
    let mode: Mode = a.mode.parse()?;
    let text = fs::read_to_string(&a.config).map_err(|e| Failure::Usage(format!("{}: {e}", a.config.display())))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    let started = Instant::now();
    let result = run(&cfg, mode)?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| Failure::Crash(e.to_string()))? + "\n";
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("result.json"), &json)?;
            let mut w = BufWriter::new(File::create(dir.join("records.jsonl"))?);
            for rec in &result.records {
                serde_json::to_writer(&mut w, rec).map_err(|e| Failure::Crash(e.to_string()))?;
                writeln!(w)?;
            }
            w.flush()?;
        }
        None => print!("{json}"),
    }
    for c in &result.checks {
        eprintln!(
            "{} {}{}: observed {} expected {} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            if c.statistical { " [statistical]" } else { "" },
            fmt_g17(c.observed),
            fmt_g17(c.expected),
            c.detail
        );
    }
    eprintln!("{} attempt(s), {:.1} s", result.attempts.len(), started.elapsed().as_secs_f64());
    if result.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = result.failed_checks().map(|c| c.name.as_str()).collect();
        Err(Failure::Statistical(failed.join(", ")))
    }
}

fn goldens(a: GoldensArgs) -> CliResult {
    if a.write {
        let records = compute_goldens(a.seed)?;
        let fixture = GoldenFixture { version: GOLDEN_VERSION, records };
        if let Some(parent) = a.fixture.parent() {
            fs::create_dir_all(parent)?;
        }
        let text = serde_json::to_string_pretty(&fixture).map_err(|e| Failure::Crash(e.to_string()))? + "\n";
        fs::write(&a.fixture, text)?;
        for g in &fixture.records {
            eprintln!("{}: {} ± {}", g.name, fmt_g17(g.estimate.value), fmt_g17(g.estimate.std_error));
        }
        return Ok(());
    }
    let text = fs::read_to_string(&a.fixture).map_err(|e| Failure::Usage(format!("{}: {e}", a.fixture.display())))?;
    let fixture = GoldenFixture::from_json(&text)?;
    let outcome = check_goldens(&fixture.records, a.fresh_seed)?;
    let mut failed = Vec::new();
    for (name, stored, now, ok) in &outcome {
        eprintln!(
            "{} {name}: stored {} ± {}, now {} ± {}",
            if *ok { "PASS" } else { "FAIL" },
            fmt_g17(stored.value),
            fmt_g17(stored.std_error),
            fmt_g17(now.value),
            fmt_g17(now.std_error)
        );
        if !ok {
            failed.push(name.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Statistical(failed.join(", ")))
    }
}
