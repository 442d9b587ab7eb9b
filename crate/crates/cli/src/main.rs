use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgard::denoise::{corrupt_image, denoise_image, psnr, RoiConfig};
use kgard::experiments::{
    run_monte_carlo, sweep_outlier_magnitude, write_aggregate_csv, write_sweep_csv, write_trials_csv, ExperimentConfig,
    Protocol, SweepConfig, SWEEP_EPSILON, SWEEP_LAMBDA,
};
use kgard::imageio::{load_pgm, save_pgm, GrayImage};
use kgard::noise::{InlierNoise, NoiseSpec, StableParams};
use kgard::{kgard_fit, Dataset, KernelParams, KgardConfig, PointSet, Regularizer, StopNorm};
use nalgebra::DVector;

#[derive(Debug, Parser)]
#[command(name = "kgard", version, about = "Greedy robust kernel regression and impulse-noise removal")]
struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true, env = "KGARD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a CSV data set with columns x1..xd and y
    Regress(RegressArgs),
    /// Monte-Carlo run of a benchmark protocol
    Experiment(ExperimentArgs),
    /// Outlier-magnitude sweep on pure-outlier data
    Sweep(SweepArgs),
    /// Add Gaussian noise and impulses to a PGM image
    CorruptImage(CorruptImageArgs),
    /// Remove impulse noise from a PGM image
    Denoise(DenoiseArgs),
    /// Peak signal-to-noise ratio between two PGM images
    Psnr(PsnrArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegularizerArg {
    Coefficient,
    Rkhs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StopNormArg {
    L2,
    Linf,
}

#[derive(Debug, Args)]
struct RegressArgs {
    /// Training CSV; columns other than x<k> and y are ignored
    #[arg(long = "in")]
    input: PathBuf,
    /// Kernel width
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = RegularizerArg::Coefficient)]
    regularizer: RegularizerArg,
    #[arg(long, value_enum, default_value_t = StopNormArg::L2)]
    stop_norm: StopNormArg,
    /// Selection cap (defaults to half the number of samples)
    #[arg(long)]
    max_selections: Option<usize>,
    /// Output CSV with columns index,fitted,outlier,residual
    #[arg(long)]
    out: PathBuf,
    /// CSV of query points with columns x1..xd
    #[arg(long, requires = "predictions")]
    predict: Option<PathBuf>,
    /// Output CSV with the predictions at the query points
    #[arg(long, requires = "predict")]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Sinc1d,
    Lattice2d,
    Stable1d,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Sinc1d => Protocol::Sinc1d,
            ProtocolArg::Lattice2d => Protocol::Lattice2d,
            ProtocolArg::Stable1d => Protocol::Stable1d,
        }
    }
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    /// Gaussian inlier noise level [default: 20 for sinc1d]
    #[arg(long, conflicts_with_all = ["noise_std", "stable_alpha"])]
    snr_db: Option<f64>,
    /// Gaussian inlier noise standard deviation [default: 3 for lattice2d]
    #[arg(long, conflicts_with = "stable_alpha")]
    noise_std: Option<f64>,
    /// Characteristic exponent of symmetric alpha-stable inlier noise (required for stable1d)
    #[arg(long)]
    stable_alpha: Option<f64>,
    /// Scale of the alpha-stable noise
    #[arg(long, default_value_t = 1.0, requires = "stable_alpha")]
    stable_gamma: f64,
    /// Fraction of training samples hit by impulses [default: 0.05, 0 for stable1d]
    #[arg(long)]
    outlier_frac: Option<f64>,
    /// Impulse magnitude [default: 15 for 1-D protocols, 40 for lattice2d]
    #[arg(long)]
    outlier_mag: Option<f64>,
    /// [default: 0.2 for 1-D protocols, 0.15 for lattice2d]
    #[arg(long)]
    lambda: Option<f64>,
    /// [default: 10 for 1-D protocols, 46 for lattice2d]
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Base seed; trial t uses seed + t
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Aggregate table (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial CSV
    #[arg(long)]
    trials_out: Option<PathBuf>,
    /// Disable the heavier penalty on the boundary coefficients of 1-D fits
    #[arg(long)]
    no_border_boost: bool,
    /// Write zero for all timing columns
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Comma-separated impulse magnitudes
    #[arg(long, value_delimiter = ',', default_values_t = [100.0, 300.0, 600.0, 900.0])]
    magnitudes: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SWEEP_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = SWEEP_EPSILON)]
    epsilon: f64,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorruptImageArgs {
    /// Clean PGM image
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Gaussian noise level; no Gaussian noise when omitted
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    impulse_frac: f64,
    #[arg(long, default_value_t = 100.0)]
    impulse_mag: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    /// Noisy PGM image
    #[arg(long = "in")]
    input: PathBuf,
    /// Denoised image
    #[arg(long)]
    out: PathBuf,
    /// Magnitudes of the detected impulses, as a PGM
    #[arg(long)]
    outliers: Option<PathBuf>,
    /// Input with the detected impulses subtracted
    #[arg(long)]
    impulse_removed: Option<PathBuf>,
    /// Per-region JSON report
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Region side
    #[arg(long, default_value_t = 12)]
    roi: usize,
    /// Kept core side
    #[arg(long, default_value_t = 8)]
    core: usize,
    /// Kernel width on the unit-square region lattice
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    /// Base penalty
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
    /// Upper bound on the stopping threshold
    #[arg(long, default_value_t = 40.0)]
    e0: f64,
}

#[derive(Debug, Args)]
struct PsnrArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

struct Failure {
    category: &'static str,
    message: String,
}

impl Failure {
    fn argument(message: impl Into<String>) -> Self {
        Self { category: "argument", message: message.into() }
    }

    fn format(message: impl Into<String>) -> Self {
        Self { category: "format", message: message.into() }
    }

    fn exit_code(&self) -> u8 {
        if self.category == "argument" {
            2
        } else {
            1
        }
    }
}

impl From<kgard::Error> for Failure {
    fn from(e: kgard::Error) -> Self {
        Self { category: e.category(), message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self { category: "io", message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_at(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure { category: "io", message: format!("{}: {e}", path.display()) }
}

fn load_image(path: &Path) -> CliResult<GrayImage> {
    load_pgm(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_at(path))
}

fn write_to(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> CliResult) -> CliResult {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush().map_err(io_at(p))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush().map_err(Failure::from)
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> CliResult<Table> {
    let file = File::open(path).map_err(io_at(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let bad = |e: csv::Error| Failure::format(format!("{}: {e}", path.display()));
    let header: Vec<String> = reader.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(bad)?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::format(format!("{}:{line}: {e}", path.display())))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Failure::format(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn inputs(&self, path: &Path) -> CliResult<PointSet<f64>> {
        let cols: Vec<usize> = (1..).map_while(|d| self.column(&format!("x{d}"))).collect();
        if cols.is_empty() {
            return Err(Failure::format(format!("{}: missing column x1", path.display())));
        }
        let coords = self.rows.iter().flat_map(|r| cols.iter().map(|&c| r[c])).collect();
        Ok(PointSet::from_flat(cols.len(), coords)?)
    }
}

fn regress(args: &RegressArgs) -> CliResult {
    let table = read_table(&args.input)?;
    let inputs = table.inputs(&args.input)?;
    let y_col =
        table.column("y").ok_or_else(|| Failure::format(format!("{}: missing column y", args.input.display())))?;
    let targets = DVector::from_iterator(table.rows.len(), table.rows.iter().map(|r| r[y_col]));
    let data = Dataset::new(inputs, targets)?;
    let params = KernelParams::new(args.sigma)?;
    let mut cfg = KgardConfig::new(args.lambda, args.epsilon)
        .with_regularizer(match args.regularizer {
            RegularizerArg::Coefficient => Regularizer::CoefficientNorm,
            RegularizerArg::Rkhs => Regularizer::RkhsNorm,
        })
        .with_stop_norm(match args.stop_norm {
            StopNormArg::L2 => StopNorm::L2,
            StopNormArg::Linf => StopNorm::Linf,
        });
    if let Some(cap) = args.max_selections {
        cfg = cfg.with_max_selections(cap);
    }
    let sol = kgard_fit(&data, &params, &cfg)?;
    let n = data.len();
    let outliers = sol.outlier_vector(n);
    let fitted = &data.targets - &outliers - &sol.residual;
    write_to(Some(&args.out), |w| {
        writeln!(w, "index,fitted,outlier,residual")?;
        for i in 0..n {
            writeln!(w, "{i},{},{},{}", fitted[i], outliers[i], sol.residual[i])?;
        }
        Ok(())
    })?;
    if let (Some(query_path), Some(pred_path)) = (&args.predict, &args.predictions) {
        let queries = read_table(query_path)?.inputs(query_path)?;
        let pred = sol.predict(&data.inputs, &queries, &params)?;
        write_to(Some(pred_path), |w| {
            writeln!(w, "index,prediction")?;
            for (i, v) in pred.iter().enumerate() {
                writeln!(w, "{i},{v}")?;
            }
            Ok(())
        })?;
    }
    eprintln!("{} outliers selected in {} iterations", sol.support().len(), sol.iterations);
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> CliResult {
    let protocol = Protocol::from(args.protocol);
    let lattice = protocol == Protocol::Lattice2d;
    let inlier = if let Some(snr_db) = args.snr_db {
        InlierNoise::Gaussian { snr_db }
    } else if let Some(std) = args.noise_std {
        InlierNoise::GaussianStd { std }
    } else if let Some(alpha) = args.stable_alpha {
        InlierNoise::Stable(StableParams::new(alpha, args.stable_gamma)?)
    } else {
        match protocol {
            Protocol::Sinc1d => InlierNoise::Gaussian { snr_db: 20.0 },
            Protocol::Lattice2d => InlierNoise::GaussianStd { std: 3.0 },
            Protocol::Stable1d => return Err(Failure::argument("stable1d requires --stable-alpha")),
        }
    };
    let fraction = args.outlier_frac.unwrap_or(if protocol == Protocol::Stable1d { 0.0 } else { 0.05 });
    let magnitude = args.outlier_mag.unwrap_or(if lattice { 40.0 } else { 15.0 });
    let lambda = args.lambda.unwrap_or(if lattice { 0.15 } else { 0.2 });
    let epsilon = args.epsilon.unwrap_or(if lattice { 46.0 } else { 10.0 });
    let noise = NoiseSpec::new(inlier, fraction, magnitude, args.seed)?;
    let mut cfg = ExperimentConfig::new(protocol, noise, KgardConfig::new(lambda, epsilon), args.trials, args.seed);
    if args.no_border_boost {
        cfg.border_boost = false;
    }
    let report = run_monte_carlo(&cfg)?;
    let timing = !args.no_timing;
    if let Some(p) = &args.trials_out {
        write_to(Some(p), |w| Ok(write_trials_csv(w, &report.trials, timing)?))?;
    }
    write_to(args.out.as_deref(), |w| Ok(write_aggregate_csv(w, &report, timing)?))?;
    if report.aggregate.failures > 0 {
        eprintln!("{} of {} trials failed", report.aggregate.failures, report.trials.len());
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> CliResult {
    let mut cfg = SweepConfig::new(args.magnitudes.clone(), args.fraction, args.trials, args.seed);
    cfg.lambda = args.lambda;
    cfg.epsilon = args.epsilon;
    let rows = sweep_outlier_magnitude(&cfg)?;
    write_to(args.out.as_deref(), |w| Ok(write_sweep_csv(w, &rows)?))
}

fn corrupt(args: &CorruptImageArgs) -> CliResult {
    let image = load_image(&args.input)?;
    let c = corrupt_image(&image, args.snr_db, args.impulse_frac, args.impulse_mag, args.seed)?;
    save_pgm(&args.out, &c.image)?;
    Ok(())
}

fn denoise(args: &DenoiseArgs) -> CliResult {
    let cfg =
        RoiConfig { roi_size: args.roi, core_size: args.core, sigma: args.sigma, lambda0: args.lambda0, e0: args.e0 };
    cfg.validate()?;
    let image = load_image(&args.input)?;
    let out = denoise_image(&image, &cfg)?;
    save_pgm(&args.out, &out.denoised)?;
    if let Some(p) = &args.outliers {
        let mut mags = out.outlier_map.clone();
        mags.pixels_mut().iter_mut().for_each(|v| *v = v.abs());
        save_pgm(p, &mags)?;
    }
    if let Some(p) = &args.impulse_removed {
        save_pgm(p, &out.impulse_removed)?;
    }
    if let Some(p) = &args.diagnostics {
        let mut w = create(p)?;
        out.diagnostics.write_json(&mut w)?;
        writeln!(w).and_then(|_| w.flush()).map_err(io_at(p))?;
    }
    if out.diagnostics.failures > 0 {
        eprintln!("{} regions passed through after solver errors", out.diagnostics.failures);
    }
    Ok(())
}

fn psnr_cmd(args: &PsnrArgs) -> CliResult {
    let a = load_image(&args.a)?;
    let b = load_image(&args.b)?;
    let v = psnr(&a, &b)?;
    if v.is_infinite() {
        println!("inf");
    } else {
        println!("{v:.4}");
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Regress(a) => regress(a),
        Command::Experiment(a) => experiment(a),
        Command::Sweep(a) => sweep(a),
        Command::CorruptImage(a) => corrupt(a),
        Command::Denoise(a) => denoise(a),
        Command::Psnr(a) => psnr_cmd(a),
    }
}

fn run(cli: Cli) -> CliResult {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::argument("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure { category: "io", message: e.to_string() })?;
    pool.install(|| dispatch(&cli))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            eprint!("error: argument: {text}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.category, f.message);
            ExitCode::from(f.exit_code())
        }
    }
}
