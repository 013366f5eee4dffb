//! `isac` command-line front end: one trial, offline training, SNR sweeps.
//!
//! Exit codes: 0 success, 1 usage or configuration problem, 2 I/O failure
//! while writing results.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isac_core::harness::{sweep, FixedSceneSampler, Method, SweepSpec, DEFAULT_LAYERS};
use isac_core::report::{csv_string, format_g6};
use isac_core::rng::rng_for;
use isac_core::unfolded::{train_with_progress, NetworkParams, ParamStore, TrainOptions};
use isac_core::Scene;

mod snr;

#[derive(Parser)]
#[command(name = "isac", version, about = "Bistatic OFDM sensing and communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scene file (system configuration plus targets).
    #[arg(long)]
    config: PathBuf,
    /// Seed of every random draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial of the unfolded receiver and write a one-row CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trained parameter file; untrained defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// SNR in dB; overrides the scene file.
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
        /// Depth of the untrained network.
        #[arg(long, default_value_t = DEFAULT_LAYERS)]
        layers: usize,
    },
    /// Train one parameter set per SNR, highest SNR first, each warm
    /// started from the previous one.
    Train {
        #[command(flatten)]
        common: Common,
        /// Single SNR or `lo:hi:step` in dB; the scene's SNR when omitted.
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<String>,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Size of the fixed validation set used for model selection.
        #[arg(long, default_value_t = 16)]
        validation: usize,
        #[arg(long, default_value_t = 0.02)]
        step: f64,
        /// Weight of SER against the sensing errors in the loss.
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_LAYERS)]
        layers: usize,
    },
    /// Average every method over seeded trials at each SNR.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `lo:hi:step` in dB, or a single value.
        #[arg(long, allow_hyphen_values = true)]
        snr: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Comma-separated subset of perfect, isac-net, alg3, conventional, 2d-dft.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Depth of the network at SNRs the parameter file does not cover.
        #[arg(long, default_value_t = DEFAULT_LAYERS)]
        layers: usize,
    },
}

enum Failure {
    Usage(String),
    Io(String),
}

impl From<isac_core::Error> for Failure {
    fn from(e: isac_core::Error) -> Self {
        match e {
            isac_core::Error::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Simulate { common, params, snr, layers } => simulate(&common, params.as_deref(), snr, layers),
        Command::Train { common, snr, epochs, batch, validation, step, lambda, layers } => {
            let options = TrainOptions { epochs, batch_size: batch, validation_size: validation, step_size: step, lambda, ..Default::default() };
            train(&common, snr.as_deref(), &options, layers)
        }
        Command::Sweep { common, snr, trials, methods, params, layers } => {
            run_sweep(&common, &snr, trials, methods.as_deref(), params.as_deref(), layers)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_scene(path: &Path) -> Result<Scene, Failure> {
    Scene::from_file(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn load_store(path: &Path) -> Result<ParamStore, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    ParamStore::from_text(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_out(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn parse_methods(names: Option<&[String]>) -> Result<Vec<Method>, Failure> {
    match names {
        None => Ok(Method::ALL.to_vec()),
        Some(names) => names.iter().map(|n| n.trim().parse::<Method>().map_err(Failure::from)).collect(),
    }
}

fn simulate(common: &Common, params: Option<&Path>, snr: Option<f64>, layers: usize) -> Outcome {
    let scene = load_scene(&common.config)?;
    let snr = snr.unwrap_or(scene.config.snr_db);
    let store = match params {
        Some(p) => load_store(p)?,
        None => ParamStore::default(),
    };
    let spec = SweepSpec {
        config: &scene.config,
        targets: &scene.targets,
        store: &store,
        snr_list: &[snr],
        trials: 1,
        methods: &[Method::IsacNet],
        base_seed: common.seed,
        default_layers: layers,
    };
    let rows = sweep(&spec)?;
    write_out(&common.out, &csv_string(&rows))?;
    let row = &rows[0];
    let mut out = std::io::stdout().lock();
    let _ = match store.lookup(snr) {
        Some(p) => writeln!(out, "parameters: {} layers trained at {} dB", p.depth(), p.snr_key_db),
        None => writeln!(out, "parameters: untrained defaults, {layers} layers"),
    };
    let _ = writeln!(out, "seed {} at {} dB: {} targets", common.seed, format_g6(snr), scene.targets.len());
    let _ = writeln!(out, "BER {}  SER {}", format_g6(row.ber), format_g6(row.ser));
    let _ = writeln!(
        out,
        "range NMSE {}  velocity NMSE {}  detected {}",
        format_g6(row.nmse_range),
        format_g6(row.nmse_velocity),
        format_g6(row.detected_mean)
    );
    for (k, l) in row.per_layer.iter().enumerate() {
        let _ = writeln!(out, "  layer {}: BER {}  range NMSE {}", k + 1, format_g6(l.ber), format_g6(l.nmse_range));
    }
    let _ = writeln!(out, "wrote {}", common.out.display());
    Ok(())
}

fn train(common: &Common, snr: Option<&str>, options: &TrainOptions, layers: usize) -> Outcome {
    let scene = load_scene(&common.config)?;
    let mut snrs = match snr {
        Some(s) => snr::parse(s).map_err(Failure::Usage)?,
        None => vec![scene.config.snr_db],
    };
    if layers == 0 {
        return Err(Failure::Usage("--layers must be at least 1".into()));
    }
    snrs.sort_by(|a, b| b.total_cmp(a));
    let mut store = ParamStore::default();
    let mut start = NetworkParams::untrained(layers, ParamStore::key_for(snrs[0]));
    let mut out = std::io::stdout().lock();
    for &snr in &snrs {
        start.snr_key_db = ParamStore::key_for(snr);
        let sampler = FixedSceneSampler { config: scene.config.with_snr(snr), targets: scene.targets.clone() };
        let mut rng = rng_for(common.seed, snr.to_bits());
        let report = train_with_progress(&start, &sampler, options, &mut rng, |epoch, best| {
            let _ = writeln!(out, "snr {} epoch {} loss {}", format_g6(snr), epoch + 1, format_g6(best));
        })?;
        start = report.params.clone();
        store.insert(report.params);
    }
    write_out(&common.out, &store.to_text())?;
    let _ = writeln!(out, "wrote {}", common.out.display());
    Ok(())
}

fn run_sweep(
    common: &Common,
    snr: &str,
    trials: usize,
    methods: Option<&[String]>,
    params: Option<&Path>,
    layers: usize,
) -> Outcome {
    let methods = parse_methods(methods)?;
    let snrs = snr::parse(snr).map_err(Failure::Usage)?;
    if trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let scene = load_scene(&common.config)?;
    let store = match params {
        Some(p) => load_store(p)?,
        None => ParamStore::default(),
    };
    let spec = SweepSpec {
        config: &scene.config,
        targets: &scene.targets,
        store: &store,
        snr_list: &snrs,
        trials,
        methods: &methods,
        base_seed: common.seed,
        default_layers: layers,
    };
    let rows = sweep(&spec)?;
    write_out(&common.out, &csv_string(&rows))?;
    println!("{} rows written to {}", rows.len(), common.out.display());
    Ok(())
}
