mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::SeedableRng;

use shapemark::bench::{run_sweep, SweepConfig};
use shapemark::calibration::{calibrate, NullSource, DEFAULT_QUANTILE};
use shapemark::codec::payload_len;
use shapemark::{
    apply_channel, canonical_codebook, ChannelSpec, Codebook, Error, KeyedTemplate, LatentRecord, Nonce, Payload,
    SecretKey, TemplateParams, Verifier, REFERENCE_TAU,
};

const EXIT_NOT_DETECTED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_IO: u8 = 4;

const DEFAULT_PARAMS: &str = "16384,4,64";

#[derive(Parser, Debug)]
#[command(name = "shapemark", version, about = "Structural watermarks for Gaussian diffusion latents")]
struct Cli {
    /// Flat key=value file supplying defaults for any long option
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NullArg {
    Random,
    Wrongkey,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a fresh 32-byte secret key as hex
    Keygen {
        /// Destination file; prints to stdout when omitted
        #[arg(long, env = "SHAPEMARK_OUT")]
        out: Option<PathBuf>,
        /// Overwrite an existing file
        #[arg(long)]
        force: bool,
    },
    /// Embed a payload into the key's canonical latent
    #[command(group(ArgGroup::new("payload").required(true).args(["payload_hex", "payload_random"])))]
    #[command(group(ArgGroup::new("nonce").required(true).args(["nonce_hex", "nonce_random"])))]
    Embed {
        #[arg(long, env = "SHAPEMARK_KEY")]
        key: PathBuf,
        #[arg(long, env = "SHAPEMARK_PAYLOAD_HEX")]
        payload_hex: Option<String>,
        #[arg(long, env = "SHAPEMARK_PAYLOAD_RANDOM")]
        payload_random: bool,
        #[arg(long, env = "SHAPEMARK_NONCE_HEX")]
        nonce_hex: Option<String>,
        #[arg(long, env = "SHAPEMARK_NONCE_RANDOM")]
        nonce_random: bool,
        /// Template parameters as D,Q,b
        #[arg(long, env = "SHAPEMARK_PARAMS", default_value = DEFAULT_PARAMS)]
        params: String,
        /// Codebook file, one comma-separated 1-based codeword per line
        #[arg(long, env = "SHAPEMARK_CODEBOOK")]
        codebook: Option<PathBuf>,
        /// Seed for --payload-random/--nonce-random; OS entropy when omitted
        #[arg(long, env = "SHAPEMARK_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "SHAPEMARK_OUT")]
        out: PathBuf,
    },
    /// Detect and decode a watermark; exits 0 when detected, 1 otherwise
    Detect {
        #[arg(long, env = "SHAPEMARK_KEY")]
        key: PathBuf,
        #[arg(long = "in", env = "SHAPEMARK_IN")]
        input: PathBuf,
        #[arg(long, env = "SHAPEMARK_CLAIMED_PAYLOAD_HEX")]
        claimed_payload_hex: Option<String>,
        #[arg(long, env = "SHAPEMARK_TAU", default_value_t = REFERENCE_TAU)]
        tau: f64,
        #[arg(long, env = "SHAPEMARK_CODEBOOK")]
        codebook: Option<PathBuf>,
        /// Include the per-group score matrix in the JSON report
        #[arg(long, env = "SHAPEMARK_SCORES")]
        scores: bool,
        #[arg(long, env = "SHAPEMARK_JSON")]
        json: bool,
    },
    /// Pass a latent file through a simulated distortion channel
    Simulate {
        /// Channel spec, e.g. gauss:0.3 or drop:0.1+scale:0.9
        #[arg(long, env = "SHAPEMARK_CHANNEL")]
        channel: String,
        #[arg(long = "in", env = "SHAPEMARK_IN")]
        input: PathBuf,
        #[arg(long, env = "SHAPEMARK_OUT")]
        out: PathBuf,
        #[arg(long, env = "SHAPEMARK_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Fit the null score tail and solve for a detection threshold
    Calibrate {
        #[arg(long, env = "SHAPEMARK_KEY")]
        key: PathBuf,
        #[arg(long, env = "SHAPEMARK_NULL", value_enum, default_value = "random")]
        null: NullArg,
        #[arg(long, env = "SHAPEMARK_N", default_value_t = 10_000)]
        n: usize,
        #[arg(long, env = "SHAPEMARK_ALPHA", default_value_t = 1e-6)]
        alpha: f64,
        #[arg(long, env = "SHAPEMARK_Q", default_value_t = DEFAULT_QUANTILE)]
        q: f64,
        #[arg(long, env = "SHAPEMARK_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "SHAPEMARK_PARAMS", default_value = DEFAULT_PARAMS)]
        params: String,
        #[arg(long, env = "SHAPEMARK_CODEBOOK")]
        codebook: Option<PathBuf>,
        /// Score nulls in claimed mode against this payload
        #[arg(long, env = "SHAPEMARK_CLAIMED_PAYLOAD_HEX")]
        claimed_payload_hex: Option<String>,
        /// Write the raw null scores, one per line
        #[arg(long, env = "SHAPEMARK_DUMP_SCORES")]
        dump_scores: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep and emit CSV
    Bench {
        #[arg(long, env = "SHAPEMARK_SWEEP_CONFIG")]
        sweep_config: PathBuf,
        /// Overrides the seed in the sweep file
        #[arg(long, env = "SHAPEMARK_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "SHAPEMARK_OUT")]
        out: Option<PathBuf>,
        /// Also write gnuplot data here
        #[arg(long, env = "SHAPEMARK_GNUPLOT")]
        gnuplot: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Data(_) | Error::Format(_) | Error::Calibration(_) | Error::NotACodeword(_) => EXIT_DATA,
        Error::Parameter(_) | Error::Payload(_) | Error::Index { .. } | Error::EmptyRequest(_) => EXIT_USAGE,
    }
}

fn parse_params(text: &str) -> shapemark::Result<TemplateParams> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let nums = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Error::Parameter(format!("params must be D,Q,b; got {text:?}")))?;
    match nums[..] {
        [d, q, b] => TemplateParams::new(d, q, b),
        _ => Err(Error::Parameter(format!("params must be D,Q,b; got {text:?}"))),
    }
}

fn load_codebook(path: Option<&Path>) -> shapemark::Result<Codebook> {
    match path {
        Some(p) => Codebook::parse(&fs::read_to_string(p)?),
        None => Ok(canonical_codebook()),
    }
}

fn seeded_rng(seed: Option<u64>) -> StdRng {
    match seed {
        Some(s) => StdRng::seed_from_u64(s),
        None => StdRng::from_os_rng(),
    }
}

fn write_new(path: &Path, contents: &[u8], force: bool) -> shapemark::Result<()> {
    if !force && path.exists() {
        return Err(Error::Parameter(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    fs::write(path, contents)?;
    Ok(())
}

fn read_record(path: &Path) -> shapemark::Result<LatentRecord> {
    LatentRecord::decode(&fs::read(path)?)
}

fn run(cli: Cli) -> shapemark::Result<u8> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Keygen { out, force } => {
            let key = SecretKey::random(&mut StdRng::from_os_rng());
            match out {
                Some(path) => write_new(&path, format!("{}\n", key.to_hex()).as_bytes(), force)?,
                None => writeln!(stdout, "{}", key.to_hex())?,
            }
            Ok(0)
        }
        Command::Embed {
            key,
            payload_hex,
            payload_random: _,
            nonce_hex,
            nonce_random: _,
            params,
            codebook,
            seed,
            out,
        } => {
            let params = parse_params(&params)?;
            let cb = load_codebook(codebook.as_deref())?;
            let len = payload_len(&params, &cb);
            let payload_given = payload_hex.is_some();
            let pre_payload = payload_hex.as_deref().map(|h| Payload::from_hex(h, len)).transpose()?;
            let pre_nonce = nonce_hex.as_deref().map(Nonce::from_hex).transpose()?;
            let key = SecretKey::read_file(&key)?;

            let mut rng = seeded_rng(seed);
            let payload = pre_payload.unwrap_or_else(|| Payload::random(&mut rng, len));
            let nonce = pre_nonce.unwrap_or_else(|| Nonce::random(&mut rng));
            let w = KeyedTemplate::new(&key, params)?.embed(nonce, &payload, &cb)?;
            LatentRecord::from_watermarked(&w, cb.k()).write_to(fs::File::create(&out)?)?;
            let mut sidecar = out.into_os_string();
            sidecar.push(".nonce");
            fs::write(&sidecar, format!("{}\n", nonce.to_hex()))?;
            if !payload_given {
                writeln!(stdout, "payload {}", payload.to_hex())?;
            }
            Ok(0)
        }
        Command::Detect {
            key,
            input,
            claimed_payload_hex,
            tau,
            codebook,
            scores,
            json,
        } => {
            if !tau.is_finite() {
                return Err(Error::Parameter(format!("tau must be finite, got {tau}")));
            }
            let cb = load_codebook(codebook.as_deref())?;
            let key = SecretKey::read_file(&key)?;
            let rec = read_record(&input)?;
            if rec.k != cb.k() {
                return Err(Error::Data(format!(
                    "file was embedded with {}-bit chunks but the codebook carries {}",
                    rec.k,
                    cb.k()
                )));
            }
            let verifier = Verifier::new(&key, rec.params, cb)?;
            let claimed = claimed_payload_hex
                .as_deref()
                .map(|h| Payload::from_hex(h, verifier.payload_len()))
                .transpose()?;
            let report = verifier.detect_with(&rec.latent, rec.nonce, claimed.as_ref(), tau, scores)?;
            if json {
                let text = serde_json::to_string_pretty(&report.record()).expect("report serializes");
                writeln!(stdout, "{text}")?;
            } else {
                writeln!(stdout, "decision  {}", if report.decision { "detected" } else { "not detected" })?;
                writeln!(stdout, "statistic {:.6} (tau {})", report.statistic, report.threshold)?;
                writeln!(stdout, "payload   {}", report.decoded_payload.to_hex())?;
                if let Some(acc) = report.bit_accuracy {
                    writeln!(stdout, "bit_acc   {acc:.4}")?;
                }
            }
            Ok(if report.decision { 0 } else { EXIT_NOT_DETECTED })
        }
        Command::Simulate {
            channel,
            input,
            out,
            seed,
        } => {
            let spec = ChannelSpec::parse(&channel, seed)?;
            let mut rec = read_record(&input)?;
            rec.latent = apply_channel(&rec.latent, &spec)?;
            rec.write_to(fs::File::create(&out)?)?;
            Ok(0)
        }
        Command::Calibrate {
            key,
            null,
            n,
            alpha,
            q,
            seed,
            params,
            codebook,
            claimed_payload_hex,
            dump_scores,
        } => {
            let params = parse_params(&params)?;
            let cb = load_codebook(codebook.as_deref())?;
            let len = payload_len(&params, &cb);
            let claimed = claimed_payload_hex.as_deref().map(|h| Payload::from_hex(h, len)).transpose()?;
            if n < shapemark::calibration::MIN_NULL_SAMPLES {
                return Err(Error::Parameter(format!(
                    "calibration needs --n >= {}, got {n}",
                    shapemark::calibration::MIN_NULL_SAMPLES
                )));
            }
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            let key = SecretKey::read_file(&key)?;
            let source = match null {
                NullArg::Random => NullSource::Random,
                NullArg::Wrongkey => NullSource::WrongKey,
            };
            let verifier = Verifier::new(&key, params, cb)?;
            let (report, scores) = calibrate(&verifier, source, n, alpha, q, seed, claimed.as_ref())?;
            if let Some(path) = dump_scores {
                let body: String = scores.iter().map(|s| format!("{s}\n")).collect();
                fs::write(path, body)?;
            }
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            writeln!(stdout, "{text}")?;
            Ok(0)
        }
        Command::Bench {
            sweep_config,
            seed,
            out,
            gnuplot,
        } => {
            let mut cfg = SweepConfig::parse(&fs::read_to_string(&sweep_config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let table = run_sweep(&cfg)?;
            match out {
                Some(path) => fs::write(path, table.to_csv())?,
                None => write!(stdout, "{}", table.to_csv())?,
            }
            if let Some(path) = gnuplot {
                fs::write(path, table.to_gnuplot())?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if let Some(path) = config::find_path(&args) {
        if let Err(msg) = config::apply(Path::new(&path)) {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
