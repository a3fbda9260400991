use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dairstega::allocation::{validate_constraints, AllocationKind, AllocationSpec};
use dairstega::baselines::{embed_flc, embed_hc, extract_flc, extract_hc, FlcConfig, HcConfig};
use dairstega::batch::{run_bench, BENCH_CSV_HEADER};
use dairstega::bitstream::{BitCursor, FramedBitstream};
use dairstega::config::{ConfigError, RunConfig};
use dairstega::provider::RemoteProvider;
use dairstega::{
    embed, extract, measure_bpw, CodecConfig, CodecError, DistributionProvider, NGramModel,
    StegoDocument,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_PROVIDER: u8 = 3;
const EXIT_CODEC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "dairstega",
    about = "Interval-allocation linguistic steganography: hide bitstreams in generated text"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    Json,
    Text,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Embedder {
    Dair,
    Flc,
    Hc,
}

#[derive(Subcommand)]
enum Command {
    /// Train the built-in n-gram model on a corpus (one document per line)
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: u8,
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a secret file into generated text
    Embed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        secret: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Embedder::Dair)]
        embedder: Embedder,
        /// FLC bits per step (only with --embedder flc)
        #[arg(long, default_value_t = 1)]
        flc_bits: u32,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        format: OutputFormat,
    },
    /// Recover the secret from a stego document
    Extract {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// stego document: .json (full metadata) or .txt (text only)
        #[arg(long)]
        stego: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Embedder::Dair)]
        embedder: Embedder,
        #[arg(long, default_value_t = 1)]
        flc_bits: u32,
    },
    /// Check an allocation function against the growth constraints (advisory)
    Validate {
        /// one of: linear, sqrt, exp, log, condensed
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 8)]
        alpha: u32,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 2.0)]
        b: f64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        #[arg(long, default_value_t = 200)]
        grid_points: usize,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        format: OutputFormat,
    },
    /// Run the benchmark matrix and emit per-cell capacity/quality metrics
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Provider(String),
    Codec(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Provider(_) => EXIT_PROVIDER,
            CliError::Codec(_) => EXIT_CODEC,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Provider(m) | CliError::Codec(m) | CliError::Other(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<dairstega::provider::ProviderError> for CliError {
    fn from(e: dairstega::provider::ProviderError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Provider(p) => CliError::Provider(p.to_string()),
            other => CliError::Codec(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

fn load_provider(
    run: &RunConfig,
    model_flag: Option<&Path>,
) -> Result<Box<dyn DistributionProvider>, CliError> {
    let model_path = model_flag.or(run.provider.model_path.as_deref());
    let endpoint = std::env::var("DAIRSTEGA_REMOTE")
        .ok()
        .or_else(|| run.provider.endpoint.clone());
    match endpoint {
        Some(ep) => {
            let model_path = model_path.ok_or_else(|| {
                CliError::Config("remote provider still needs a model file for the vocabulary".into())
            })?;
            let model = NGramModel::load(model_path)?;
            let id = run
                .provider
                .provider_id
                .clone()
                .ok_or_else(|| CliError::Config("remote provider requires provider_id".into()))?;
            let top_n = run.provider.top_n.max(run.codec.top_k + 8);
            let remote =
                RemoteProvider::connect(&ep, &id, model.vocabulary().clone(), top_n)?;
            Ok(Box::new(remote))
        }
        None => {
            let model_path = model_path
                .ok_or_else(|| CliError::Config("no model_path or endpoint configured".into()))?;
            Ok(Box::new(NGramModel::load(model_path)?))
        }
    }
}

fn effective_provider_id(run: &RunConfig, provider: &dyn DistributionProvider) -> String {
    run.provider.provider_id.clone().unwrap_or_else(|| provider.provider_id())
}

fn write_doc(
    out: &Path,
    doc: &StegoDocument,
    format: OutputFormat,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    match format {
        OutputFormat::Text => {
            std::fs::write(out.join("stego.txt"), format!("{}\n", doc.text))?;
        }
        _ => {
            std::fs::write(
                out.join("stego.json"),
                serde_json::to_string_pretty(doc).expect("document serializes") + "\n",
            )?;
            std::fs::write(out.join("stego.txt"), format!("{}\n", doc.text))?;
        }
    }
    Ok(())
}

fn read_doc(
    stego: &Path,
    provider: &dyn DistributionProvider,
    digest: String,
) -> Result<StegoDocument, CliError> {
    let raw = std::fs::read_to_string(stego)?;
    if stego.extension().map(|e| e == "json").unwrap_or(false) {
        serde_json::from_str(&raw).map_err(|e| CliError::Config(format!("bad stego json: {e}")))
    } else {
        // text-only: re-tokenize under the provider's vocabulary; the digest is
        // assumed to match the supplied config (it traveled out of band)
        let token_ids = provider.vocabulary().encode_line(raw.trim_end());
        Ok(StegoDocument {
            config_digest: digest,
            embedder: "unknown".to_string(),
            text: raw.trim_end().to_string(),
            steps: token_ids.len(),
            token_ids,
            embedded_bits: 0,
        })
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { corpus, order, smoothing, out } => {
            if !(1..=5).contains(&order) {
                return Err(CliError::Config(format!("order {order} outside 1..=5")));
            }
            let text = std::fs::read_to_string(&corpus)?;
            let model = NGramModel::train(&text, order, smoothing)?;
            model.save(&out)?;
            println!(
                "trained {} ({} tokens in vocabulary) -> {}",
                model.provider_id(),
                model.vocabulary().len(),
                out.display()
            );
            Ok(())
        }
        Command::Embed { config, model, secret, out, embedder, flc_bits, format } => {
            if !(1..=8).contains(&flc_bits) {
                return Err(CliError::Config(format!("flc_bits {flc_bits} outside 1..=8")));
            }
            let run_cfg = RunConfig::load(&config)?;
            let provider = load_provider(&run_cfg, model.as_deref())?;
            let codec_cfg: CodecConfig =
                run_cfg.codec_config(effective_provider_id(&run_cfg, provider.as_ref()))?;
            let payload = std::fs::read(&secret)?;
            let stream = FramedBitstream::frame(&payload).map_err(CodecError::from)?;
            let mut cursor = BitCursor::new(stream);
            let doc = match embedder {
                Embedder::Dair => embed(provider.as_ref(), &codec_cfg, &mut cursor)?,
                Embedder::Flc => {
                    let cfg = FlcConfig::new(codec_cfg, flc_bits);
                    embed_flc(provider.as_ref(), &cfg, &mut cursor)?
                }
                Embedder::Hc => {
                    let cfg = HcConfig { base: codec_cfg };
                    embed_hc(provider.as_ref(), &cfg, &mut cursor)?
                }
            };
            write_doc(&out, &doc, format)?;
            println!(
                "embedded {} bits over {} tokens ({:.3} bits/word) -> {}",
                doc.embedded_bits,
                doc.steps,
                measure_bpw(&doc),
                out.display()
            );
            Ok(())
        }
        Command::Extract { config, model, stego, out, embedder, flc_bits } => {
            if !(1..=8).contains(&flc_bits) {
                return Err(CliError::Config(format!("flc_bits {flc_bits} outside 1..=8")));
            }
            let run_cfg = RunConfig::load(&config)?;
            let provider = load_provider(&run_cfg, model.as_deref())?;
            let codec_cfg: CodecConfig =
                run_cfg.codec_config(effective_provider_id(&run_cfg, provider.as_ref()))?;
            let payload = match embedder {
                Embedder::Dair => {
                    let doc = read_doc(&stego, provider.as_ref(), codec_cfg.digest())?;
                    extract(provider.as_ref(), &codec_cfg, &doc)?
                }
                Embedder::Flc => {
                    let cfg = FlcConfig::new(codec_cfg, flc_bits);
                    let doc = read_doc(&stego, provider.as_ref(), cfg.digest())?;
                    extract_flc(provider.as_ref(), &cfg, &doc)?
                }
                Embedder::Hc => {
                    let cfg = HcConfig { base: codec_cfg };
                    let doc = read_doc(&stego, provider.as_ref(), cfg.digest())?;
                    extract_hc(provider.as_ref(), &cfg, &doc)?
                }
            };
            std::fs::create_dir_all(&out)?;
            let dest = out.join("secret.bin");
            std::fs::write(&dest, &payload)?;
            println!("recovered {} bytes -> {}", payload.len(), dest.display());
            Ok(())
        }
        Command::Validate { kind, alpha, beta, b, eps, delta, c, grid_points, format } => {
            let kind: AllocationKind = kind.parse().map_err(CliError::Config)?;
            let spec = AllocationSpec::new(kind, alpha, beta, b)
                .map_err(|e| CliError::Config(e.to_string()))?;
            if !(eps > 0.0 && eps < 1.0 - delta) || grid_points < 10 {
                return Err(CliError::Config(
                    "need 0 < eps < 1 - delta and grid_points >= 10".into(),
                ));
            }
            let report = validate_constraints(&spec, eps, delta, c, grid_points);
            match format {
                OutputFormat::Text => {
                    for (name, v) in [
                        ("constraint1", &report.constraint1),
                        ("constraint2", &report.constraint2),
                        ("constraint3", &report.constraint3),
                    ] {
                        match (&v.pass, v.first_violation_x) {
                            (true, _) => println!("{name}: pass"),
                            (false, Some(x)) => println!("{name}: FAIL (first violation near x = {x:.4})"),
                            (false, None) => println!("{name}: FAIL"),
                        }
                    }
                }
                _ => println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                ),
            }
            Ok(())
        }
        Command::Bench { config, model, out, seed, format } => {
            let run_cfg = RunConfig::load(&config)?;
            let bench = run_cfg
                .bench
                .clone()
                .ok_or_else(|| CliError::Config("config has no bench section".into()))?;
            let provider = load_provider(&run_cfg, model.as_deref())?;
            let codec_cfg =
                run_cfg.codec_config(effective_provider_id(&run_cfg, provider.as_ref()))?;
            let seed = seed.unwrap_or(run_cfg.seed);
            let rows = run_bench(
                provider.as_ref(),
                &codec_cfg,
                &bench.matrix,
                &bench.flc_bits,
                bench.include_hc,
                bench.n_docs,
                bench.payload_bytes,
                seed,
            )?;
            std::fs::create_dir_all(&out)?;
            let csv: String = std::iter::once(BENCH_CSV_HEADER.to_string())
                .chain(rows.iter().map(|r| r.to_csv_line()))
                .collect::<Vec<_>>()
                .join("\n")
                + "\n";
            std::fs::write(out.join("bench.csv"), &csv)?;
            if matches!(format, OutputFormat::Json) {
                std::fs::write(
                    out.join("bench.json"),
                    serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
                )?;
            }
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
