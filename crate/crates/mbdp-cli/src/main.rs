//! Command-line front end: process WAV files through a configured
//! pipeline, dump filterbank responses and compression curves, and run
//! analysis reports.
//!
//! Exit codes: 1 invalid config or options, 2 unreadable or unsupported
//! input audio, 3 output write failure. Every error prints a
//! machine-parsable first line of the form `<code>: <message>`.

mod wav;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use mbdp::analysis;
use mbdp::config;
use mbdp::filterbank::{log_grid, BandSplitter};
use mbdp::linear_to_db;
use mbdp::Pipeline;
use wav::WavAudio;

#[derive(Parser)]
#[command(
    name = "mbdp",
    version,
    about = "Multiband dynamics processing: M-band crossover, per-band compression and limiting, full-band limiter, and audio analysis"
)]
struct Cli {
    /// Seed for randomized operations. The current subcommands are fully
    /// deterministic; the flag is accepted for interface stability.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a WAV file through the configured pipeline, channel by
    /// channel with independent state.
    Process {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Select a preset volume step from the config before processing.
        #[arg(long)]
        volume_step: Option<i32>,
    },
    /// Write each band's magnitude/phase response and their sum over a
    /// log-spaced grid as CSV.
    FilterbankResponse {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write one band's static compression curve as CSV.
    Curve {
        #[arg(long)]
        config: PathBuf,
        /// Band index, 1-based.
        #[arg(long)]
        band: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Measure a WAV file; writes CSV or JSON to --output or stdout.
    Analyze {
        kind: AnalyzeKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Fundamental frequency in Hz (required for thd).
        #[arg(long)]
        f0: Option<f64>,
        /// Number of harmonics for thd (including the fundamental).
        #[arg(long, default_value_t = 10)]
        harmonics: usize,
        /// Analysis window for peaks, in ms.
        #[arg(long, default_value_t = 50.0)]
        window_ms: f64,
        /// Welch segment length for psd, in samples.
        #[arg(long, default_value_t = 8192)]
        segment: usize,
        /// Welch segment overlap fraction for psd.
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnalyzeKind {
    Par,
    Psd,
    Thd,
    Peaks,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl ToString) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.exit_code() == 0 {
                // --help / --version
                print!("{e}");
                std::process::exit(0);
            }
            let first = e
                .to_string()
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid usage")
                .to_string();
            eprintln!("1: {first}");
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(f) = run(cli.command) {
        eprintln!("{}: {}", f.code, f.message);
        std::process::exit(f.code);
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Process {
            config,
            input,
            output,
            volume_step,
        } => cmd_process(&config, &input, &output, volume_step),
        Command::FilterbankResponse { config, output } => cmd_filterbank_response(&config, &output),
        Command::Curve {
            config,
            band,
            output,
        } => cmd_curve(&config, band, &output),
        Command::Analyze {
            kind,
            input,
            output,
            format,
            f0,
            harmonics,
            window_ms,
            segment,
            overlap,
        } => cmd_analyze(
            kind,
            &input,
            output.as_deref(),
            format,
            f0,
            harmonics,
            window_ms,
            segment,
            overlap,
        ),
    }
}

fn read_input(path: &Path) -> Result<WavAudio, Failure> {
    WavAudio::read(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

const BLOCK: usize = 4096;

fn cmd_process(
    config_path: &Path,
    input: &Path,
    output: &Path,
    volume_step: Option<i32>,
) -> Result<(), Failure> {
    let cfg = config::load(config_path).map_err(|e| fail(1, e))?;
    let audio = read_input(input)?;
    if audio.sample_rate as f64 != cfg.sample_rate {
        return Err(fail(
            2,
            format!(
                "{}: sample rate mismatch: input is {} Hz but the config expects {} Hz",
                input.display(),
                audio.sample_rate,
                cfg.sample_rate
            ),
        ));
    }

    // Channels are independent streams; process them in parallel.
    let results: Vec<Result<(Vec<f64>, mbdp::pipeline::PipelineStats), Failure>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = audio
                .channels
                .iter()
                .map(|samples| {
                    let cfg = cfg.clone();
                    scope.spawn(move || {
                        let mut pipeline = Pipeline::new(cfg).map_err(|e| fail(1, e))?;
                        if let Some(step) = volume_step {
                            pipeline.set_volume_step(step).map_err(|e| fail(1, e))?;
                        }
                        pipeline.warm_up(BLOCK);
                        let mut out = vec![0.0; samples.len()];
                        for (i, chunk) in samples.chunks(BLOCK).enumerate() {
                            let start = i * BLOCK;
                            pipeline.process_into(chunk, &mut out[start..start + chunk.len()]);
                        }
                        Ok((out, pipeline.stats()))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

    let mut channels = Vec::with_capacity(results.len());
    let mut stats = Vec::with_capacity(results.len());
    for r in results {
        let (out, s) = r?;
        channels.push(out);
        stats.push(s);
    }

    let processed = WavAudio {
        sample_rate: audio.sample_rate,
        format: audio.format,
        channels,
    };
    processed
        .write(output)
        .map_err(|e| fail(3, format!("{}: {e}", output.display())))?;

    let latency = volume_step
        .map(|s| cfg.config_for_step(s).map(|c| c.reported_latency()))
        .transpose()
        .map_err(|e| fail(1, e))?
        .unwrap_or_else(|| cfg.reported_latency());
    println!(
        "processed {} frames x {} channels",
        audio.num_frames(),
        audio.num_channels()
    );
    println!("latency_samples: {latency}");
    for (ch, s) in stats.iter().enumerate() {
        for band in 0..s.compressor_min_gain.len() {
            println!(
                "channel {} band {}: compressor_min_gain_db={:.2} limiter_min_gain_db={:.2} limiter_clamped={}",
                ch + 1,
                band + 1,
                linear_to_db(s.compressor_min_gain[band]),
                linear_to_db(s.limiter_min_gain[band]),
                s.limiter_clamped[band],
            );
        }
        println!(
            "channel {} fbl: min_gain_db={:.2} clamped={}",
            ch + 1,
            linear_to_db(s.fbl_min_gain),
            s.fbl_clamped
        );
    }
    Ok(())
}

fn cmd_filterbank_response(config_path: &Path, output: &Path) -> Result<(), Failure> {
    let cfg = config::load(config_path).map_err(|e| fail(1, e))?;
    let splitter = BandSplitter::new(cfg.crossover_spec()).map_err(|e| fail(1, e))?;
    let grid = log_grid(10.0, cfg.sample_rate / 2.0, 1024);
    let mut out = Vec::new();
    splitter
        .write_response_csv(&grid, &mut out)
        .map_err(|e| fail(3, e))?;
    write_output(Some(output), &out)
}

fn cmd_curve(config_path: &Path, band: usize, output: &Path) -> Result<(), Failure> {
    let cfg = config::load(config_path).map_err(|e| fail(1, e))?;
    if band == 0 || band > cfg.bands.len() {
        return Err(fail(
            1,
            format!(
                "band {band} out of range; config has bands 1..={}",
                cfg.bands.len()
            ),
        ));
    }
    let mut out = Vec::new();
    mbdp::compressor::write_curve_csv(&cfg.bands[band - 1].compressor, &mut out)
        .map_err(|e| fail(3, e))?;
    write_output(Some(output), &out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    kind: AnalyzeKind,
    input: &Path,
    output: Option<&Path>,
    format: Format,
    f0: Option<f64>,
    harmonics: usize,
    window_ms: f64,
    segment: usize,
    overlap: f64,
) -> Result<(), Failure> {
    let audio = read_input(input)?;
    if audio.num_channels() > 1 {
        eprintln!(
            "note: {} has {} channels; analyzing channel 1",
            input.display(),
            audio.num_channels()
        );
    }
    let signal = &audio.channels[0];
    let fs = audio.sample_rate as f64;

    let bytes = match kind {
        AnalyzeKind::Par => {
            let report = analysis::report(signal, fs, None, None).map_err(|e| fail(2, e))?;
            match format {
                Format::Json => to_json(&report)?,
                Format::Csv => format!(
                    "par_db,peak_dbfs,rms_dbfs\n{},{},{}\n",
                    report.par_db, report.peak_dbfs, report.rms_dbfs
                )
                .into_bytes(),
            }
        }
        AnalyzeKind::Psd => {
            let psd = analysis::psd_welch(signal, fs, segment, overlap).map_err(|e| match e {
                mbdp::Error::Config { .. } => fail(1, e),
                _ => fail(2, e),
            })?;
            match format {
                Format::Json => to_json(&psd)?,
                Format::Csv => {
                    let mut out = Vec::new();
                    analysis::write_psd_csv(&psd, &mut out).map_err(|e| fail(3, e))?;
                    out
                }
            }
        }
        AnalyzeKind::Thd => {
            let f0 =
                f0.ok_or_else(|| fail(1, "thd requires --f0 <fundamental frequency in Hz>"))?;
            let report = analysis::thd(signal, fs, f0, harmonics).map_err(|e| match e {
                mbdp::Error::Config { .. } => fail(1, e),
                _ => fail(2, e),
            })?;
            if report.harmonics_used < report.harmonics_requested {
                eprintln!(
                    "warning: only {} harmonics fit below Nyquist (requested {})",
                    report.harmonics_used, report.harmonics_requested
                );
            }
            match format {
                Format::Json => to_json(&report)?,
                Format::Csv => format!(
                    "thd_percent,fundamental_dbfs,harmonics_used,harmonics_requested\n{},{},{},{}\n",
                    report.thd_percent,
                    report.fundamental_dbfs,
                    report.harmonics_used,
                    report.harmonics_requested
                )
                .into_bytes(),
            }
        }
        AnalyzeKind::Peaks => {
            let stats = analysis::peak_stats(signal, fs, window_ms).map_err(|e| fail(1, e))?;
            match format {
                Format::Json => to_json(&stats)?,
                Format::Csv => {
                    let mut out = Vec::new();
                    analysis::write_peak_stats_csv(&stats, &mut out).map_err(|e| fail(3, e))?;
                    out
                }
            }
        }
    };
    write_output(output, &bytes)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| fail(3, e))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| fail(3, format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| fail(3, e))
        }
    }
}
