//! Command-line front end for light field feature detection.
//!
//! Exit codes: 0 on success, 2 when input cannot be read or parsed, 3 for invalid
//! flags or parameters. `LIFF_THREADS` caps the number of worker threads.

pub mod args;
pub mod commands;
pub mod error;
pub mod features;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use liff::synth::SyntheticScene;

use args::{DetectorArgs, DetectorKind};
use commands::OutputFormat;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "liff", version, about = "Light field feature detection and matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SceneKind {
    /// 26 disks on a 9x9x256x256 light field.
    Benchmark,
    /// One small disk hidden behind a nearer one in the central view.
    Occlusion,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RenderFormat {
    Grid,
    Packed,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Detect features and write them to a CSV (or `.bin`) feature file.
    Detect {
        /// View grid directory, packed light field, or PNG image.
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value = "liff")]
        detector: DetectorKind,
        #[command(flatten)]
        params: DetectorArgs,
    },
    /// Match two feature files.
    Match {
        a: PathBuf,
        b: PathBuf,
        /// Output CSV; standard output when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Nearest over second-nearest distance ratio; 1 or more disables the test.
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
    },
    /// Monte-Carlo detection scores on a synthetic scene over a noise and threshold grid.
    SynthEval {
        /// Scene JSON; the 26-disk scene when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1e-7,1e-6,1e-5,1e-4,1e-3,1e-2,1e-1,1,10")]
        variances: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.0066")]
        thresholds: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "liff,sift,repeated-sift")]
        detectors: Vec<DetectorKind>,
        #[arg(long, default_value_t = 25)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: DetectorArgs,
    },
    /// Per-stage timings on one worker thread, with the predicted and measured DoG work ratio.
    Bench {
        input: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "liff,repeated-sift")]
        detectors: Vec<DetectorKind>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: DetectorArgs,
    },
    /// Render a scene JSON to a light field, optionally with Gaussian noise.
    Render {
        scene: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        variance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "grid")]
        format: RenderFormat,
    },
    /// Write a built-in scene as JSON.
    Scene {
        #[arg(value_enum)]
        kind: SceneKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn writer(out: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

/// Execute a parsed command. Progress and summaries go to standard error.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Detect {
            input,
            output,
            detector,
            params,
        } => {
            let p = params.params()?;
            let cp = params.consolidation()?;
            let r = commands::detect(&input, detector, &p, &cp, &output)?;
            eprintln!(
                "{}: {} features in {:.3} s",
                detector.name(),
                r.count,
                r.timings.total().as_secs_f64()
            );
        }
        Command::Match { a, b, out, ratio } => {
            let n = commands::match_files(&a, &b, ratio, writer(out.as_deref())?)?;
            eprintln!("{n} matches");
        }
        Command::SynthEval {
            config,
            variances,
            thresholds,
            detectors,
            trials,
            seed,
            out,
            params,
        } => {
            let scene = match config {
                Some(p) => commands::load_scene(&p)?,
                None => SyntheticScene::benchmark_scene(),
            };
            let opts = commands::SynthEvalOptions {
                variances,
                thresholds,
                detectors,
                trials,
                seed,
                agreement: params.agreement,
            };
            commands::synth_eval(&scene, &params.params()?, &opts, writer(out.as_deref())?)?;
        }
        Command::Bench {
            input,
            detectors,
            repeats,
            out,
            params,
        } => {
            let p = params.params()?;
            let cp = params.consolidation()?;
            let lf = commands::load_input(&input)?;
            let report = commands::bench(&lf, &detectors, &p, &cp, repeats)?;
            report.write_csv(writer(out.as_deref())?)?;
            match report.measured_dog_ratio {
                Some(m) => eprintln!(
                    "DoG work ratio repeated-sift/liff: measured {m:.2}, predicted {:.2}",
                    report.predicted_ratio
                ),
                None => eprintln!("predicted DoG work ratio {:.2}", report.predicted_ratio),
            }
        }
        Command::Render {
            scene,
            output,
            variance,
            seed,
            format,
        } => {
            let scene = commands::load_scene(&scene)?;
            let format = match format {
                RenderFormat::Grid => OutputFormat::Grid,
                RenderFormat::Packed => OutputFormat::Packed,
            };
            commands::render(&scene, variance, seed, &output, format)?;
        }
        Command::Scene { kind, seed, out } => {
            let scene = match kind {
                SceneKind::Benchmark => SyntheticScene::benchmark_scene(),
                SceneKind::Occlusion => SyntheticScene::occlusion_scene(seed),
            };
            let mut w = writer(out.as_deref())?;
            let json = serde_json::to_string_pretty(&scene).map_err(|e| CliError::param(e.to_string()))?;
            writeln!(w, "{json}")?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Parse arguments, honour `LIFF_THREADS`, run, and return the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { error::EXIT_PARAM } else { 0 };
        }
    };
    let threads = match args::threads_from_env(std::env::var("LIFF_THREADS").ok().as_deref()) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Some(n) = threads {
        // Fails only if a global pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
