use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cavsim::output::{
    compare_report, default_output_root, run_and_emit, spectrum_csv, threshold_csv, threshold_curve, Status,
};
use cavsim::scenario::{load_scenario, preset_text, Scenario, PRESET_NAMES};
use cavsim::Error;
use clap::{Parser, Subcommand};

/// Monte Carlo simulator of cavity cooling of falling cesium atoms.
#[derive(Parser)]
#[command(name = "cavsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (and its sweep) and write a result bundle.
    Simulate {
        /// Scenario file, or the name of a shipped preset.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        atoms: Option<usize>,
        /// Defaults to `engine.seed` from the scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Bundle directory. Defaults to `$CAVSIM_OUT/<name>` or `cavsim-out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the transverse-mode spectrum of the scenario's cavity.
    Spectrum {
        #[arg(long, default_value = "fig5")]
        scenario: PathBuf,
        /// Directory that receives `spectrum.csv`. Defaults to the output root.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep every n-th grid point.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Emission ratio and threshold state against single-beam intensity, as CSV on stdout.
    Threshold {
        #[arg(long)]
        scenario: PathBuf,
        /// Intensity range in units of I_s: `from:to:step`.
        #[arg(long, default_value = "1:100:0.5")]
        intensities: String,
    },
    /// Compare a bundle with an expectations file. Exits 1 if any row fails.
    Report {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        expect: PathBuf,
    },
    /// Print a shipped preset, or list them.
    Preset { name: Option<String> },
}

fn intensity_range(text: &str) -> Result<Vec<f64>, Error> {
    let bad = || {
        Error::Config(cavsim::ConfigError {
            line: None,
            kind: cavsim::error::ConfigErrorKind::BadValue {
                key: "intensities".into(),
                reason: format!("`{text}` is not `from:to:step` with 0 < from <= to and step > 0"),
            },
        })
    };
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [from, to, step] = parts[..] else {
        return Err(bad());
    };
    if !(from > 0.0 && to >= from && step > 0.0 && to.is_finite()) || (to - from) / step > 1e6 {
        return Err(bad());
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + step * i as f64).collect())
}

fn load(path: &Path) -> Result<Scenario, Error> {
    load_scenario(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        e => e,
    })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Simulate {
            scenario,
            atoms,
            seed,
            workers,
            out,
        } => {
            let mut s = load(&scenario)?;
            if let Some(n) = atoms {
                s.init.n_atoms = n;
            }
            if let Some(w) = workers {
                s.engine.workers = w;
            }
            let seed = seed.unwrap_or(s.engine.seed);
            let dir = out.unwrap_or_else(|| default_output_root().join(&s.name));
            let bundle = run_and_emit(&s, seed, &dir)?;
            writeln!(stdout, "bundle {}", bundle.dir.display())?;
            for (k, v) in &bundle.metrics {
                writeln!(stdout, "{k} = {v}")?;
            }
            for p in &bundle.points {
                for w in &p.record.warnings {
                    eprintln!("warning: point {}: {w}", p.index);
                }
            }
        }
        Command::Spectrum { scenario, out, stride } => {
            let s = load(&scenario)?;
            let bytes = spectrum_csv(&*s.spectrum_table()?, stride);
            let dir = out.unwrap_or_else(default_output_root);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("spectrum.csv");
            std::fs::write(&path, bytes)?;
            writeln!(stdout, "{}", path.display())?;
        }
        Command::Threshold { scenario, intensities } => {
            let s = load(&scenario)?;
            let rows = threshold_curve(&s, &intensity_range(&intensities)?)?;
            stdout.write_all(&threshold_csv(&rows))?;
        }
        Command::Report { bundle, expect } => {
            let rows = compare_report(&bundle, &expect)?;
            let mut failed = 0;
            for r in &rows {
                let value = r.value.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                writeln!(
                    stdout,
                    "{:<14} {} = {value} ({})",
                    r.status.as_str(),
                    r.expectation.metric,
                    r.detail
                )?;
                failed += usize::from(r.status == Status::Fail);
            }
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Preset { name: None } => {
            for name in PRESET_NAMES {
                writeln!(stdout, "{name}")?;
            }
        }
        Command::Preset { name: Some(name) } => match preset_text(&name) {
            Some(text) => stdout.write_all(text.as_bytes())?,
            None => {
                return Err(Error::InvalidParameter {
                    name: "preset",
                    reason: format!("no preset named `{name}`"),
                })
            }
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            let text = e.to_string();
            match &e {
                Error::Config(cavsim::ConfigError { line: Some(l), .. }) => {
                    let msg = text.strip_prefix(&format!("line {l}: ")).unwrap_or(&text);
                    eprintln!("error[{}] line={l}: {msg}", e.code());
                }
                _ => eprintln!("error[{}]: {text}", e.code()),
            }
            ExitCode::from(2)
        }
    }
}
