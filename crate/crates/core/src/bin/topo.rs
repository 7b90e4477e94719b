use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use topattn::checkpoint::Checkpoint;
use topattn::config::Config;
use topattn::data::{load_csv, read_forecasts, split, write_atomic, write_forecasts, DataError, Forecasts, SeriesRecord, SplitSpec};
use topattn::error::Error;
use topattn::experiment::{bench_ph, ensemble_curve, evaluate, median_forecasts, run_ablation, train_run, EvalMode, Member};
use topattn::train::{forecast_next, rolling_forecast};
use topattn::windowing::{default_window_len, plan, windowed_barcodes};

#[derive(Parser)]
#[command(name = "topo", version, about = "Forecasting with topological attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sliding-window barcodes of every series.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        /// Window length; defaults to floor(0.7 * series length).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the training blocks, selecting the lookback on validation.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `section.key=value` override, repeatable.
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Forecasts from a checkpoint.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Next)]
        mode: Mode,
        #[arg(long, default_value_t = SplitSpec::default().test_fraction)]
        test_fraction: f64,
        #[arg(long, default_value_t = SplitSpec::default().val_fraction)]
        val_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score forecast files against the final values of the truth series.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        /// Forecast file, optionally `name=path`; repeatable.
        #[arg(long = "forecast", required = true)]
        forecasts: Vec<String>,
        /// Forecasts are one-step rolling rather than a single multi-step path.
        #[arg(long)]
        rolling: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Train and test base, +Top, +Attn and +TopAttn under one protocol.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Median-aggregate member forecast files and trace OWA against ensemble size.
    Ensemble {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long = "member", required = true)]
        members: Vec<PathBuf>,
        #[arg(long)]
        rolling: bool,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Runtime of the barcode computation against series length.
    BenchPh {
        #[arg(long, value_delimiter = ',', default_values_t = [250, 500, 1000, 2000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Points processed per timed repetition.
        #[arg(long, default_value_t = 20_000)]
        work: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// The `H` values after the full series.
    Next,
    /// The final `H` values, from the series without them.
    Holdout,
    /// One-step forecasts over the test block.
    Rolling,
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), Error> {
    match path {
        Some(p) => Ok(write_atomic(p, bytes)?),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|source| DataError::Io { path: "<stdout>".into(), source })?;
            Ok(())
        }
    }
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| DataError::Parse { line: 0, column: 0, message: e.to_string() })?;
    }
    w.into_inner().map_err(|e| Error::Usage(e.to_string()))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, Error> {
    let base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| DataError::Io { path: p.display().to_string(), source })?;
            Config::from_toml(&text)?
        }
        None => Config::default(),
    };
    Ok(base.with_overrides(overrides)?)
}

fn resolve_seed(cli: Option<u64>, cfg: &Config) -> Result<u64, Error> {
    cli.or(cfg.seed).ok_or_else(|| Error::Usage("a seed is required: pass --seed or set `seed` in the configuration".into()))
}

fn load_forecast_file(path: &Path) -> Result<Forecasts, Error> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    Ok(read_forecasts(std::io::BufReader::new(file))?)
}

fn forecast_bytes(f: &Forecasts) -> Result<Vec<u8>, Error> {
    let mut buf = Vec::new();
    write_forecasts(&mut buf, f)?;
    Ok(buf)
}

#[derive(Serialize)]
struct BarRow<'a> {
    series_id: &'a str,
    window: usize,
    side: &'a str,
    birth: f64,
    death: f64,
    essential: bool,
}

fn decompose(records: &[SeriesRecord], n: Option<usize>) -> Result<Vec<u8>, Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let err = |e: csv::Error| DataError::Parse { line: 0, column: 0, message: e.to_string() };
    w.write_record(["series_id", "window", "side", "birth", "death", "essential"]).map_err(err)?;
    for r in records {
        let t = r.values.len();
        let p = plan(t, n.unwrap_or_else(|| default_window_len(t))).map_err(|e| DataError::InvalidParameter(format!("series {:?}: {e}", r.id)))?;
        let codes = windowed_barcodes(&r.values, &p).map_err(|e| DataError::InvalidParameter(e.to_string()))?;
        for (window, side, birth, death, essential) in codes.to_csv_rows() {
            w.serialize(BarRow { series_id: &r.id, window, side, birth, death, essential }).map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Decompose { input, n, out } => emit(out.as_deref(), &decompose(&load_csv(&input)?, n)?),
        Command::Train { config, data, seed, overrides, out, loss_csv } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let seed = resolve_seed(seed, &cfg)?;
            let records = load_csv(&data)?;
            let trained = train_run(&records, &cfg, seed)?;
            if let Some(path) = loss_csv {
                #[derive(Serialize)]
                struct LossRow {
                    iteration: usize,
                    loss: f64,
                }
                let rows: Vec<LossRow> = trained.report.losses.iter().enumerate().map(|(i, &loss)| LossRow { iteration: i, loss }).collect();
                write_atomic(&path, &csv_bytes(&rows)?)?;
            }
            let ck = Checkpoint { model: trained.model, normalization: trained.normalization, scalers: trained.scalers };
            Ok(write_atomic(&out, &ck.to_bytes())?)
        }
        Command::Forecast { checkpoint, data, mode, test_fraction, val_fraction, out } => {
            let bytes = std::fs::read(&checkpoint).map_err(|source| DataError::Io { path: checkpoint.display().to_string(), source })?;
            let ck = Checkpoint::from_bytes(&bytes)?;
            let split_spec = SplitSpec { test_fraction, val_fraction };
            let cfg = Config { split: split_spec, ..Config::default() };
            cfg.validate()?;
            let h = ck.model.spec.horizon;
            let mut forecasts = Forecasts::new();
            for r in load_csv(&data)? {
                let v = &r.values;
                let f = match mode {
                    Mode::Next => forecast_next(&ck.model, &ck.scaler_for(&r.id, v), v)?,
                    Mode::Holdout => {
                        let hist = &v[..v.len().saturating_sub(h)];
                        forecast_next(&ck.model, &ck.scaler_for(&r.id, hist), hist)?
                    }
                    Mode::Rolling => {
                        let s = split(v.len(), &split_spec);
                        rolling_forecast(&ck.model, &ck.scaler_for(&r.id, &v[..s.test.start]), v, s.test)?
                    }
                };
                forecasts.insert(r.id.clone(), f);
            }
            emit(out.as_deref(), &forecast_bytes(&forecasts)?)
        }
        Command::Evaluate { truth, forecasts, rolling, out, summary } => {
            let truth = load_csv(&truth)?;
            let methods = forecasts
                .iter()
                .map(|spec| {
                    let (name, path) = match spec.split_once('=') {
                        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                        None => {
                            let p = PathBuf::from(spec);
                            (p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned()), p)
                        }
                    };
                    Ok((name, load_forecast_file(&path)?))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let report = evaluate(&truth, &methods, if rolling { EvalMode::Rolling } else { EvalMode::Holdout })?;
            emit(out.as_deref(), &csv_bytes(&report.rows)?)?;
            let aggregate = serde_json::json!({ "methods": report.methods });
            match summary {
                Some(p) => Ok(write_atomic(&p, &json_bytes(&aggregate))?),
                None if out.is_some() => emit(None, &json_bytes(&aggregate)),
                None => Ok(()),
            }
        }
        Command::Ablate { config, data, seed, overrides, out, summary } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let seed = resolve_seed(seed, &cfg)?;
            let report = run_ablation(&load_csv(&data)?, &cfg, seed)?;
            emit(out.as_deref(), &csv_bytes(&report.rows)?)?;
            if let Some(p) = summary {
                write_atomic(&p, &json_bytes(&report))?;
            }
            Ok(())
        }
        Command::Ensemble { truth, members, rolling, draws, seed, out, curve } => {
            let truth = load_csv(&truth)?;
            let loaded: Vec<Member> = members
                .iter()
                .map(|p| Ok((p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()), load_forecast_file(p)?)))
                .collect::<Result<_, Error>>()?;
            let refs: Vec<&Forecasts> = loaded.iter().map(|m| &m.1).collect();
            emit(out.as_deref(), &forecast_bytes(&median_forecasts(&refs)?)?)?;
            if let Some(p) = curve {
                let points = ensemble_curve(&loaded, &truth, draws, seed, if rolling { EvalMode::Rolling } else { EvalMode::Holdout })?;
                write_atomic(&p, &csv_bytes(&points)?)?;
            }
            Ok(())
        }
        Command::BenchPh { sizes, reps, work, seed, out } => emit(out.as_deref(), &csv_bytes(&bench_ph(&sizes, reps, work, seed)?)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
