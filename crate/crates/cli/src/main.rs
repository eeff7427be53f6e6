mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use pvprof_core::benchmark::{load_dataset, run_benchmark, run_day_ahead, synthesize, BenchmarkReport, Dataset};
use pvprof_core::config::RunConfig;
use pvprof_core::fit::rolling_fit;
use pvprof_core::io::{format_float, write_file, write_forecasts, write_telemetry, write_trajectory, ForecastRow};
use pvprof_core::models::ModelKind;
use pvprof_core::Error;

pub const REPORT_FILE: &str = "benchmark_report.json";

#[derive(Parser, Debug)]
#[command(name = "pvprof", version, about = "Dynamic single-diode PV performance modelling and day-ahead benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides data.output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated model roster, e.g. pvpro,kr.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic telemetry set with its ground-truth log.
    Synth(Common),
    /// Rolling parameter fits; writes the parameter trajectory.
    Fit(Common),
    /// Day-ahead forecasts for every roster model.
    Predict(Common),
    /// Full benchmark: forecasts, metrics and studies.
    Benchmark(Common),
    /// Render SVG charts from a benchmark report.
    Report(Common),
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    verbose: bool,
}

impl Run {
    fn new(c: &Common) -> pvprof_core::Result<Self> {
        let mut cfg = RunConfig::from_file(&c.config)?;
        if let Some(seed) = c.seed {
            cfg.seed = seed;
        }
        if let Some(models) = &c.models {
            cfg.models.roster = models.iter().map(|m| m.parse::<ModelKind>()).collect::<pvprof_core::Result<_>>()?;
        }
        cfg.validate()?;
        let out = c.out.clone().unwrap_or_else(|| cfg.output_dir());
        Ok(Self { cfg, out, verbose: c.verbose })
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("pvprof: {}", msg.as_ref());
        }
    }

    fn out_file(&self, name: &str) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| Error::Io(format!("{}: {e}", self.out.display())))?;
        Ok(self.out.join(name))
    }

    fn data(&self) -> pvprof_core::Result<Dataset> {
        let d = load_dataset(&self.cfg)?;
        self.log(format!("{} records loaded", d.records.len()));
        for diag in &d.diagnostics {
            eprintln!("pvprof: skipped line {}: {}", diag.line, diag.message);
        }
        Ok(d)
    }
}

fn cmd_synth(run: &Run) -> anyhow::Result<()> {
    let ds = synthesize(&run.cfg)?;
    let csv = run.out_file("telemetry.csv")?;
    write_file(&csv, |b| write_telemetry(b, &ds.records))?;
    let truth = run.out_file("ground_truth.json")?;
    fs::write(&truth, serde_json::to_string_pretty(&ds.truth)?).map_err(|e| Error::Io(e.to_string()))?;
    run.log(format!("wrote {} and {}", csv.display(), truth.display()));
    Ok(())
}

fn cmd_fit(run: &Run) -> anyhow::Result<()> {
    let data = run.data()?;
    let (opts, init) = run.cfg.fit_setup()?;
    let entries = rolling_fit(&data.records, &run.cfg.system.topology, &run.cfg.schedule(), &init, &opts, &run.cfg.preprocess)?;
    for e in &entries {
        match &e.outcome {
            Ok(r) => run.log(format!("window ending {}: loss {:e}, {} iterations", e.window_end, r.final_loss, r.iterations)),
            Err(err) => eprintln!("pvprof: window ending {} failed: {err}", e.window_end),
        }
    }
    let path = run.out_file("trajectory.csv")?;
    write_file(&path, |b| write_trajectory(b, &entries))?;
    if !entries.is_empty() && entries.iter().all(|e| e.outcome.is_err()) {
        return Err(Error::Training("every fitting window failed".into()).into());
    }
    run.log(format!("wrote {}", path.display()));
    Ok(())
}

fn cmd_predict(run: &Run) -> anyhow::Result<()> {
    let data = run.data()?;
    let ctx = run.cfg.model_context()?;
    let day_ahead = run_day_ahead(&run.cfg, &ctx, &data.records)?;
    let mut rows = Vec::new();
    for (kind, preds) in &day_ahead.predictions {
        for dp in preds {
            let Ok(values) = &dp.outcome else {
                eprintln!("pvprof: {kind} skipped {}: {}", dp.date, dp.outcome.as_ref().unwrap_err());
                continue;
            };
            let start = dp.date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
            let target = pvprof_core::fit::slice_window(&data.records, start, start + chrono::Duration::days(1));
            rows.extend(target.iter().zip(values).map(|(r, p)| ForecastRow {
                timestamp: r.timestamp,
                model: kind.name().into(),
                p_pred_w: *p,
                p_meas_w: r.power(),
            }));
        }
    }
    rows.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.model.cmp(&b.model)));
    let path = run.out_file("forecasts.csv")?;
    write_file(&path, |b| write_forecasts(b, &rows))?;
    run.log(format!("wrote {} rows to {}", rows.len(), path.display()));
    Ok(())
}

fn write_daily_metrics(path: &Path, report: &BenchmarkReport) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["date", "model", "n_samples", "nmae", "nrmse", "nbe_mean", "skip_reason"])?;
    for (kind, days) in &report.daily {
        for d in days {
            let (n, a, r, b) = match &d.metrics {
                Some(m) => (m.n_samples.to_string(), format_float(m.nmae), format_float(m.nrmse), format_float(m.nbe_mean)),
                None => Default::default(),
            };
            w.write_record([d.date.to_string(), kind.name().to_string(), n, a, r, b, d.skip_reason.clone().unwrap_or_default()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_benchmark(run: &Run) -> anyhow::Result<()> {
    let data = run.data()?;
    let mut out = run_benchmark(&run.cfg, &data)?;
    out.report.generated_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    for kind in &out.report.roster {
        match out.report.aggregate_nmae(*kind) {
            Some(e) => run.log(format!("{kind}: aggregate nMAE {:.4}%", 100.0 * e)),
            None => eprintln!("pvprof: {kind}: no forecast day could be scored"),
        }
    }
    let report_path = run.out_file(REPORT_FILE)?;
    fs::write(&report_path, out.report.to_json()?).map_err(|e| Error::Io(e.to_string()))?;
    write_file(&run.out_file("forecasts.csv")?, |b| write_forecasts(b, &out.forecasts))?;
    write_file(&run.out_file("trajectory.csv")?, |b| write_trajectory(b, &out.trajectory))?;
    write_daily_metrics(&run.out_file("daily_metrics.csv")?, &out.report)?;
    run.log(format!("wrote {}", report_path.display()));
    Ok(())
}

fn cmd_report(run: &Run) -> anyhow::Result<()> {
    let path = run.out.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let report: BenchmarkReport =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for (name, body) in svg::render_all(&report) {
        let file = run.out_file(&name)?;
        fs::write(&file, body).map_err(|e| Error::Io(e.to_string()))?;
        run.log(format!("wrote {}", file.display()));
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return e.exit_code() as u8;
    }
    if err.downcast_ref::<csv::Error>().is_some() || err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    4
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, f): (&Common, fn(&Run) -> anyhow::Result<()>) = match &cli.command {
        Command::Synth(c) => (c, cmd_synth),
        Command::Fit(c) => (c, cmd_fit),
        Command::Predict(c) => (c, cmd_predict),
        Command::Benchmark(c) => (c, cmd_benchmark),
        Command::Report(c) => (c, cmd_report),
    };
    let result = Run::new(common)
        .map_err(anyhow::Error::from)
        .with_context(|| format!("loading {}", common.config.display()))
        .and_then(|run| f(&run));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let root = e.chain().find_map(|c| c.downcast_ref::<Error>()).cloned();
            eprintln!("pvprof: error: {e:#}");
            let code = root.map_or_else(|| exit_code(&e), |r| r.exit_code() as u8);
            ExitCode::from(if code == 0 { 4 } else { code })
        }
    }
}
