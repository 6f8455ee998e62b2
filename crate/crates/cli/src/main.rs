//! Command-line surface for the travel-speed estimation pipeline:
//! `simgen`, `match`, `estimate`, `predict`, `evaluate`, `sweep`, `lags`.
//! Stages compose through files only; every command echoes its resolved
//! configuration next to its output for reproducibility.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use roadspeed_core::baselines::BaselineConfig;
use roadspeed_core::completion::CompletionConfig;
use roadspeed_core::eval::{self, Method};
use roadspeed_core::ingest::{self, IntervalIndex, Projection};
use roadspeed_core::mapmatch::MatchConfig;
use roadspeed_core::pipeline::{self, Dataset, Pipeline, PipelineConfig};
use roadspeed_core::roadnet::RoadNet;
use roadspeed_core::simgen::{self, FieldConfig, SpeedField, TraceConfig};

#[derive(Parser)]
#[command(
    name = "roadspeed",
    about = "Per-road travel speed estimation from sparse vehicle probe data",
    version
)]
struct Cli {
    /// Worker threads for region and sweep parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city: road net, probe traces, and ground truth.
    Simgen(SimgenArgs),
    /// Map-match raw probe records onto a road net.
    Match(MatchArgs),
    /// Compute travel speeds for every (segment, interval) cell.
    Estimate(EstimateArgs),
    /// Predict next-interval speeds from the completed state.
    Predict(EstimateArgs),
    /// Hide-and-recover evaluation of the estimation methods.
    Evaluate(EvaluateArgs),
    /// Mean recovery error over a (T, w) parameter grid.
    Sweep(SweepArgs),
    /// Dump the estimated lag table for one window.
    Lags(LagsArgs),
}

#[derive(Args, Serialize)]
struct SimgenArgs {
    #[arg(long, default_value_t = 10)]
    rows: u32,
    #[arg(long, default_value_t = 10)]
    cols: u32,
    #[arg(long, default_value_t = 450.0)]
    edge_length: f64,
    #[arg(long, default_value_t = 500)]
    vehicles: u32,
    #[arg(long, default_value_t = 4.0)]
    hours: f64,
    #[arg(long, default_value_t = 30.0)]
    report_period: f64,
    #[arg(long, default_value_t = 8.0)]
    gps_noise: f64,
    #[arg(long, default_value_t = 10.0)]
    base_speed: f64,
    #[arg(long, default_value_t = 5.0)]
    wave_amplitude: f64,
    #[arg(long, default_value_t = 5.0)]
    wave_speed: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Interval length used only for the emitted ground-truth table.
    #[arg(long = "T", default_value_t = 80.0)]
    interval_seconds: f64,
    #[arg(long, default_value = "net.json")]
    net: PathBuf,
    #[arg(long, default_value = "traces.csv")]
    out: PathBuf,
    #[arg(long, default_value = "truth.csv")]
    truth: PathBuf,
    #[arg(long, default_value_t = 114.05)]
    origin_lon: f64,
    #[arg(long, default_value_t = 22.55)]
    origin_lat: f64,
}

#[derive(Args, Serialize)]
struct MatchArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value = "matched.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    d_min: f64,
    #[arg(long, default_value_t = 250.0)]
    cell_size: f64,
    #[arg(long, default_value_t = 2)]
    max_depth: u32,
    #[arg(long, default_value_t = 120.0)]
    gap_seconds: f64,
    #[arg(long, default_value_t = 114.05)]
    origin_lon: f64,
    #[arg(long, default_value_t = 22.55)]
    origin_lat: f64,
    /// Multiply source speeds by this to get m/s (e.g. 0.2778 for km/h).
    #[arg(long, default_value_t = 1.0)]
    speed_scale: f64,
}

#[derive(Args, Serialize, Clone)]
struct EstimateArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    matched: PathBuf,
    /// Calculation interval T, seconds.
    #[arg(long = "T", default_value_t = 80.0)]
    interval_seconds: f64,
    #[arg(long, default_value_t = 12)]
    w: u32,
    #[arg(long, default_value_t = 2000.0)]
    da: f64,
    #[arg(long, default_value_t = 4)]
    nmin: u32,
    #[arg(long, default_value_t = 2)]
    nthr: u32,
    #[arg(long)]
    start_time: Option<f64>,
    #[arg(long, default_value_t = 40.0)]
    vmax: f64,
    #[arg(long, default_value_t = 16.7)]
    default_speed: f64,
    #[arg(long, default_value_t = 1)]
    regions: u32,
    #[arg(long, default_value = "speeds.csv")]
    out: PathBuf,
    /// Output format: csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    /// Methods to compare: comma-separated stc,knn,kriging,arima,kf or
    /// `all`.
    #[arg(long, default_value = "all")]
    method: String,
    #[arg(long, default_value_t = 0.2)]
    missing: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    /// T range as start:end:step, seconds.
    #[arg(long = "T-range", default_value = "10:120:10")]
    t_range: String,
    /// w range as start:end:step.
    #[arg(long = "w-range", default_value = "5:20:1")]
    w_range: String,
    #[arg(long, default_value_t = 0.2)]
    missing: f64,
    #[arg(long, default_value_t = 10)]
    hours: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct LagsArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    /// Window end ordinal n; defaults to the last interval.
    #[arg(long)]
    window_end: Option<u32>,
    /// Also print the window-width stationarity profile of a sample road.
    #[arg(long, default_value_t = false)]
    stationarity: bool,
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    let status = match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(status);
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simgen(args) => cmd_simgen(args),
        Command::Match(args) => cmd_match(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Lags(args) => cmd_lags(args),
    }
}

fn write_output(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Every output gets a sibling `<name>.config.json` echoing the resolved
/// configuration, so runs are reproducible from the echo plus the seed.
fn echo_config<T: Serialize>(out: &Path, command: &str, args: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Echo<'a, T> {
        command: &'a str,
        config: &'a T,
    }
    let mut path = out.as_os_str().to_owned();
    path.push(".config.json");
    let text = serde_json::to_string_pretty(&Echo {
        command,
        config: args,
    })?;
    write_output(Path::new(&path), &text)
}

fn load_net(path: &Path) -> Result<RoadNet> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RoadNet::load_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_dataset(net_path: &Path, matched_path: &Path) -> Result<Dataset> {
    let net = load_net(net_path)?;
    let text = fs::read_to_string(matched_path)
        .with_context(|| format!("reading {}", matched_path.display()))?;
    let matched = pipeline::read_matched_csv(&text, &net)?;
    if matched.is_empty() {
        bail!("no matched records in {}", matched_path.display());
    }
    Ok(Dataset::from_matched(net, matched))
}

fn pipeline_config(args: &EstimateArgs) -> PipelineConfig {
    PipelineConfig {
        interval_seconds: args.interval_seconds,
        w: args.w,
        n_thr: args.nthr,
        start_time: args.start_time,
        completion: CompletionConfig {
            d_a: args.da,
            n_min: args.nmin,
            v_max: args.vmax,
            default_speed: args.default_speed,
            region_count: args.regions,
            ..CompletionConfig::default()
        },
        baselines: BaselineConfig::default(),
    }
}

fn build_pipeline(args: &EstimateArgs) -> Result<(Dataset, Pipeline)> {
    let dataset = load_dataset(&args.net, &args.matched)?;
    let pipeline = Pipeline::build(&dataset, pipeline_config(args))?;
    Ok((dataset, pipeline))
}

fn cmd_simgen(args: SimgenArgs) -> Result<()> {
    let net = simgen::generate_grid_net(args.rows, args.cols, args.edge_length);
    let field = SpeedField::build(
        &net,
        FieldConfig {
            base_speed: args.base_speed,
            wave_amplitude: args.wave_amplitude,
            wave_speed: args.wave_speed,
            seed: args.seed,
            ..FieldConfig::default()
        },
    );
    let records = simgen::generate_traces(
        &net,
        &field,
        &TraceConfig {
            n_vehicles: args.vehicles,
            duration: args.hours * 3600.0,
            report_period: args.report_period,
            gps_noise_sigma: args.gps_noise,
            start_time: 0.0,
            seed: args.seed,
        },
    );
    let projection = Projection::new(args.origin_lon, args.origin_lat);
    write_output(&args.net, &net.to_json())?;
    write_output(&args.out, &pipeline::write_records_csv(&records, &projection))?;

    let intervals = IntervalIndex::new(0.0, args.interval_seconds);
    let n_intervals = (args.hours * 3600.0 / args.interval_seconds).ceil() as u32;
    let truth = simgen::ground_truth(&net, &field, &intervals, n_intervals);
    write_output(&args.truth, &pipeline::write_truth_csv(&truth, &net))?;
    echo_config(&args.out, "simgen", &args)?;
    eprintln!(
        "simgen: {} segments, {} records, {} truth intervals",
        net.len(),
        records.len(),
        n_intervals
    );
    Ok(())
}

fn cmd_match(args: MatchArgs) -> Result<()> {
    let net = load_net(&args.net)?;
    let text = fs::read_to_string(&args.records)
        .with_context(|| format!("reading {}", args.records.display()))?;
    let projection = Projection::new(args.origin_lon, args.origin_lat);
    let parsed = ingest::parse_records(&text, &projection, args.speed_scale)?;
    let config = MatchConfig {
        d_min: args.d_min,
        cell_size: args.cell_size,
        max_depth: args.max_depth,
        gap_seconds: args.gap_seconds,
    };
    let dataset = Dataset::match_raw(net, &parsed.records, &config);
    write_output(&args.out, &pipeline::write_matched_csv(&dataset.matched))?;
    echo_config(&args.out, "match", &args)?;
    eprintln!(
        "match: {} matched, {} outliers, {} unparsable lines",
        dataset.match_stats.matched, dataset.match_stats.outliers, parsed.skipped
    );
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let (dataset, pipeline) = build_pipeline(&args)?;
    let body = match args.format.as_str() {
        "csv" => pipeline::write_speeds_csv(&pipeline.table, &dataset.net),
        "json" => pipeline::write_speeds_json(&pipeline.table, &dataset.net),
        other => bail!("unknown format `{other}` (expected csv or json)"),
    };
    write_output(&args.out, &body)?;
    echo_config(&args.out, "estimate", &args)?;
    let completed: usize = pipeline.completion_stats.iter().map(|s| s.completed).sum();
    let fallback: usize = pipeline.completion_stats.iter().map(|s| s.fallback).sum();
    eprintln!(
        "estimate: {} intervals, {} completed cells, {} fallback cells",
        pipeline.n_intervals, completed, fallback
    );
    Ok(())
}

fn cmd_predict(args: EstimateArgs) -> Result<()> {
    let (dataset, pipeline) = build_pipeline(&args)?;
    let n = pipeline.n_intervals;
    if n <= pipeline.first_completed_interval() {
        bail!("not enough intervals for a prediction window");
    }
    let predictions = pipeline.predict_all(&dataset.net, n);
    let mut body = String::from(pipeline::SPEEDS_HEADER);
    body.push('\n');
    for (seg_idx, p) in predictions.iter().enumerate() {
        body.push_str(&format!(
            "{},{},{:.6},predicted\n",
            n + 1,
            dataset.net.segment(seg_idx).id.0,
            p
        ));
    }
    write_output(&args.out, &body)?;
    echo_config(&args.out, "predict", &args)?;
    eprintln!("predict: interval {} for {} segments", n + 1, predictions.len());
    Ok(())
}

fn parse_methods(spec: &str) -> Result<Vec<Method>> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    spec.split(',')
        .map(|m| m.trim().parse::<Method>().map_err(anyhow::Error::msg))
        .collect()
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let methods = parse_methods(&args.method)?;
    let (dataset, pipeline) = build_pipeline(&args.estimate)?;
    let report = eval::cross_validate(&dataset, &pipeline, args.missing, &methods, args.seed);
    write_output(&args.estimate.out, &report.to_csv())?;
    echo_config(&args.estimate.out, "evaluate", &args)?;
    for method in &methods {
        eprintln!(
            "evaluate: {} mean epsilon {:.4}",
            method.as_str(),
            report.mean_epsilon(*method)
        );
    }
    Ok(())
}

fn parse_range_f64(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("range must be start:end:step, got `{spec}`");
    }
    let (start, end, step): (f64, f64, f64) =
        (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
    if step <= 0.0 || end < start {
        bail!("bad range `{spec}`");
    }
    let mut out = Vec::new();
    let mut v = start;
    while v <= end + 1e-9 {
        out.push(v);
        v += step;
    }
    Ok(out)
}

fn parse_range_u32(spec: &str) -> Result<Vec<u32>> {
    Ok(parse_range_f64(spec)?.into_iter().map(|v| v as u32).collect())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let t_values = parse_range_f64(&args.t_range)?;
    let w_values = parse_range_u32(&args.w_range)?;
    let dataset = load_dataset(&args.estimate.net, &args.estimate.matched)?;
    let base = pipeline_config(&args.estimate);
    let cells = eval::parameter_sweep(
        &dataset,
        &base,
        &t_values,
        &w_values,
        args.missing,
        args.hours,
        args.seed,
    );
    write_output(&args.estimate.out, &eval::sweep_to_csv(&cells))?;
    echo_config(&args.estimate.out, "sweep", &args)?;
    if let Some(best) = cells
        .iter()
        .min_by(|a, b| a.mean_epsilon.total_cmp(&b.mean_epsilon))
    {
        eprintln!(
            "sweep: lowest mean epsilon {:.4} at T={} w={}",
            best.mean_epsilon, best.interval_seconds, best.w
        );
    }
    Ok(())
}

fn cmd_lags(args: LagsArgs) -> Result<()> {
    let (dataset, pipeline) = build_pipeline(&args.estimate)?;
    let n = args.window_end.unwrap_or(pipeline.n_intervals);
    let lags = pipeline
        .lag_table(n)
        .with_context(|| format!("no lag table for window end {n} (needs n > w)"))?;
    write_output(&args.estimate.out, &pipeline::write_lags_csv(lags, &dataset.net))?;
    echo_config(&args.estimate.out, "lags", &args)?;
    if args.stationarity {
        // Pick the busiest road and report the per-width window deviation.
        let busiest = (0..dataset.net.len())
            .max_by_key(|&s| {
                (1..=pipeline.n_intervals)
                    .filter(|&j| pipeline.coverage.is_covered(s, j))
                    .count()
            })
            .unwrap_or(0);
        let series: Vec<f64> = (1..=pipeline.n_intervals)
            .filter_map(|j| pipeline.table.speed(busiest, j))
            .collect();
        let widths: Vec<u32> = (2..=20).collect();
        println!("w,mean_window_std");
        for (w, sd) in roadspeed_core::correlation::stationarity_profile(&series, &widths) {
            println!("{w},{sd:.6}");
        }
    }
    eprintln!("lags: {} pairs for window end {}", lags.len(), n);
    Ok(())
}
