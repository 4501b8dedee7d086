use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use kvoverlap::config::RunConfig;
use kvoverlap::hwprofile::{calibrate, MeasurementSet};
use kvoverlap::numerics::{validate_exactness, SplitSelection};
use kvoverlap::pipesim::{
    compare, parse_policy_list, policy_label, run_policy, trace_json, write_metrics_csv, write_sweep_csv,
    ComparisonRow, Granularity,
};
use kvoverlap::scheduler::{plan_generation, PlanDocument, Schedule};
use kvoverlap::Error;

#[derive(Parser)]
#[command(name = "kvoverlap", version, about = "Plan and simulate KV-cache partial recomputation for offloaded decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the per-step split points and print the plan JSON.
    Plan {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the configured policy.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Use this split point at every step instead of solving.
        #[arg(long)]
        l: Option<u64>,
        /// Replay a plan written by `plan`.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Chrome trace output.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics CSV output.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Full report JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare policies across values of one parameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// AXIS=V1,V2,...
        #[arg(long)]
        vary: String,
        /// Comma-separated policies, e.g. `naive,kvpr:fine`. The first is the speedup baseline.
        #[arg(long, default_value = "naive,kvpr")]
        policies: String,
        #[arg(long)]
        l: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a hardware profile from micro-benchmark timings.
    Calibrate {
        /// CSV with columns kind,size,elapsed_s.
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check split-and-merge attention against full-cache attention.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        /// all, zero or full.
        #[arg(long, default_value = "all")]
        splits: String,
    },
}

/// Configuration file plus overrides. Overrides win.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Run configuration JSON. Defaults to the built-in demo.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model preset name.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    num_batches: Option<String>,
    #[arg(long)]
    prompt_len: Option<String>,
    #[arg(long)]
    gen_len: Option<String>,
    /// Bytes per KV element, e.g. 0.5625 for 4-bit group quantization.
    #[arg(long)]
    kv_bytes: Option<String>,
    #[arg(long)]
    gpu_flops: Option<String>,
    /// Bytes per second, or with a GiB suffix.
    #[arg(long)]
    h2d_bw: Option<String>,
    #[arg(long)]
    d2h_bw: Option<String>,
    #[arg(long)]
    latency: Option<String>,
    #[arg(long)]
    gpu_efficiency: Option<String>,
    #[arg(long)]
    mem_budget: Option<f64>,
    /// row or column.
    #[arg(long)]
    schedule: Option<Schedule>,
    /// on or off.
    #[arg(long)]
    recompute: Option<String>,
    /// coarse or fine.
    #[arg(long)]
    granularity: Option<Granularity>,
    #[arg(long)]
    weights_resident: Option<bool>,
}

enum Failure {
    Input(String),
    Budget(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Budget(_) => 2,
            Failure::Validation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Budget(m) | Failure::Validation(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::MemoryBudgetExceeded { .. } => Failure::Budget(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig::demo(),
        };
        if let Some(m) = &self.model {
            cfg.model = kvoverlap::config::ModelChoice::Preset(m.clone());
        }
        let axes = [
            ("batch_size", &self.batch_size),
            ("num_batches", &self.num_batches),
            ("prompt_len", &self.prompt_len),
            ("gen_len", &self.gen_len),
            ("kv_bytes_per_element", &self.kv_bytes),
            ("gpu_flops", &self.gpu_flops),
            ("h2d_bw", &self.h2d_bw),
            ("d2h_bw", &self.d2h_bw),
            ("transfer_latency_s", &self.latency),
            ("gpu_efficiency", &self.gpu_efficiency),
        ];
        for (axis, value) in axes {
            if let Some(v) = value {
                cfg.apply_axis(axis, v)?;
            }
        }
        if let Some(b) = self.mem_budget {
            cfg.hardware.gpu_mem_budget_bytes = Some(b);
        }
        if let Some(s) = self.schedule {
            cfg.policy.schedule = s;
        }
        if let Some(r) = &self.recompute {
            cfg.policy.recompute = match r.as_str() {
                "on" => true,
                "off" => false,
                _ => return Err(Failure::Input(format!("--recompute expects on|off, got `{r}`"))),
            };
        }
        if let Some(g) = self.granularity {
            cfg.policy.granularity = g;
        }
        if let Some(w) = self.weights_resident {
            cfg.policy.weights_resident = w;
        }
        cfg.validate()?;
        log::debug!("config: {}", serde_json::to_string(&cfg).unwrap_or_default());
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Failure::Input(e.to_string()))
}

fn cmd_plan(args: &ConfigArgs, out: Option<&Path>) -> CliResult {
    let cfg = args.load()?;
    let (spec, wl, profile) = (cfg.spec()?, cfg.workload()?, cfg.profile()?);
    let plan = plan_generation(&spec, &wl, &profile, cfg.policy.schedule)?;
    log::info!(
        "planned {} steps, l from {} to {}",
        plan.decisions.len(),
        plan.decisions.first().map_or(0, |d| d.l),
        plan.decisions.last().map_or(0, |d| d.l)
    );
    emit(out, &to_json(&PlanDocument::new(&spec, &wl, &profile, &plan))?)
}

fn read_plan(path: &Path, schedule: Schedule) -> CliResult<kvoverlap::scheduler::SplitPlan> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let doc: PlanDocument =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("invalid plan {}: {e}", path.display())))?;
    if doc.mode != schedule {
        return Err(Failure::Input(format!(
            "plan was made for the {} schedule, configuration runs {}",
            doc.mode, schedule
        )));
    }
    Ok(doc.plan())
}

struct SimulateArgs<'a> {
    l: Option<u64>,
    plan: Option<&'a Path>,
    trace: Option<&'a Path>,
    metrics: Option<&'a Path>,
    out: Option<&'a Path>,
}

fn cmd_simulate(args: &ConfigArgs, opts: SimulateArgs<'_>) -> CliResult {
    let cfg = args.load()?;
    let mut scenario = cfg.scenario()?;
    scenario.split_override = opts.l;
    if let Some(path) = opts.plan {
        scenario.plan = Some(read_plan(path, cfg.policy.schedule)?);
    }
    let run = run_policy(&scenario, &cfg.policy)?;
    let r = &run.report;
    let name = policy_label(&cfg.policy);
    let row = ComparisonRow::from_report(&name, cfg.policy, r, r.makespan);

    if let Some(path) = opts.trace {
        emit(Some(path), &trace_json(&run.timeline)?)?;
    }
    if let Some(path) = opts.metrics {
        let file = fs::File::create(path).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
        write_metrics_csv(std::slice::from_ref(&row), file)?;
    }
    if let Some(path) = opts.out {
        emit(Some(path), &to_json(r)?)?;
    }
    let mut summary = String::new();
    summary += &format!("policy            {name}\n");
    summary += &format!("makespan_s        {}\n", r.makespan);
    summary += &format!("throughput_tok_s  {}\n", r.decode_throughput);
    summary += &format!("gpu_util          {}\n", r.gpu_utilization);
    summary += &format!("peak_gpu_bytes    {}\n", r.peak_gpu_bytes);
    emit(None, &summary)
}

fn cmd_sweep(args: &ConfigArgs, vary: &str, policies: &str, l: Option<u64>, out: Option<&Path>) -> CliResult {
    let base = args.load()?;
    let (axis, list) = vary
        .split_once('=')
        .ok_or_else(|| Failure::Input(format!("--vary expects AXIS=V1,V2,..., got `{vary}`")))?;
    let axis = axis.trim();
    let values: Vec<String> = list.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
    if values.is_empty() {
        return Err(Failure::Input(format!("no values given for axis {axis}")));
    }
    let policies = parse_policy_list(policies, &base.policy)?;

    let points: Vec<kvoverlap::Result<(String, Vec<ComparisonRow>)>> = values
        .par_iter()
        .map(|value| {
            let mut cfg = base.clone();
            cfg.apply_axis(axis, value)?;
            cfg.validate()?;
            let mut scenario = cfg.scenario()?;
            scenario.split_override = l;
            let rows = compare(&scenario, &policies)?;
            log::info!("{axis}={value}: {} policies", rows.len());
            Ok((value.clone(), rows))
        })
        .collect();
    let points = points.into_iter().collect::<kvoverlap::Result<Vec<_>>>()?;

    let mut buf = Vec::new();
    write_sweep_csv(axis, &points, &mut buf)?;
    emit(out, &String::from_utf8(buf).expect("csv output is utf-8"))
}

fn cmd_calibrate(measurements: &Path, out: Option<&Path>) -> CliResult {
    let set = MeasurementSet::from_csv_path(measurements)?;
    let cal = calibrate(&set)?;
    log::info!("fit {} records, residual rms {:e} s", set.records.len(), cal.residual_rms);
    emit(out, &to_json(&cal)?)
}

fn cmd_validate(seed: u64, cases: usize, splits: &str) -> CliResult {
    if cases == 0 {
        return Err(Failure::Input("--cases must be at least 1".into()));
    }
    let selection = match splits {
        "all" => SplitSelection::All,
        "zero" => SplitSelection::Zero,
        "full" => SplitSelection::Full,
        _ => return Err(Failure::Input(format!("--splits expects all|zero|full, got `{splits}`"))),
    };
    let report = validate_exactness(seed, cases, selection)?;
    let status = if report.passed() { "pass" } else { "FAIL" };
    emit(
        None,
        &format!(
            "{status}: {} cases, {} checks, max abs error {:e}\n",
            report.cases, report.checks, report.max_abs_error
        ),
    )?;
    if report.passed() {
        return Ok(());
    }
    let mut msg = format!("{} checks exceeded tolerance", report.failures.len());
    for f in report.failures.iter().take(20) {
        msg += &format!(
            "\n  case {} b={} s'={} h={} heads={} seq={} l={} err={:e}",
            f.case, f.shape.batch, f.shape.seq_len, f.shape.hidden, f.shape.heads, f.sequence, f.l, f.max_abs_error
        );
    }
    Err(Failure::Validation(msg))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Plan { config, out } => cmd_plan(&config, out.as_deref()),
        Command::Simulate {
            config,
            l,
            plan,
            trace,
            metrics,
            out,
        } => cmd_simulate(
            &config,
            SimulateArgs {
                l,
                plan: plan.as_deref(),
                trace: trace.as_deref(),
                metrics: metrics.as_deref(),
                out: out.as_deref(),
            },
        ),
        Command::Sweep {
            config,
            vary,
            policies,
            l,
            out,
        } => cmd_sweep(&config, &vary, &policies, l, out.as_deref()),
        Command::Calibrate { measurements, out } => cmd_calibrate(&measurements, out.as_deref()),
        Command::Validate { seed, cases, splits } => cmd_validate(seed, cases, &splits),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KVOVERLAP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
