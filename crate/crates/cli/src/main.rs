//! `eiou`: metric tables, optimization traces, sweeps, gradient checks,
//! counterexample searches and NMS simulation.
//!
//! Exit status: 0 on success, 1 when an assertion fails or a search finds
//! nothing, 2 on bad input.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use eiou_core::experiments::{
    eval_pairs, giou_anomaly_search, misalign_search, nms_sim, parse_pairs, sweep,
    verify_misalignment, write_eval_csv, SearchBudget, SuiteParams, SweepOptions, SweepVariant,
    BUNDLED_SUITE,
};
use eiou_core::gradients::{analytic_grads, gradcheck_with, GradcheckOptions};
use eiou_core::nms::{read_cluster_specs, synth_clusters, write_detections};
use eiou_core::scenario::{bundled, parse_scenarios, Scenario, ScenarioOutcome};
use eiou_core::{Error, LossSpec, OptimConfig, UpdateMode};

#[derive(Parser)]
#[command(name = "eiou", version, about = "Extended IoU experiments")]
struct Cli {
    /// Seed for commands that draw random samples.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweeps, searches and gradient checks.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// SIoU, EIoU, GIoU, Smooth-EIoU loss and overlap class per box pair.
    Eval(EvalArgs),
    /// Run scenarios, write their traces and check expectations.
    Trace(TraceArgs),
    /// Random target/init pairs optimized under several configurations.
    Sweep(SweepArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Find two predictions that Smooth-l1 and IoU rank in opposite order.
    Misalign(SearchArgs),
    /// Find an overlapping pair with negative GIoU, plus a touching pair.
    GiouAnomaly(SearchArgs),
    /// Classification-ranked versus IoU-ranked NMS on synthetic clusters.
    NmsSim(NmsSimArgs),
}

#[derive(Args)]
struct EvalArgs {
    /// File of `tx1,ty1,tx2,ty2,px1,py1,px2,py2` lines; stdin if absent or `-`.
    input: Option<PathBuf>,
    /// Power of the Smooth-EIoU loss.
    #[arg(long, default_value_t = 2.0)]
    power: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceFormat {
    Csv,
    Jsonl,
}

#[derive(Args)]
struct TraceArgs {
    /// Scenario names to run.
    names: Vec<String>,
    /// Scenario file; the bundled scenarios when absent.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Run every scenario in the file.
    #[arg(long)]
    all: bool,
    /// List scenario names and exit.
    #[arg(long)]
    list: bool,
    /// Trace destination: a file for one scenario, a directory for several.
    /// With one scenario and no path the trace goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TraceFormat::Csv)]
    format: TraceFormat,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    loss_tol: f64,
    /// Loss, e.g. `neg-eiou:p=2` or `neg-eiou:raw`.
    #[arg(long, default_value = "neg-eiou:p=2")]
    loss: String,
    /// Update rules to compare.
    #[arg(long, value_delimiter = ',', default_value = "sot,plain")]
    modes: Vec<Mode>,
    /// Corner coordinate range as `lo,hi`.
    #[arg(long, value_parser = parse_range, default_value = "0,1")]
    range: (f64, f64),
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sot,
    Plain,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, value_parser = parse_range, default_value = "-2,2")]
    range: (f64, f64),
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 100_000)]
    max_samples: usize,
    /// Target corner range as `lo,hi`.
    #[arg(long, value_parser = parse_range, default_value = "0,10")]
    range: (f64, f64),
    /// Largest corner move of a prediction, in units of sqrt(target area).
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NmsSimArgs {
    /// Cluster CSV `x1,y1,x2,y2,n_candidates,jitter_scale,cls_noise,iou_noise,seed`.
    /// The bundled suite is generated when absent.
    clusters: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou_thresh: f64,
    #[arg(long, default_value_t = 0.5)]
    match_thresh: f64,
    #[arg(long, default_value_t = BUNDLED_SUITE.clusters)]
    n_clusters: usize,
    #[arg(long, default_value_t = BUNDLED_SUITE.n_candidates)]
    candidates: usize,
    #[arg(long, default_value_t = BUNDLED_SUITE.jitter_scale)]
    jitter: f64,
    #[arg(long, default_value_t = BUNDLED_SUITE.cls_noise)]
    cls_noise: f64,
    #[arg(long, default_value_t = BUNDLED_SUITE.iou_noise)]
    iou_noise: f64,
    /// Also write the synthesized detections to this CSV.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected lo,hi, got {s:?}"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if !(lo < hi) {
        return Err(format!("range {lo},{hi} is empty"));
    }
    Ok((lo, hi))
}

/// Outcome that is not a plain success.
enum Failure {
    /// Assertion failed or nothing found (exit 1).
    Check(String),
    /// Bad input or I/O trouble (exit 2).
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Check(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn read_input(path: Option<&Path>) -> Result<String, Failure> {
    let mut text = String::new();
    match path {
        Some(p) if p != Path::new("-") => {
            text = fs::read_to_string(p)
                .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
        }
        _ => {
            io::stdin().read_to_string(&mut text)?;
        }
    }
    Ok(text)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CmdResult {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => Ok(io::stdout().lock().write_all(bytes)?),
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    text.push('\n');
    emit(out, text.as_bytes())
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let pairs = parse_pairs(&read_input(a.input.as_deref())?)?;
    let rows = eval_pairs(&pairs, a.power)?;
    let mut buf = Vec::new();
    write_eval_csv(&rows, &mut buf)?;
    emit(a.out.as_deref(), &buf)
}

fn trace_bytes(o: &ScenarioOutcome, format: TraceFormat) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    match format {
        TraceFormat::Csv => o.trace.write_csv(&mut buf)?,
        TraceFormat::Jsonl => o.trace.write_jsonl(&mut buf)?,
    }
    Ok(buf)
}

fn report(o: &ScenarioOutcome) {
    eprintln!(
        "scenario {}: {} ({} records)",
        o.name,
        if o.pass() { "PASS" } else { "FAIL" },
        o.trace.len()
    );
    for c in &o.checks {
        eprintln!("  {} {}: {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
}

fn cmd_trace(a: &TraceArgs) -> CmdResult {
    let scenarios = match &a.file {
        Some(p) => parse_scenarios(&read_input(Some(p))?)?,
        None => bundled(),
    };
    if a.list {
        let mut text = String::new();
        for s in &scenarios {
            text.push_str(&s.name);
            text.push('\n');
        }
        return emit(None, text.as_bytes());
    }
    let chosen: Vec<&Scenario> = if a.all {
        scenarios.iter().collect()
    } else {
        if a.names.is_empty() {
            return Err(Failure::Input("name a scenario, or pass --all or --list".into()));
        }
        a.names
            .iter()
            .map(|n| {
                scenarios
                    .iter()
                    .find(|s| &s.name == n)
                    .ok_or_else(|| Failure::Input(format!("no scenario named {n:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let ext = match a.format {
        TraceFormat::Csv => "csv",
        TraceFormat::Jsonl => "jsonl",
    };
    if chosen.len() > 1 {
        if let Some(dir) = &a.out {
            fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
        }
    }
    let mut failed = 0;
    for s in &chosen {
        let o = s.run()?;
        report(&o);
        failed += (!o.pass()) as usize;
        let bytes = trace_bytes(&o, a.format)?;
        match (&a.out, chosen.len()) {
            (Some(p), 1) => emit(Some(p), &bytes)?,
            (Some(dir), _) => emit(Some(&dir.join(format!("{}.{ext}", o.name))), &bytes)?,
            (None, 1) => emit(None, &bytes)?,
            (None, _) => {}
        }
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} scenarios failed", chosen.len())));
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, seed: u64, threads: usize) -> CmdResult {
    let loss: LossSpec = a.loss.parse()?;
    let variants = a
        .modes
        .iter()
        .map(|m| {
            let (name, mode) = match m {
                Mode::Sot => ("sot", UpdateMode::Sot),
                Mode::Plain => ("plain", UpdateMode::Plain),
            };
            SweepVariant {
                name: name.to_string(),
                cfg: OptimConfig {
                    alpha: a.alpha,
                    max_iters: a.max_iters,
                    loss_tol: a.loss_tol,
                    mode,
                    loss,
                },
            }
        })
        .collect();
    let summary = sweep(&SweepOptions {
        n: a.n,
        seed,
        coordinate_range: a.range,
        variants,
        threads,
    })?;
    emit_json(a.out.as_deref(), &summary)
}

fn cmd_gradcheck(a: &GradcheckArgs, seed: u64, threads: usize) -> CmdResult {
    let r = gradcheck_with(
        &GradcheckOptions {
            n_samples: a.n,
            seed,
            tol: a.tol,
            coordinate_range: a.range,
            threads,
        },
        analytic_grads,
    )?;
    emit_json(a.out.as_deref(), &r)?;
    if r.pass {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:e} exceeds {:e}",
            r.max_rel_err, r.tol
        )))
    }
}

fn budget(a: &SearchArgs, seed: u64) -> SearchBudget {
    SearchBudget {
        max_samples: a.max_samples,
        seed,
        coordinate_range: a.range,
        pred_shift: a.shift,
    }
}

#[derive(Serialize)]
struct Verified<T> {
    #[serde(flatten)]
    witness: T,
    verified: bool,
}

fn cmd_misalign(a: &SearchArgs, seed: u64, threads: usize) -> CmdResult {
    let w = misalign_search(&budget(a, seed), threads)?;
    let verified = verify_misalignment(&w);
    emit_json(a.out.as_deref(), &Verified { witness: w, verified })?;
    if verified {
        Ok(())
    } else {
        Err(Failure::Check("witness failed independent recomputation".into()))
    }
}

fn cmd_giou_anomaly(a: &SearchArgs, seed: u64, threads: usize) -> CmdResult {
    let w = giou_anomaly_search(&budget(a, seed), threads)?;
    let verified = w.overlapping.giou < 0.0 && w.overlapping.eiou > 0.0 && w.touching.giou == 0.0;
    emit_json(a.out.as_deref(), &Verified { witness: w, verified })?;
    if verified {
        Ok(())
    } else {
        Err(Failure::Check("found pair does not have the expected signs".into()))
    }
}

fn cmd_nms_sim(a: &NmsSimArgs, seed: Option<u64>) -> CmdResult {
    let specs = match &a.clusters {
        Some(p) => read_cluster_specs(read_input(Some(p))?.as_bytes())?,
        None => SuiteParams {
            clusters: a.n_clusters,
            seed: seed.unwrap_or(BUNDLED_SUITE.seed),
            n_candidates: a.candidates,
            jitter_scale: a.jitter,
            cls_noise: a.cls_noise,
            iou_noise: a.iou_noise,
        }
        .specs(),
    };
    let r = nms_sim(&specs, a.iou_thresh, a.match_thresh)?;
    if let Some(p) = &a.detections {
        let mut buf = Vec::new();
        write_detections(&synth_clusters(&specs), &mut buf)?;
        emit(Some(p), &buf)?;
    }
    emit_json(a.out.as_deref(), &r)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed.unwrap_or(0);
    let threads = cli.threads.max(1);
    let result = match &cli.cmd {
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Trace(a) => cmd_trace(a),
        Cmd::Sweep(a) => cmd_sweep(a, seed, threads),
        Cmd::Gradcheck(a) => cmd_gradcheck(a, seed, threads),
        Cmd::Misalign(a) => cmd_misalign(a, seed, threads),
        Cmd::GiouAnomaly(a) => cmd_giou_anomaly(a, seed, threads),
        Cmd::NmsSim(a) => cmd_nms_sim(a, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("eiou: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("eiou: {msg}");
            ExitCode::from(2)
        }
    }
}
