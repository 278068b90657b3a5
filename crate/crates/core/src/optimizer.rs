//! Gradient descent over the predicted box's corner coordinates.
//!
//! Two update rules are available: the plain step `z - alpha * dL/dz`, and
//! the steady step `z - alpha * U_e * dL/dz`, which makes the update scale
//! linearly with box size.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::geometry::{extended_geometry, BBox};
use crate::gradients::{branch_signature, grad_loss, Grad4};
use crate::losses::LossSpec;
use crate::sampling::{map_trials, substream, BoxSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    Plain,
    Sot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub alpha: f64,
    pub max_iters: usize,
    pub loss_tol: f64,
    pub mode: UpdateMode,
    pub loss: LossSpec,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            alpha: 0.1,
            max_iters: 5000,
            loss_tol: 1e-6,
            mode: UpdateMode::Sot,
            loss: LossSpec::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.alpha
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.loss_tol >= 0.0) {
            return Err(Error::Config(format!(
                "loss_tol must be non-negative, got {}",
                self.loss_tol
            )));
        }
        self.loss.validate()
    }
}

fn apply_step(pred: &BBox, grad: Grad4, rate: f64, iter: usize) -> Result<BBox> {
    let c = pred.coords();
    let g = grad.to_array();
    let next = [0, 1, 2, 3].map(|i| c[i] - rate * g[i]);
    BBox::validate(next).map_err(|_| Error::DegenerateStep { iter, coords: next })
}

/// One plain gradient step. `alpha == 0` leaves the box unchanged.
pub fn step_plain(target: &BBox, pred: &BBox, alpha: f64, loss: &LossSpec) -> Result<BBox> {
    let grad = grad_loss(target, pred, loss)?;
    apply_step(pred, grad, alpha, 0)
}

/// One steady step: a plain step with the learning rate multiplied by the
/// current extended union.
pub fn step_sot(target: &BBox, pred: &BBox, alpha: f64, loss: &LossSpec) -> Result<BBox> {
    let u_e = extended_geometry(target, pred).u_e;
    step_plain(target, pred, alpha * u_e, loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub pred: BBox,
    pub ie: f64,
    pub ue: f64,
    pub eiou: f64,
    pub loss: f64,
    pub grad: Grad4,
    /// Euclidean length of the update that produced this state; zero for the
    /// initial record.
    pub step_norm: f64,
}

/// Per-iteration history of one run. Record 0 is the initial state.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_CSV_HEADER: [&str; 14] = [
    "iter", "x1", "y1", "x2", "y2", "ie", "ue", "eiou", "loss", "gx1", "gy1", "gx2", "gy2",
    "step_norm",
];

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn eious(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eiou).collect()
    }

    /// First iteration whose EIoU exceeds `threshold`.
    pub fn first_iter_above(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.eiou > threshold)
            .map(|r| r.iter)
    }

    /// `max - min` of the loss over the last `window` records.
    pub fn tail_loss_range(&self, window: usize) -> f64 {
        let start = self.records.len().saturating_sub(window);
        let tail = &self.records[start..];
        let max = tail.iter().map(|r| r.loss).fold(f64::NEG_INFINITY, f64::max);
        let min = tail.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        if tail.is_empty() {
            0.0
        } else {
            max - min
        }
    }

    /// Indices `k` where `loss[k+1] > loss[k] + slack`.
    pub fn monotonicity_violations(&self, slack: f64) -> Vec<usize> {
        self.records
            .windows(2)
            .filter(|w| w[1].loss > w[0].loss + slack)
            .map(|w| w[0].iter)
            .collect()
    }

    fn row(r: &TraceRecord) -> Vec<String> {
        let mut row = vec![r.iter.to_string()];
        row.extend(r.pred.coords().iter().map(|&v| fmt17(v)));
        row.extend([r.ie, r.ue, r.eiou, r.loss].iter().map(|&v| fmt17(v)));
        row.extend(r.grad.to_array().iter().map(|&v| fmt17(v)));
        row.push(fmt17(r.step_norm));
        row
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(TRACE_CSV_HEADER)?;
        for r in &self.records {
            wtr.write_record(Self::row(r))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// One JSON object per record with the same keys as the CSV header.
    /// Numbers are written with 17 significant digits.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            let fields: Vec<String> = TRACE_CSV_HEADER
                .iter()
                .zip(Self::row(r))
                .map(|(k, v)| format!("\"{k}\":{v}"))
                .collect();
            writeln!(w, "{{{}}}", fields.join(","))?;
        }
        Ok(())
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub trace: Trace,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} after {} records", self.error, self.trace.len())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn record(
    target: &BBox,
    pred: BBox,
    iter: usize,
    loss: &LossSpec,
    step_norm: f64,
) -> Result<TraceRecord> {
    let g = extended_geometry(target, &pred);
    let eiou = g.eiou();
    Ok(TraceRecord {
        iter,
        pred,
        ie: g.i_e,
        ue: g.u_e,
        eiou,
        loss: loss.trace_value(eiou)?,
        grad: grad_loss(target, &pred, loss)?,
        step_norm,
    })
}

/// Iterates the configured update until the recorded loss drops to
/// `loss_tol` or `max_iters` updates have been applied.
pub fn run(target: &BBox, init: &BBox, cfg: &OptimConfig) -> Result<Trace, RunFailure> {
    let mut trace = Trace::default();
    if let Err(error) = cfg.validate() {
        return Err(RunFailure { trace, error });
    }
    let fail = |trace: Trace, error: Error| Err(RunFailure { trace, error });

    let mut current = match record(target, *init, 0, &cfg.loss, 0.0) {
        Ok(r) => r,
        Err(e) => return fail(trace, e),
    };
    trace.records.push(current);

    for iter in 1..=cfg.max_iters {
        if current.loss <= cfg.loss_tol {
            break;
        }
        let rate = match cfg.mode {
            UpdateMode::Plain => cfg.alpha,
            UpdateMode::Sot => cfg.alpha * current.ue,
        };
        let next = match apply_step(&current.pred, current.grad, rate, iter) {
            Ok(b) => b,
            Err(e) => return fail(trace, e),
        };
        let step_norm = current
            .pred
            .coords()
            .iter()
            .zip(next.coords())
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        current = match record(target, next, iter, &cfg.loss, step_norm) {
            Ok(r) => r,
            Err(e) => return fail(trace, e),
        };
        trace.records.push(current);
    }
    Ok(trace)
}

/// Outcome of the empirical monotone-decrease check for steady updates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub alpha: f64,
    pub slack: f64,
    pub violations: usize,
    /// Violations on steps that stayed inside one smooth piece of the loss.
    /// Steps that cross a kink are outside the Lipschitz-gradient setting.
    pub violations_within_piece: usize,
    pub trials_with_violations: usize,
    pub failed_runs: usize,
    /// Pair and trace of the first violating trial, if any.
    #[serde(skip)]
    pub first_offender: Option<(BBox, BBox, Trace)>,
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicityOptions {
    pub trials: usize,
    pub seed: u64,
    pub alpha: f64,
    pub max_iters: usize,
    pub coordinate_range: (f64, f64),
    pub slack: f64,
    pub threads: usize,
}

impl Default for MonotonicityOptions {
    fn default() -> Self {
        MonotonicityOptions {
            trials: 1000,
            seed: 0,
            alpha: 1e-3,
            max_iters: 2000,
            coordinate_range: (0.0, 1.0),
            slack: 1e-12,
            threads: 1,
        }
    }
}

pub fn theorem1_check(trials: usize, seed: u64, alpha: f64) -> Result<MonotonicityReport> {
    monotonicity_check(&MonotonicityOptions {
        trials,
        seed,
        alpha,
        ..Default::default()
    })
}

/// Runs steady Smooth-EIoU descent from random pairs and counts every step
/// where the loss rose by more than `slack`.
pub fn monotonicity_check(opts: &MonotonicityOptions) -> Result<MonotonicityReport> {
    if opts.trials == 0 {
        return Err(Error::EmptySample);
    }
    let sampler = BoxSampler::new(opts.coordinate_range.0, opts.coordinate_range.1)?;
    let cfg = OptimConfig {
        alpha: opts.alpha,
        max_iters: opts.max_iters,
        loss_tol: 1e-6,
        mode: UpdateMode::Sot,
        loss: LossSpec::smooth_eiou(2.0),
    };
    cfg.validate()?;

    let results = map_trials(opts.trials, opts.threads, |i| {
        let mut rng = substream(opts.seed, i as u64);
        let t = sampler.sample(&mut rng);
        let p = sampler.sample(&mut rng);
        match run(&t, &p, &cfg) {
            Ok(trace) => (t, p, trace, false),
            Err(f) => (t, p, f.trace, true),
        }
    });

    let mut report = MonotonicityReport {
        trials: opts.trials,
        alpha: opts.alpha,
        slack: opts.slack,
        violations: 0,
        violations_within_piece: 0,
        trials_with_violations: 0,
        failed_runs: 0,
        first_offender: None,
    };
    for (t, p, trace, failed) in results {
        let violating = trace.monotonicity_violations(opts.slack);
        let v = violating.len();
        report.violations_within_piece += violating
            .iter()
            .filter(|&&k| {
                branch_signature(&t, &trace.records[k].pred)
                    == branch_signature(&t, &trace.records[k + 1].pred)
            })
            .count();
        report.failed_runs += failed as usize;
        if v > 0 {
            report.violations += v;
            report.trials_with_violations += 1;
            if report.first_offender.is_none() {
                report.first_offender = Some((t, p, trace));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn plain_step_examples() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let spec = LossSpec::smooth_eiou(2.0);
        assert_eq!(step_plain(&t, &t, 0.1, &spec).unwrap(), t);
        let p = b(0.5, 0.5, 1.5, 1.5);
        let n = step_plain(&t, &p, 0.1, &spec).unwrap();
        assert!((n.x1() - 0.458018).abs() < 1e-6);
        assert_eq!(step_plain(&t, &p, 0.0, &spec).unwrap(), p);
    }

    #[test]
    fn sot_step_examples() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let spec = LossSpec::smooth_eiou(2.0);
        let p = b(0.5, 0.5, 1.5, 1.5);
        let n = step_sot(&t, &p, 0.1, &spec).unwrap();
        assert!((n.x1() - 0.426531).abs() < 1e-6);
        assert_eq!(step_sot(&t, &t, 0.1, &spec).unwrap(), t);
        let ue = extended_geometry(&t, &p).u_e;
        assert_eq!(n, step_plain(&t, &p, 0.1 * ue, &spec).unwrap());
    }

    #[test]
    fn degenerate_step_reported() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let p = b(-1.0, -1.0, 2.0, 2.0);
        let cfg = OptimConfig {
            alpha: 1000.0,
            mode: UpdateMode::Plain,
            ..Default::default()
        };
        let err = run(&t, &p, &cfg).unwrap_err();
        assert!(matches!(err.error, Error::DegenerateStep { iter: 1, .. }));
        assert_eq!(err.trace.len(), 1);
    }

    #[test]
    fn run_at_target_is_single_record() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let tr = run(&t, &t, &OptimConfig::default()).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.records[0].loss, 0.0);
        assert_eq!(tr.records[0].step_norm, 0.0);
    }

    #[test]
    fn run_rejects_bad_config() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let cfg = OptimConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            run(&t, &t, &cfg).unwrap_err().error,
            Error::Config(_)
        ));
        let cfg = OptimConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(run(&t, &t, &cfg).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let tr = run(&t, &b(0.0, 0.0, 0.5, 0.5), &OptimConfig {
            max_iters: 3,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,x1,y1,x2,y2,ie,ue,eiou,loss,gx1,gy1,gx2,gy2,step_norm"
        );
        assert_eq!(lines.count(), 4);

        let mut buf = Vec::new();
        tr.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["iter"], 0);
        assert_eq!(first["x2"].as_f64().unwrap(), 0.5);
    }

    #[test]
    fn monotonicity_trivial_and_empty() {
        let r = theorem1_check(1, 0, 1e-3).unwrap();
        assert_eq!(r.trials, 1);
        assert!(theorem1_check(0, 0, 1e-3).is_err());
    }

    #[test]
    fn large_rate_violations_are_reported() {
        let r = monotonicity_check(&MonotonicityOptions {
            trials: 20,
            alpha: 10.0,
            max_iters: 50,
            ..Default::default()
        })
        .unwrap();
        assert!(r.violations > 0 || r.failed_runs > 0, "{r:?}");
        assert!(r.violations == 0 || r.first_offender.is_some());
    }
}
