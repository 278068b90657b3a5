//! Batch experiments behind the command line tool: metric tables, seeded
//! optimization sweeps, counterexample searches and the NMS simulation.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::geometry::{classify_overlap, eiou, giou, siou, BBox, OverlapClass};
use crate::losses::{smooth_eiou_loss, smooth_l1_box_loss};
use crate::nms::{
    cluster_suite, compare_guidance, nms_outcome, synth_clusters, ClusterSpec, NmsComparison,
    ScoreSource,
};
use crate::optimizer::{run, OptimConfig, UpdateMode};
use crate::sampling::{map_trials, substream, BoxSampler};

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRow {
    pub target: BBox,
    pub pred: BBox,
    pub siou: f64,
    pub eiou: f64,
    pub giou: f64,
    pub smooth_eiou_loss: f64,
    pub overlap_class: OverlapClass,
}

/// Parses one `target,pred` pair per line: eight numbers separated by commas
/// or whitespace. Blank lines and lines starting with `#` are skipped, as is
/// a non-numeric first line (a header).
pub fn parse_pairs(text: &str) -> Result<Vec<(BBox, BBox)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if i == 0 && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: Some(lineno),
                msg: format!("expected 8 numbers (target then prediction), got {}", fields.len()),
            });
        }
        let mut c = [0.0; 8];
        for (slot, f) in c.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|e| Error::Parse {
                line: Some(lineno),
                msg: format!("bad number {f:?}: {e}"),
            })?;
        }
        let t = BBox::validate([c[0], c[1], c[2], c[3]]).map_err(|e| e.at_line(lineno))?;
        let p = BBox::validate([c[4], c[5], c[6], c[7]]).map_err(|e| e.at_line(lineno))?;
        out.push((t, p));
    }
    Ok(out)
}

pub fn eval_pair(target: &BBox, pred: &BBox, power: f64) -> Result<EvalRow> {
    Ok(EvalRow {
        target: *target,
        pred: *pred,
        siou: siou(target, pred),
        eiou: eiou(target, pred),
        giou: giou(target, pred),
        smooth_eiou_loss: smooth_eiou_loss(target, pred, power)?,
        overlap_class: classify_overlap(target, pred),
    })
}

pub fn eval_pairs(pairs: &[(BBox, BBox)], power: f64) -> Result<Vec<EvalRow>> {
    pairs.iter().map(|(t, p)| eval_pair(t, p, power)).collect()
}

pub const EVAL_HEADER: [&str; 13] = [
    "tx1",
    "ty1",
    "tx2",
    "ty2",
    "px1",
    "py1",
    "px2",
    "py2",
    "siou",
    "eiou",
    "giou",
    "smooth_eiou_loss",
    "overlap_class",
];

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(EVAL_HEADER)?;
    for r in rows {
        let mut rec: Vec<String> = r
            .target
            .coords()
            .into_iter()
            .chain(r.pred.coords())
            .chain([r.siou, r.eiou, r.giou, r.smooth_eiou_loss])
            .map(fmt17)
            .collect();
        rec.push(r.overlap_class.as_str().to_string());
        wtr.write_record(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepVariant {
    pub name: String,
    pub cfg: OptimConfig,
}

impl SweepVariant {
    /// `sot` and `plain` with the given schedule and the default loss.
    pub fn sot_and_plain(alpha: f64, max_iters: usize) -> Vec<SweepVariant> {
        [("sot", UpdateMode::Sot), ("plain", UpdateMode::Plain)]
            .into_iter()
            .map(|(name, mode)| SweepVariant {
                name: name.to_string(),
                cfg: OptimConfig {
                    alpha,
                    max_iters,
                    mode,
                    ..OptimConfig::default()
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub n: usize,
    pub seed: u64,
    pub coordinate_range: (f64, f64),
    pub variants: Vec<SweepVariant>,
    pub threads: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            n: 1000,
            seed: 0,
            coordinate_range: (0.0, 1.0),
            variants: SweepVariant::sot_and_plain(0.1, 2000),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Nearest-rank quantiles of a non-empty sample.
pub fn quantiles(values: &[f64]) -> Result<Quantiles> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((q * (v.len() - 1) as f64).round()) as usize];
    Ok(Quantiles {
        min: v[0],
        q25: at(0.25),
        median: at(0.5),
        q75: at(0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub mode: UpdateMode,
    pub alpha: f64,
    pub max_iters: usize,
    pub loss: String,
    pub runs: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    /// Runs halted by an update that produced an invalid box.
    pub failed: usize,
    /// Median iterations to convergence over converged runs.
    pub median_iters: Option<f64>,
    pub final_eiou: Quantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub n: usize,
    pub seed: u64,
    pub coordinate_range: (f64, f64),
    pub variants: Vec<VariantSummary>,
}

struct RunStat {
    converged: bool,
    failed: bool,
    iters: usize,
    final_eiou: f64,
}

pub fn sweep(opts: &SweepOptions) -> Result<SweepSummary> {
    if opts.n == 0 {
        return Err(Error::Config("sweep needs at least one pair".into()));
    }
    if opts.variants.is_empty() {
        return Err(Error::Config("sweep needs at least one variant".into()));
    }
    for v in &opts.variants {
        v.cfg.validate()?;
    }
    let sampler = BoxSampler::new(opts.coordinate_range.0, opts.coordinate_range.1)?;
    let per_trial: Vec<Vec<RunStat>> = map_trials(opts.n, opts.threads, |i| {
        let mut rng = substream(opts.seed, i as u64);
        let t = sampler.sample(&mut rng);
        let p = sampler.sample(&mut rng);
        opts.variants
            .iter()
            .map(|v| {
                let (trace, failed) = match run(&t, &p, &v.cfg) {
                    Ok(tr) => (tr, false),
                    Err(f) => (f.trace, true),
                };
                let last = trace.last().expect("non-empty trace");
                RunStat {
                    converged: !failed && last.loss <= v.cfg.loss_tol,
                    failed,
                    iters: last.iter,
                    final_eiou: last.eiou,
                }
            })
            .collect()
    });
    let mut variants = Vec::new();
    for (k, v) in opts.variants.iter().enumerate() {
        let stats: Vec<&RunStat> = per_trial.iter().map(|r| &r[k]).collect();
        let conv_iters: Vec<f64> = stats
            .iter()
            .filter(|s| s.converged)
            .map(|s| s.iters as f64)
            .collect();
        let converged = conv_iters.len();
        let eious: Vec<f64> = stats.iter().map(|s| s.final_eiou).collect();
        variants.push(VariantSummary {
            name: v.name.clone(),
            mode: v.cfg.mode,
            alpha: v.cfg.alpha,
            max_iters: v.cfg.max_iters,
            loss: v.cfg.loss.to_string(),
            runs: opts.n,
            converged,
            convergence_rate: converged as f64 / opts.n as f64,
            failed: stats.iter().filter(|s| s.failed).count(),
            median_iters: median(&conv_iters),
            final_eiou: quantiles(&eious)?,
        });
    }
    Ok(SweepSummary {
        n: opts.n,
        seed: opts.seed,
        coordinate_range: opts.coordinate_range,
        variants,
    })
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    })
}

// ---------------------------------------------------------------- searches

/// Limits for the random counterexample searches. Targets are drawn with
/// corners in `coordinate_range`; predictions move each target corner by up
/// to `pred_shift * sqrt(target area)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchBudget {
    pub max_samples: usize,
    pub seed: u64,
    pub coordinate_range: (f64, f64),
    pub pred_shift: f64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_samples: 100_000,
            seed: 0,
            coordinate_range: (0.0, 10.0),
            pred_shift: 1.0,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_samples == 0 {
            return Err(Error::Config("max_samples must be at least 1".into()));
        }
        if !(self.pred_shift >= 0.0) || !self.pred_shift.is_finite() {
            return Err(Error::Config(format!(
                "pred_shift must be a finite non-negative number, got {}",
                self.pred_shift
            )));
        }
        BoxSampler::new(self.coordinate_range.0, self.coordinate_range.1).map(|_| ())
    }
}

fn perturb<R: Rng>(rng: &mut R, t: &BBox, shift: f64) -> BBox {
    let amp = shift * t.area().sqrt();
    loop {
        let c = t.coords().map(|v| {
            if amp > 0.0 {
                v + rng.gen_range(-amp..=amp)
            } else {
                v
            }
        });
        if let Ok(b) = BBox::validate(c) {
            return b;
        }
    }
}

const SEARCH_CHUNK: usize = 4096;

/// Evaluates `probe(i)` for `i` in `0..max_samples` and returns the lowest
/// index that yields a hit, so the answer does not depend on `threads`.
fn first_hit<T, F>(max_samples: usize, threads: usize, probe: F) -> Option<(usize, T)>
where
    T: Send,
    F: Fn(usize) -> Option<T> + Sync + Send,
{
    let mut start = 0;
    while start < max_samples {
        let len = SEARCH_CHUNK.min(max_samples - start);
        let hits = map_trials(len, threads, |k| probe(start + k));
        if let Some((k, hit)) = hits.into_iter().enumerate().find_map(|(k, h)| h.map(|h| (k, h))) {
            return Some((start + k, hit));
        }
        start += len;
    }
    None
}

/// Two predictions for one target where Smooth-ℓ1 ranks them the opposite
/// way to IoU: `a` has the larger ℓ1 loss and also the larger IoU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MisalignWitness {
    pub target: BBox,
    pub pred_a: BBox,
    pub pred_b: BBox,
    pub smooth_l1_a: f64,
    pub smooth_l1_b: f64,
    pub siou_a: f64,
    pub siou_b: f64,
    /// Index of the sample that produced the witness.
    pub sample: usize,
}

fn misaligned(t: &BBox, a: &BBox, b: &BBox) -> Option<MisalignWitness> {
    // The target doubles as the anchor, so its own deltas are zero.
    let (la, lb) = (smooth_l1_box_loss(t, a, t), smooth_l1_box_loss(t, b, t));
    let (ia, ib) = (siou(t, a), siou(t, b));
    let w = |target, pred_a, pred_b, smooth_l1_a, smooth_l1_b, siou_a, siou_b| MisalignWitness {
        target,
        pred_a,
        pred_b,
        smooth_l1_a,
        smooth_l1_b,
        siou_a,
        siou_b,
        sample: 0,
    };
    if la > lb && ia > ib {
        Some(w(*t, *a, *b, la, lb, ia, ib))
    } else if lb > la && ib > ia {
        Some(w(*t, *b, *a, lb, la, ib, ia))
    } else {
        None
    }
}

pub fn misalign_search(budget: &SearchBudget, threads: usize) -> Result<MisalignWitness> {
    budget.validate()?;
    let sampler = BoxSampler::new(budget.coordinate_range.0, budget.coordinate_range.1)?;
    first_hit(budget.max_samples, threads, |i| {
        let mut rng = substream(budget.seed, i as u64);
        let t = sampler.sample(&mut rng);
        let a = perturb(&mut rng, &t, budget.pred_shift);
        let b = perturb(&mut rng, &t, budget.pred_shift);
        misaligned(&t, &a, &b)
    })
    .map(|(i, w)| MisalignWitness { sample: i, ..w })
    .ok_or(Error::NotFound {
        samples: budget.max_samples,
    })
}

/// Plain IoU from clamped edge overlaps, kept separate from the library's
/// geometry so witnesses are checked by different code.
fn reference_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |c: [f64; 4]| (c[2] - c[0]) * (c[3] - c[1]);
    inter / (area(a) + area(b) - inter)
}

/// Smooth-ℓ1 of the prediction's offsets from the target, in units of the
/// target's sqrt-area.
fn reference_smooth_l1(t: [f64; 4], p: [f64; 4]) -> f64 {
    let s = ((t[2] - t[0]) * (t[3] - t[1])).sqrt();
    (0..4)
        .map(|i| {
            let d = ((p[i] - t[i]) / s).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum()
}

/// Recomputes both orderings from scratch.
pub fn verify_misalignment(w: &MisalignWitness) -> bool {
    let (t, a, b) = (w.target.coords(), w.pred_a.coords(), w.pred_b.coords());
    let (la, lb) = (reference_smooth_l1(t, a), reference_smooth_l1(t, b));
    let (ia, ib) = (reference_iou(t, a), reference_iou(t, b));
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
    la > lb
        && ia > ib
        && close(la, w.smooth_l1_a)
        && close(lb, w.smooth_l1_b)
        && close(ia, w.siou_a)
        && close(ib, w.siou_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairValues {
    pub target: BBox,
    pub pred: BBox,
    pub giou: f64,
    pub siou: f64,
    pub eiou: f64,
    pub overlap_class: OverlapClass,
}

impl PairValues {
    pub fn of(target: &BBox, pred: &BBox) -> Self {
        PairValues {
            target: *target,
            pred: *pred,
            giou: giou(target, pred),
            siou: siou(target, pred),
            eiou: eiou(target, pred),
            overlap_class: classify_overlap(target, pred),
        }
    }
}

/// An overlapping pair that GIoU scores below zero (while EIoU stays
/// positive), and a touching pair where GIoU is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GiouAnomaly {
    pub overlapping: PairValues,
    pub touching: PairValues,
    pub sample: usize,
}

/// Side-by-side neighbour of `t` on a 1/1024 grid. Grid coordinates keep
/// every area exact, so GIoU comes out as exactly zero.
fn touching_neighbour(t: &BBox) -> Option<(BBox, BBox)> {
    let snap = |v: f64| (v * 1024.0).round() / 1024.0;
    let g = BBox::validate(t.coords().map(snap)).ok()?;
    let n = BBox::new(g.x2(), g.y1(), g.x2() + g.width(), g.y2()).ok()?;
    Some((g, n))
}

pub fn giou_anomaly_search(budget: &SearchBudget, threads: usize) -> Result<GiouAnomaly> {
    budget.validate()?;
    let sampler = BoxSampler::new(budget.coordinate_range.0, budget.coordinate_range.1)?;
    first_hit(budget.max_samples, threads, |i| {
        let mut rng = substream(budget.seed, i as u64);
        let t = sampler.sample(&mut rng);
        let p = perturb(&mut rng, &t, budget.pred_shift);
        let over = PairValues::of(&t, &p);
        if over.overlap_class != OverlapClass::Overlapping || !(over.giou < 0.0) {
            return None;
        }
        let (g, n) = touching_neighbour(&t)?;
        let touch = PairValues::of(&g, &n);
        (touch.overlap_class == OverlapClass::Touching && touch.giou == 0.0).then_some(
            GiouAnomaly {
                overlapping: over,
                touching: touch,
                sample: i,
            },
        )
    })
    .map(|(_, a)| a)
    .ok_or(Error::NotFound {
        samples: budget.max_samples,
    })
}

// ---------------------------------------------------------------- nms-sim

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteParams {
    pub clusters: usize,
    pub seed: u64,
    pub n_candidates: usize,
    pub jitter_scale: f64,
    pub cls_noise: f64,
    pub iou_noise: f64,
}

/// The fixed 50-cluster suite used to compare NMS guidance.
pub const BUNDLED_SUITE: SuiteParams = SuiteParams {
    clusters: 50,
    seed: 2024,
    n_candidates: 20,
    jitter_scale: 0.3,
    cls_noise: 0.3,
    iou_noise: 0.0,
};

impl SuiteParams {
    pub fn specs(&self) -> Vec<ClusterSpec> {
        cluster_suite(
            self.clusters,
            self.seed,
            self.n_candidates,
            self.jitter_scale,
            self.cls_noise,
            self.iou_noise,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmsSimReport {
    #[serde(flatten)]
    pub comparison: NmsComparison,
    /// Guided picks whose true IoU is the maximum over the set they
    /// suppressed (including themselves).
    pub guided_best_picks: usize,
    pub guided_picks: usize,
}

pub fn nms_sim(specs: &[ClusterSpec], iou_thresh: f64, match_thresh: f64) -> Result<NmsSimReport> {
    let comparison = compare_guidance(specs, iou_thresh, match_thresh)?;
    let dets = synth_clusters(specs);
    let out = nms_outcome(&dets, iou_thresh, ScoreSource::PredictedIoU)?;
    let true_iou = |i: usize| {
        let gt = dets[i].gt_id.expect("synthetic detections carry their truth");
        siou(&specs[gt].gt_box, &dets[i].bbox)
    };
    let guided_best_picks = out
        .kept
        .iter()
        .filter(|&&k| {
            let mine = true_iou(k);
            out.suppression_set(k).into_iter().all(|j| true_iou(j) <= mine)
        })
        .count();
    Ok(NmsSimReport {
        comparison,
        guided_best_picks,
        guided_picks: out.kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn parse_pairs_accepts_commas_spaces_and_header() {
        let p = parse_pairs("tx1,ty1,tx2,ty2,px1,py1,px2,py2\n0,0,1,1,0.5,0.5,1.5,1.5\n\n# c\n0 0 1 1 0 0 1 1\n")
            .unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].1, b(0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn parse_pairs_reports_line() {
        let e = parse_pairs("0,0,1,1,0,0,1,1\n0,0,1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: Some(2), .. }), "{e}");
        let e = parse_pairs("0,0,1,1,0,0,1,1\n\n0,0,1,1,1,1,0,0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: Some(3), .. }), "{e}");
        let e = parse_pairs("0,0,1,1,0,0,1,x\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: Some(1), .. }), "{e}");
    }

    #[test]
    fn eval_examples() {
        let r = eval_pair(&b(0.0, 0.0, 1.0, 1.0), &b(0.5, 0.5, 1.5, 1.5), 2.0).unwrap();
        assert!((r.giou + 5.0 / 63.0).abs() < 1e-12);
        assert!((r.siou - 1.0 / 7.0).abs() < 1e-12);
        let r = eval_pair(&b(0.0, 0.0, 1.0, 1.0), &b(0.0, 0.0, 1.0, 1.0), 2.0).unwrap();
        assert_eq!((r.siou, r.eiou, r.giou, r.smooth_eiou_loss), (1.0, 1.0, 1.0, 0.0));
        let mut buf = Vec::new();
        write_eval_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tx1,"));
        assert!(text.contains("1.0000000000000000e0"));
        assert!(text.trim_end().ends_with("overlapping"));
    }

    #[test]
    fn quantiles_nearest_rank() {
        let q = quantiles(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((q.min, q.q25, q.median, q.q75, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(matches!(quantiles(&[]), Err(Error::EmptySample)));
        assert_eq!(median(&[1.0, 2.0]), Some(1.5));
    }

    #[test]
    fn sweep_single_pair() {
        let s = sweep(&SweepOptions {
            n: 1,
            variants: SweepVariant::sot_and_plain(0.1, 100),
            ..SweepOptions::default()
        })
        .unwrap();
        assert_eq!(s.variants.len(), 2);
        assert_eq!(s.variants[0].runs, 1);
        assert!(matches!(
            sweep(&SweepOptions { n: 0, ..SweepOptions::default() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn misalign_witness_verifies() {
        let w = misalign_search(&SearchBudget::default(), 1).unwrap();
        assert!(verify_misalignment(&w));
        let mut bad = w;
        bad.smooth_l1_a = w.smooth_l1_b;
        assert!(!verify_misalignment(&bad));
    }

    #[test]
    fn misalign_tiny_budget_can_miss() {
        let budget = SearchBudget {
            max_samples: 1,
            pred_shift: 0.0,
            ..SearchBudget::default()
        };
        assert!(matches!(
            misalign_search(&budget, 1),
            Err(Error::NotFound { samples: 1 })
        ));
        let zero = SearchBudget {
            max_samples: 0,
            ..SearchBudget::default()
        };
        assert!(matches!(misalign_search(&zero, 1), Err(Error::Config(_))));
    }

    #[test]
    fn giou_anomaly_found_and_consistent() {
        let a = giou_anomaly_search(&SearchBudget::default(), 1).unwrap();
        assert!(a.overlapping.giou < 0.0);
        assert!(a.overlapping.eiou > 0.0);
        assert_eq!(a.touching.giou, 0.0);
        assert_eq!(a.touching.eiou, 0.0);
        assert_eq!(a.touching.overlap_class, OverlapClass::Touching);
    }

    #[test]
    fn giou_anomaly_not_found_for_near_copies() {
        let budget = SearchBudget {
            max_samples: 1000,
            pred_shift: 0.01,
            ..SearchBudget::default()
        };
        assert!(matches!(
            giou_anomaly_search(&budget, 1),
            Err(Error::NotFound { samples: 1000 })
        ));
    }

    #[test]
    fn searches_ignore_thread_count() {
        let budget = SearchBudget {
            seed: 9,
            ..SearchBudget::default()
        };
        assert_eq!(
            misalign_search(&budget, 1).unwrap(),
            misalign_search(&budget, 4).unwrap()
        );
        assert_eq!(
            giou_anomaly_search(&budget, 1).unwrap(),
            giou_anomaly_search(&budget, 4).unwrap()
        );
    }

    #[test]
    fn bundled_suite_guidance() {
        let r = nms_sim(&BUNDLED_SUITE.specs(), 0.5, 0.5).unwrap();
        assert!(r.comparison.predicted_iou.mean_siou >= r.comparison.classification.mean_siou);
        assert_eq!(r.guided_best_picks, r.guided_picks);
        assert!(matches!(nms_sim(&[], 0.5, 0.5), Err(Error::EmptyInput)));
    }
}
