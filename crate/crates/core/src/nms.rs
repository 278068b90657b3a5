//! Greedy non-maximum suppression ranked either by classification
//! confidence or by a predicted IoU score, and a synthetic stand-in for an
//! IoU-predicting head.

use std::io::{Read, Write};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::geometry::{siou, BBox};
use crate::sampling::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub bbox: BBox,
    pub cls_score: f64,
    pub iou_score: f64,
    pub gt_id: Option<usize>,
}

impl Detection {
    pub fn new(bbox: BBox, cls_score: f64, iou_score: f64) -> Result<Self> {
        for s in [cls_score, iou_score] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(Detection {
            bbox,
            cls_score,
            iou_score,
            gt_id: None,
        })
    }

    pub fn with_gt(mut self, gt_id: usize) -> Self {
        self.gt_id = Some(gt_id);
        self
    }

    pub fn score(&self, source: ScoreSource) -> f64 {
        match source {
            ScoreSource::Classification => self.cls_score,
            ScoreSource::PredictedIoU => self.iou_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Classification,
    PredictedIoU,
}

/// Which detections survived and who suppressed the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmsOutcome {
    /// Indices into the input, in selection order.
    pub kept: Vec<usize>,
    /// For every input index, the kept index that removed it (`None` for
    /// kept detections).
    pub suppressed_by: Vec<Option<usize>>,
}

impl NmsOutcome {
    /// The kept detection at `kept_idx` plus everything it suppressed.
    pub fn suppression_set(&self, kept_idx: usize) -> Vec<usize> {
        std::iter::once(kept_idx)
            .chain(
                self.suppressed_by
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| **s == Some(kept_idx))
                    .map(|(i, _)| i),
            )
            .collect()
    }
}

/// Ranks by `source` (ties go to the lower input index) and repeatedly keeps
/// the best remaining detection, dropping every remaining one whose IoU with
/// it is at least `iou_thresh`.
pub fn nms_outcome(dets: &[Detection], iou_thresh: f64, source: ScoreSource) -> Result<NmsOutcome> {
    if dets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort keeps the lower index first on equal scores.
    order.sort_by(|&a, &b| dets[b].score(source).total_cmp(&dets[a].score(source)));

    let mut suppressed_by = vec![None; dets.len()];
    let mut removed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if removed[i] {
            continue;
        }
        kept.push(i);
        for &j in &order[pos + 1..] {
            if !removed[j] && siou(&dets[i].bbox, &dets[j].bbox) >= iou_thresh {
                removed[j] = true;
                suppressed_by[j] = Some(i);
            }
        }
    }
    Ok(NmsOutcome {
        kept,
        suppressed_by,
    })
}

/// Kept detections in selection order, each with its original scores.
pub fn nms(dets: &[Detection], iou_thresh: f64, source: ScoreSource) -> Result<Vec<Detection>> {
    Ok(nms_outcome(dets, iou_thresh, source)?
        .kept
        .into_iter()
        .map(|i| dets[i])
        .collect())
}

/// Parameters for one synthetic cluster of candidates around a ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterSpec {
    pub gt_box: BBox,
    pub n_candidates: usize,
    /// Corner noise half-width as a fraction of `sqrt(gt area)`.
    pub jitter_scale: f64,
    pub cls_noise: f64,
    pub iou_noise: f64,
    pub seed: u64,
}

/// Classification score every candidate starts from before noise.
pub const CLS_BASE: f64 = 0.5;

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Candidates with uniformly jittered corners. `iou_score` is the true IoU
/// against the ground truth plus uniform noise; `cls_score` ignores
/// localization entirely. `gt_id` is the spec's position in `specs`.
pub fn synth_clusters(specs: &[ClusterSpec]) -> Vec<Detection> {
    let mut out = Vec::new();
    for (gt_id, spec) in specs.iter().enumerate() {
        let mut rng = substream(spec.seed, gt_id as u64);
        let gt = spec.gt_box;
        let amp = spec.jitter_scale * gt.area().sqrt();
        for _ in 0..spec.n_candidates {
            let bbox = loop {
                let c = gt.coords().map(|v| v + symmetric(&mut rng, amp));
                if let Ok(b) = BBox::validate(c) {
                    break b;
                }
            };
            let true_iou = siou(&gt, &bbox);
            let iou_score = (true_iou + symmetric(&mut rng, spec.iou_noise)).clamp(0.0, 1.0);
            let cls_score = (CLS_BASE + symmetric(&mut rng, spec.cls_noise)).clamp(0.0, 1.0);
            out.push(Detection {
                bbox,
                cls_score,
                iou_score,
                gt_id: Some(gt_id),
            });
        }
    }
    out
}

/// `n` clusters of unit-ish boxes laid out on a grid far enough apart that
/// candidates from different clusters never overlap.
pub fn cluster_suite(
    n: usize,
    seed: u64,
    n_candidates: usize,
    jitter_scale: f64,
    cls_noise: f64,
    iou_noise: f64,
) -> Vec<ClusterSpec> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let mut rng = substream(seed, u64::MAX);
    (0..n)
        .map(|i| {
            let (r, c) = ((i / cols) as f64, (i % cols) as f64);
            let w = rng.gen_range(0.5..2.0);
            let h = rng.gen_range(0.5..2.0);
            let (x, y) = (c * 10.0, r * 10.0);
            ClusterSpec {
                gt_box: BBox::new(x, y, x + w, y + h).expect("positive sides"),
                n_candidates,
                jitter_scale,
                cls_noise,
                iou_noise,
                seed,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionMetrics {
    pub kept: usize,
    /// Mean over kept detections of the IoU with their best-matching truth.
    pub mean_siou: f64,
    /// Fraction of ground truths matched by some kept box at `match_thresh`.
    pub recall: f64,
    /// Per ground truth, the best IoU achieved by any kept box.
    pub per_gt_best: Vec<f64>,
}

pub fn evaluate_selection(
    kept: &[Detection],
    gts: &[BBox],
    match_thresh: f64,
) -> Result<SelectionMetrics> {
    if gts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut per_gt_best = vec![0.0f64; gts.len()];
    let mut total = 0.0;
    for d in kept {
        let mut best = 0.0f64;
        for (g, slot) in gts.iter().zip(per_gt_best.iter_mut()) {
            let v = siou(g, &d.bbox);
            best = best.max(v);
            *slot = slot.max(v);
        }
        total += best;
    }
    let matched = per_gt_best.iter().filter(|&&v| v >= match_thresh).count();
    Ok(SelectionMetrics {
        kept: kept.len(),
        mean_siou: if kept.is_empty() {
            0.0
        } else {
            total / kept.len() as f64
        },
        recall: matched as f64 / gts.len() as f64,
        per_gt_best,
    })
}

fn header_like(first: &str) -> bool {
    first.trim().parse::<f64>().is_err()
}

/// Reads `x1,y1,x2,y2,cls_score,iou_score[,gt_id]` rows. A leading header
/// row is skipped.
pub fn read_detections<R: Read>(r: R) -> Result<Vec<Detection>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if i == 0 && rec.get(0).is_some_and(header_like) {
            continue;
        }
        if rec.len() != 6 && rec.len() != 7 {
            return Err(Error::Parse {
                line: Some(line),
                msg: format!("expected 6 or 7 fields, got {}", rec.len()),
            });
        }
        let num = |k: usize| {
            rec[k].parse::<f64>().map_err(|e| Error::Parse {
                line: Some(line),
                msg: format!("field {}: {e}", k + 1),
            })
        };
        let bbox = BBox::validate([num(0)?, num(1)?, num(2)?, num(3)?])
            .map_err(|e| e.at_line(line))?;
        let mut d = Detection::new(bbox, num(4)?, num(5)?).map_err(|e| e.at_line(line))?;
        if rec.len() == 7 && !rec[6].is_empty() {
            d.gt_id = Some(rec[6].parse::<usize>().map_err(|e| Error::Parse {
                line: Some(line),
                msg: format!("gt_id: {e}"),
            })?);
        }
        out.push(d);
    }
    Ok(out)
}

pub fn write_detections<W: Write>(dets: &[Detection], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x1", "y1", "x2", "y2", "cls_score", "iou_score", "gt_id"])?;
    for d in dets {
        let mut row: Vec<String> = d.bbox.coords().iter().map(|&v| fmt17(v)).collect();
        row.push(fmt17(d.cls_score));
        row.push(fmt17(d.iou_score));
        row.push(d.gt_id.map(|g| g.to_string()).unwrap_or_default());
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads cluster specs, one per row:
/// `x1,y1,x2,y2,n_candidates,jitter_scale,cls_noise,iou_noise,seed`.
pub fn read_cluster_specs<R: Read>(r: R) -> Result<Vec<ClusterSpec>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if i == 0 && rec.get(0).is_some_and(header_like) {
            continue;
        }
        if rec.len() != 9 {
            return Err(Error::Parse {
                line: Some(line),
                msg: format!("expected 9 fields, got {}", rec.len()),
            });
        }
        let perr = |k: usize, e: &dyn std::fmt::Display| Error::Parse {
            line: Some(line),
            msg: format!("field {}: {e}", k + 1),
        };
        let num = |k: usize| rec[k].parse::<f64>().map_err(|e| perr(k, &e));
        let int = |k: usize| rec[k].parse::<u64>().map_err(|e| perr(k, &e));
        let gt_box = BBox::validate([num(0)?, num(1)?, num(2)?, num(3)?])
            .map_err(|e| e.at_line(line))?;
        let spec = ClusterSpec {
            gt_box,
            n_candidates: int(4)? as usize,
            jitter_scale: num(5)?,
            cls_noise: num(6)?,
            iou_noise: num(7)?,
            seed: int(8)?,
        };
        if spec.n_candidates == 0 || [spec.jitter_scale, spec.cls_noise, spec.iou_noise]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::Parse {
                line: Some(line),
                msg: "n_candidates must be >= 1 and noise levels >= 0".into(),
            });
        }
        out.push(spec);
    }
    Ok(out)
}

pub fn write_cluster_specs<W: Write>(specs: &[ClusterSpec], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "x1", "y1", "x2", "y2", "n_candidates", "jitter_scale", "cls_noise", "iou_noise", "seed",
    ])?;
    for s in specs {
        let mut row: Vec<String> = s.gt_box.coords().iter().map(|&v| fmt17(v)).collect();
        row.push(s.n_candidates.to_string());
        row.extend([s.jitter_scale, s.cls_noise, s.iou_noise].iter().map(|&v| fmt17(v)));
        row.push(s.seed.to_string());
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Guided versus classification-ranked NMS on the same candidates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmsComparison {
    pub clusters: usize,
    pub candidates: usize,
    pub iou_thresh: f64,
    pub match_thresh: f64,
    pub classification: SelectionMetrics,
    pub predicted_iou: SelectionMetrics,
}

pub fn compare_guidance(
    specs: &[ClusterSpec],
    iou_thresh: f64,
    match_thresh: f64,
) -> Result<NmsComparison> {
    if specs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dets = synth_clusters(specs);
    let gts: Vec<BBox> = specs.iter().map(|s| s.gt_box).collect();
    let cls = nms(&dets, iou_thresh, ScoreSource::Classification)?;
    let guided = nms(&dets, iou_thresh, ScoreSource::PredictedIoU)?;
    Ok(NmsComparison {
        clusters: specs.len(),
        candidates: dets.len(),
        iou_thresh,
        match_thresh,
        classification: evaluate_selection(&cls, &gts, match_thresh)?,
        predicted_iou: evaluate_selection(&guided, &gts, match_thresh)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(bx: BBox, cls: f64, iou: f64) -> Detection {
        Detection::new(bx, cls, iou).unwrap()
    }

    #[test]
    fn nms_examples() {
        let a = det(b(0.0, 0.0, 1.0, 1.0), 0.9, 0.5);
        assert_eq!(nms(&[a], 0.5, ScoreSource::Classification).unwrap(), vec![a]);

        let lo = det(b(0.0, 0.0, 1.0, 1.0), 0.8, 0.5);
        let kept = nms(&[lo, a], 0.5, ScoreSource::Classification).unwrap();
        assert_eq!(kept, vec![a]);

        let a = det(b(0.0, 0.0, 1.0, 1.0), 0.6, 0.95);
        let bb = det(b(0.05, 0.0, 1.05, 1.0), 0.9, 0.7);
        let c = det(b(3.0, 3.0, 4.0, 4.0), 0.3, 0.2);
        let out = nms_outcome(&[a, bb, c], 0.5, ScoreSource::PredictedIoU).unwrap();
        assert_eq!(out.kept, vec![0, 2]);
        assert_eq!(out.suppressed_by, vec![None, Some(0), None]);
        assert_eq!(out.suppression_set(0), vec![0, 1]);
        let kept = nms(&[a, bb, c], 0.5, ScoreSource::PredictedIoU).unwrap();
        assert_eq!(kept[0].cls_score, 0.6);

        assert!(matches!(
            nms(&[], 0.5, ScoreSource::Classification),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let x = det(b(0.0, 0.0, 1.0, 1.0), 0.7, 0.7);
        let y = det(b(0.0, 0.0, 1.0, 1.01), 0.7, 0.7);
        let out = nms_outcome(&[x, y], 0.5, ScoreSource::Classification).unwrap();
        assert_eq!(out.kept, vec![0]);
        let out = nms_outcome(&[y, x], 0.5, ScoreSource::Classification).unwrap();
        assert_eq!(out.kept, vec![0]);
    }

    #[test]
    fn synth_examples() {
        let spec = ClusterSpec {
            gt_box: b(0.0, 0.0, 2.0, 1.0),
            n_candidates: 5,
            jitter_scale: 0.0,
            cls_noise: 0.0,
            iou_noise: 0.0,
            seed: 4,
        };
        let d = synth_clusters(&[spec]);
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|x| x.bbox == spec.gt_box && x.iou_score == 1.0));

        let spec = ClusterSpec {
            jitter_scale: 0.2,
            cls_noise: 0.3,
            ..spec
        };
        let d = synth_clusters(&[spec]);
        for x in &d {
            assert!((x.iou_score - siou(&spec.gt_box, &x.bbox)).abs() < 1e-12);
        }
        assert_eq!(d, synth_clusters(&[spec]));
    }

    #[test]
    fn evaluation_examples() {
        let gts = [b(0.0, 0.0, 1.0, 1.0), b(5.0, 5.0, 6.0, 6.0)];
        let kept: Vec<Detection> = gts.iter().map(|g| det(*g, 0.5, 0.5)).collect();
        let m = evaluate_selection(&kept, &gts, 0.5).unwrap();
        assert_eq!(m.mean_siou, 1.0);
        assert_eq!(m.recall, 1.0);

        let far = [det(b(20.0, 20.0, 21.0, 21.0), 0.5, 0.5)];
        let m = evaluate_selection(&far, &gts, 0.5).unwrap();
        assert_eq!(m.recall, 0.0);
        assert!(matches!(
            evaluate_selection(&far, &[], 0.5),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn detection_csv_roundtrip() {
        let suite = cluster_suite(3, 1, 4, 0.1, 0.2, 0.1);
        let d = synth_clusters(&suite);
        let mut buf = Vec::new();
        write_detections(&d, &mut buf).unwrap();
        assert_eq!(read_detections(buf.as_slice()).unwrap(), d);

        let err = read_detections("0,0,1,1,0.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(1), .. }));
        let err = read_detections("0,0,1,1,0.5,0.5\n0,0,1,1,1.5,0.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(2), .. }));
    }

    #[test]
    fn cluster_csv_roundtrip() {
        let suite = cluster_suite(5, 2, 8, 0.15, 0.4, 0.0);
        let mut buf = Vec::new();
        write_cluster_specs(&suite, &mut buf).unwrap();
        assert_eq!(read_cluster_specs(buf.as_slice()).unwrap(), suite);
        assert!(read_cluster_specs("".as_bytes()).unwrap().is_empty());
    }
}
