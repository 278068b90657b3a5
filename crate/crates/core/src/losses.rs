//! Localization and IoU-score losses.
//!
//! The convexification transform turns any decreasing function of IoU with a
//! known infimum into a non-negative loss whose gradient vanishes at the
//! minimum: shift by the negated minimum, then raise to a power `p > 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode, extended_geometry, BBox};

/// Values this far below the declared minimum are treated as rounding noise
/// and clamped rather than rejected.
const DOMAIN_SLACK: f64 = 1e-12;

/// `(base_value - base_min)^p`.
pub fn convexify(base_value: f64, base_min: f64, p: f64) -> Result<f64> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidPower(p));
    }
    let shifted = shifted_base(base_value, base_min)?;
    Ok(shifted.powf(p))
}

fn shifted_base(base_value: f64, base_min: f64) -> Result<f64> {
    let shifted = base_value - base_min;
    if shifted.is_nan() || shifted < -DOMAIN_SLACK * base_min.abs().max(1.0) {
        return Err(Error::DomainError {
            value: base_value,
            min: base_min,
        });
    }
    Ok(shifted.max(0.0))
}

/// Decreasing function of IoU that a loss is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossBase {
    /// `-EIoU`, infimum `-1`.
    NegEIoU,
    /// `1 / EIoU`, defined for positive EIoU only.
    ReciprocalIoU,
    /// `-ln(EIoU)`, defined for positive EIoU only.
    NegLogIoU,
}

impl LossBase {
    pub fn default_min(self) -> f64 {
        match self {
            LossBase::NegEIoU => -1.0,
            LossBase::ReciprocalIoU => 1.0,
            LossBase::NegLogIoU => 0.0,
        }
    }

    fn check_domain(self, eiou: f64) -> Result<()> {
        match self {
            LossBase::NegEIoU => Ok(()),
            _ if eiou > 0.0 => Ok(()),
            _ => Err(Error::DomainError {
                value: eiou,
                min: 0.0,
            }),
        }
    }

    pub fn value(self, eiou: f64) -> Result<f64> {
        self.check_domain(eiou)?;
        Ok(match self {
            LossBase::NegEIoU => -eiou,
            LossBase::ReciprocalIoU => 1.0 / eiou,
            LossBase::NegLogIoU => -eiou.ln(),
        })
    }

    /// d(base)/d(eiou).
    pub fn derivative(self, eiou: f64) -> Result<f64> {
        self.check_domain(eiou)?;
        Ok(match self {
            LossBase::NegEIoU => -1.0,
            LossBase::ReciprocalIoU => -1.0 / (eiou * eiou),
            LossBase::NegLogIoU => -1.0 / eiou,
        })
    }

    fn tag(self) -> &'static str {
        match self {
            LossBase::NegEIoU => "neg-eiou",
            LossBase::ReciprocalIoU => "reciprocal-iou",
            LossBase::NegLogIoU => "neg-log-iou",
        }
    }
}

/// A loss on EIoU: a base function, its minimum, and the convexification
/// power. `power == None` leaves the base untransformed, which is only
/// useful as the ill-behaved comparison arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub base: LossBase,
    pub base_min: f64,
    pub power: Option<f64>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::smooth_eiou(2.0)
    }
}

impl LossSpec {
    pub fn smooth_eiou(p: f64) -> Self {
        LossSpec {
            base: LossBase::NegEIoU,
            base_min: -1.0,
            power: Some(p),
        }
    }

    /// Plain `-EIoU` without convexification.
    pub fn raw_neg_eiou() -> Self {
        LossSpec {
            base: LossBase::NegEIoU,
            base_min: -1.0,
            power: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.power {
            if !(p > 1.0) || !p.is_finite() {
                return Err(Error::InvalidPower(p));
            }
        }
        if !self.base_min.is_finite() {
            return Err(Error::Config(format!(
                "non-finite base minimum {}",
                self.base_min
            )));
        }
        Ok(())
    }

    /// Loss value for a given EIoU.
    pub fn value(&self, eiou: f64) -> Result<f64> {
        let b = self.base.value(eiou)?;
        match self.power {
            Some(p) => convexify(b, self.base_min, p),
            None => Ok(b),
        }
    }

    /// The value recorded in optimization traces: identical to [`value`]
    /// for convexified losses, shifted by the base minimum for raw ones so
    /// both arms are non-negative and comparable.
    ///
    /// [`value`]: LossSpec::value
    pub fn trace_value(&self, eiou: f64) -> Result<f64> {
        match self.power {
            Some(_) => self.value(eiou),
            None => Ok(self.base.value(eiou)? - self.base_min),
        }
    }

    /// d(loss)/d(eiou).
    pub fn derivative(&self, eiou: f64) -> Result<f64> {
        let db = self.base.derivative(eiou)?;
        match self.power {
            Some(p) => {
                let shifted = shifted_base(self.base.value(eiou)?, self.base_min)?;
                Ok(p * shifted.powf(p - 1.0) * db)
            }
            None => Ok(db),
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.tag())?;
        match self.power {
            Some(p) => write!(f, ":p={p}")?,
            None => f.write_str(":raw")?,
        }
        if self.base_min != self.base.default_min() {
            write!(f, ",min={}", self.base_min)?;
        }
        Ok(())
    }
}

/// Parses `<base>[:opt,opt...]` where base is `neg-eiou`, `reciprocal-iou`
/// or `neg-log-iou` and options are `p=<power>`, `min=<base minimum>` or
/// `raw`. The power defaults to 2.
impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base_str, opts) = match s.split_once(':') {
            Some((b, o)) => (b.trim(), o.trim()),
            None => (s.trim(), ""),
        };
        let base = match base_str {
            "neg-eiou" => LossBase::NegEIoU,
            "reciprocal-iou" => LossBase::ReciprocalIoU,
            "neg-log-iou" => LossBase::NegLogIoU,
            other => {
                return Err(Error::Parse {
                    line: None,
                    msg: format!("unknown loss base {other:?}"),
                })
            }
        };
        let mut spec = LossSpec {
            base,
            base_min: base.default_min(),
            power: Some(2.0),
        };
        for opt in opts.split(',').map(str::trim).filter(|o| !o.is_empty()) {
            let num = |v: &str| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: None,
                    msg: format!("bad loss option {opt:?}: {e}"),
                })
            };
            match opt.split_once('=') {
                Some(("p", v)) => spec.power = Some(num(v)?),
                Some(("min", v)) => {
                    if base == LossBase::NegEIoU {
                        return Err(Error::Config(
                            "the minimum of -EIoU is fixed at -1".to_string(),
                        ));
                    }
                    spec.base_min = num(v)?;
                }
                None if opt == "raw" => spec.power = None,
                _ => {
                    return Err(Error::Parse {
                        line: None,
                        msg: format!("unknown loss option {opt:?}"),
                    })
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// `(1 - I_e / U_e)^p`.
pub fn smooth_eiou_loss(target: &BBox, pred: &BBox, p: f64) -> Result<f64> {
    convexify(-extended_geometry(target, pred).eiou(), -1.0, p)
}

/// The `(1 - EIoU)` factor that scales the raw EIoU gradient inside the
/// Smooth-EIoU gradient; small for well-localized pairs.
pub fn focal_weight(target: &BBox, pred: &BBox) -> f64 {
    1.0 - extended_geometry(target, pred).eiou()
}

fn smooth_l1_term(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

/// Sum of per-coordinate Smooth-ℓ1 terms with the transition at `|d| = 1`.
pub fn smooth_l1_loss(target_deltas: &[f64; 4], pred_deltas: &[f64; 4]) -> f64 {
    target_deltas
        .iter()
        .zip(pred_deltas)
        .map(|(t, p)| smooth_l1_term(p - t))
        .sum()
}

/// Smooth-ℓ1 between two boxes, both encoded against `anchor`.
pub fn smooth_l1_box_loss(target: &BBox, pred: &BBox, anchor: &BBox) -> f64 {
    smooth_l1_loss(&encode(target, anchor).deltas, &encode(pred, anchor).deltas)
}

/// Ground-truth IoU score and the raw (pre-sigmoid) head output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUScorePair {
    q_g: f64,
    x: f64,
}

impl IoUScorePair {
    pub fn new(q_g: f64, x: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q_g) {
            return Err(Error::Config(format!("IoU score {q_g} outside [0, 1]")));
        }
        if !x.is_finite() {
            return Err(Error::Config(format!("non-finite head output {x}")));
        }
        Ok(Self { q_g, x })
    }

    pub fn q_g(&self) -> f64 {
        self.q_g
    }

    pub fn x(&self) -> f64 {
        self.x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli KL divergence between the target score and `sigmoid(x)`.
pub fn kl_iou_loss(pair: &IoUScorePair) -> f64 {
    let q = pair.q_g;
    // ln(q_p) and ln(1 - q_p) in a form that stays finite for large |x|.
    let ln_p = -softplus(-pair.x);
    let ln_1mp = -softplus(pair.x);
    let mut loss = 0.0;
    if q > 0.0 {
        loss += q * (q.ln() - ln_p);
    }
    if q < 1.0 {
        loss += (1.0 - q) * ((1.0 - q).ln() - ln_1mp);
    }
    loss.max(0.0)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn convexify_examples() {
        assert_eq!(convexify(-1.0, -1.0, 2.0).unwrap(), 0.0);
        assert!((convexify(-1.0 / 7.0, -1.0, 2.0).unwrap() - 36.0 / 49.0).abs() < 1e-12);
        assert_eq!(convexify(0.0, -1.0, 1.5).unwrap(), 1.0);
    }

    #[test]
    fn convexify_errors() {
        assert!(matches!(
            convexify(0.0, -1.0, 1.0),
            Err(Error::InvalidPower(_))
        ));
        assert!(matches!(
            convexify(0.0, -1.0, 0.5),
            Err(Error::InvalidPower(_))
        ));
        assert!(matches!(
            convexify(-2.0, -1.0, 2.0),
            Err(Error::DomainError { .. })
        ));
    }

    #[test]
    fn smooth_eiou_examples() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(smooth_eiou_loss(&t, &t, 2.0).unwrap(), 0.0);
        let v = smooth_eiou_loss(&t, &b(2.0, 0.0, 3.0, 1.0), 2.0).unwrap();
        assert!((v - 16.0 / 9.0).abs() < 1e-12);
        let v = smooth_eiou_loss(&t, &b(0.5, 0.5, 1.5, 1.5), 2.0).unwrap();
        assert!((v - 36.0 / 49.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_examples() {
        let z = [0.0; 4];
        assert_eq!(smooth_l1_loss(&z, &z), 0.0);
        assert_eq!(smooth_l1_loss(&z, &[0.5, 0.0, 0.0, 0.0]), 0.125);
        assert_eq!(smooth_l1_loss(&z, &[0.0, 0.0, 2.0, 0.0]), 1.5);
    }

    #[test]
    fn kl_examples() {
        let p = IoUScorePair::new(0.5, 0.0).unwrap();
        assert_eq!(kl_iou_loss(&p), 0.0);
        let p = IoUScorePair::new(1.0, 0.0).unwrap();
        assert!((kl_iou_loss(&p) - LN_2).abs() < 1e-12);
        let p = IoUScorePair::new(0.0, 0.0).unwrap();
        assert!((kl_iou_loss(&p) - LN_2).abs() < 1e-12);
        assert!(IoUScorePair::new(1.5, 0.0).is_err());
        assert!(IoUScorePair::new(0.5, f64::NAN).is_err());
        // extreme logits stay finite
        assert!(kl_iou_loss(&IoUScorePair::new(0.0, 800.0).unwrap()).is_finite());
    }

    #[test]
    fn focal_weight_examples() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(focal_weight(&t, &t), 0.0);
        assert!((focal_weight(&t, &b(0.5, 0.5, 1.5, 1.5)) - 6.0 / 7.0).abs() < 1e-12);
        assert!((focal_weight(&t, &b(2.0, 0.0, 3.0, 1.0)) - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn loss_spec_parsing() {
        let s: LossSpec = "neg-eiou:p=2".parse().unwrap();
        assert_eq!(s, LossSpec::smooth_eiou(2.0));
        let s: LossSpec = "neg-eiou".parse().unwrap();
        assert_eq!(s, LossSpec::smooth_eiou(2.0));
        let s: LossSpec = "neg-eiou:raw".parse().unwrap();
        assert_eq!(s, LossSpec::raw_neg_eiou());
        let s: LossSpec = "neg-log-iou:p=1.5,min=0".parse().unwrap();
        assert_eq!(s.power, Some(1.5));
        assert!("neg-eiou:p=1".parse::<LossSpec>().is_err());
        assert!("neg-eiou:min=0".parse::<LossSpec>().is_err());
        assert!("cosine".parse::<LossSpec>().is_err());
        for s in ["neg-eiou:p=2", "neg-eiou:raw", "reciprocal-iou:p=3,min=0.5"] {
            let spec: LossSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<LossSpec>().unwrap(), spec);
        }
    }

    #[test]
    fn positive_only_bases_reject_disjoint() {
        let s: LossSpec = "reciprocal-iou".parse().unwrap();
        assert!(matches!(s.value(-0.2), Err(Error::DomainError { .. })));
        assert!(matches!(s.value(0.0), Err(Error::DomainError { .. })));
        assert_eq!(s.value(1.0).unwrap(), 0.0);
        let s: LossSpec = "neg-log-iou".parse().unwrap();
        assert!(s.derivative(-0.1).is_err());
        assert_eq!(s.value(1.0).unwrap(), 0.0);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for spec in [
            LossSpec::smooth_eiou(2.0),
            LossSpec::smooth_eiou(1.5),
            "reciprocal-iou:p=2".parse().unwrap(),
            "neg-log-iou:p=3".parse().unwrap(),
        ] {
            for &e in &[0.2, 0.5, 0.9] {
                let h = 1e-6;
                let fd = (spec.value(e + h).unwrap() - spec.value(e - h).unwrap()) / (2.0 * h);
                let an = spec.derivative(e).unwrap();
                assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{spec}: {fd} vs {an}");
            }
        }
    }
}
