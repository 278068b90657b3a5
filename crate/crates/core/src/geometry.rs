//! Axis-aligned boxes and the three overlap metrics: standard IoU, extended
//! IoU and generalized IoU.
//!
//! Boxes are stored as `(x1, y1, x2, y2)` with `(x1, y1)` the top-left and
//! `(x2, y2)` the bottom-right corner. Coordinates are unconstrained reals;
//! only strictly positive width and height are required.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A validated axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::NonFinite([x1, y1, x2, y2]));
        }
        if x2 - x1 <= 0.0 || y2 - y1 <= 0.0 {
            return Err(Error::DegenerateBox([x1, y1, x2, y2]));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Validates a raw coordinate quadruple.
    pub fn validate(coords: [f64; 4]) -> Result<Self> {
        Self::new(coords[0], coords[1], coords[2], coords[3])
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }
    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }
    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Multiplies every coordinate by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::validate(c)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Parses the `x1,y1,x2,y2` literal used on the command line and in files.
impl FromStr for BBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                line: None,
                msg: format!("expected 4 comma-separated numbers, got {}", parts.len()),
            });
        }
        let mut c = [0.0; 4];
        for (slot, p) in c.iter_mut().zip(&parts) {
            *slot = p.parse::<f64>().map_err(|e| Error::Parse {
                line: None,
                msg: format!("bad coordinate {p:?}: {e}"),
            })?;
        }
        Self::validate(c)
    }
}

/// How a predicted box sits relative to a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapClass {
    /// Intersection with strictly positive area.
    Overlapping,
    /// Closed boxes meet along an edge or a corner; intersection area is zero.
    Touching,
    /// Separated along x only.
    DisjointX,
    /// Separated along y only.
    DisjointY,
    /// Separated along both axes.
    DisjointBoth,
}

impl OverlapClass {
    pub fn is_disjoint(self) -> bool {
        matches!(
            self,
            OverlapClass::DisjointX | OverlapClass::DisjointY | OverlapClass::DisjointBoth
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OverlapClass::Overlapping => "overlapping",
            OverlapClass::Touching => "touching",
            OverlapClass::DisjointX => "disjoint_x",
            OverlapClass::DisjointY => "disjoint_y",
            OverlapClass::DisjointBoth => "disjoint_both",
        }
    }
}

impl fmt::Display for OverlapClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every intermediate quantity of the extended intersection for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtendedGeometry {
    /// `max(x1t, x1p)`
    pub x1: f64,
    /// `max(y1t, y1p)`
    pub y1: f64,
    /// `min(x2t, x2p)`
    pub x2: f64,
    /// `min(y2t, y2p)`
    pub y2: f64,
    /// `min(x1t, x1p)`
    pub x0: f64,
    /// `min(y1t, y1p)`
    pub y0: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    /// Standard intersection area, zero when the boxes do not overlap.
    pub i_std: f64,
    /// Signed extended intersection.
    pub i_e: f64,
    pub s_t: f64,
    pub s_p: f64,
    pub u_std: f64,
    /// Extended union `s_t + s_p - i_e`, always positive.
    pub u_e: f64,
}

impl ExtendedGeometry {
    pub fn eiou(&self) -> f64 {
        self.i_e / self.u_e
    }

    pub fn siou(&self) -> f64 {
        self.i_std / self.u_std
    }
}

pub fn extended_geometry(target: &BBox, pred: &BBox) -> ExtendedGeometry {
    let x1 = target.x1.max(pred.x1);
    let y1 = target.y1.max(pred.y1);
    let x2 = target.x2.min(pred.x2);
    let y2 = target.y2.min(pred.y2);

    let x0 = target.x1.min(pred.x1);
    let y0 = target.y1.min(pred.y1);
    let x_min = x1.min(x2);
    let y_min = y1.min(y2);
    let x_max = x1.max(x2);
    let y_max = y1.max(y2);

    // S1 + S2 - S3 - S4, all four rectangles anchored at (x0, y0).
    let s1 = (x2 - x0) * (y2 - y0);
    let s2 = (x_min - x0) * (y_min - y0);
    let s3 = (x1 - x0) * (y_max - y0);
    let s4 = (x_max - x0) * (y1 - y0);
    let i_e = s1 + s2 - s3 - s4;

    let i_std = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
    let s_t = target.area();
    let s_p = pred.area();

    ExtendedGeometry {
        x1,
        y1,
        x2,
        y2,
        x0,
        y0,
        x_min,
        y_min,
        x_max,
        y_max,
        i_std,
        i_e,
        s_t,
        s_p,
        u_std: s_t + s_p - i_std,
        u_e: s_t + s_p - i_e,
    }
}

/// Standard IoU; zero for any non-overlapping pair.
pub fn siou(target: &BBox, pred: &BBox) -> f64 {
    let iw = (target.x2.min(pred.x2) - target.x1.max(pred.x1)).max(0.0);
    let ih = (target.y2.min(pred.y2) - target.y1.max(pred.y1)).max(0.0);
    let inter = iw * ih;
    inter / (target.area() + pred.area() - inter)
}

/// Extended IoU `I_e / U_e`. Equal to [`siou`] for overlapping pairs and
/// negative, distance-sensitive for disjoint ones.
pub fn eiou(target: &BBox, pred: &BBox) -> f64 {
    extended_geometry(target, pred).eiou()
}

/// Generalized IoU: `siou - |C \ (A ∪ B)| / |C|` with `C` the smallest
/// enclosing box.
pub fn giou(target: &BBox, pred: &BBox) -> f64 {
    let iw = (target.x2.min(pred.x2) - target.x1.max(pred.x1)).max(0.0);
    let ih = (target.y2.min(pred.y2) - target.y1.max(pred.y1)).max(0.0);
    let inter = iw * ih;
    let union = target.area() + pred.area() - inter;
    let cw = target.x2.max(pred.x2) - target.x1.min(pred.x1);
    let ch = target.y2.max(pred.y2) - target.y1.min(pred.y1);
    let c = cw * ch;
    inter / union - (c - union) / c
}

pub fn classify_overlap(target: &BBox, pred: &BBox) -> OverlapClass {
    let x1 = target.x1.max(pred.x1);
    let y1 = target.y1.max(pred.y1);
    let x2 = target.x2.min(pred.x2);
    let y2 = target.y2.min(pred.y2);
    match (x1 > x2, y1 > y2) {
        (true, true) => OverlapClass::DisjointBoth,
        (true, false) => OverlapClass::DisjointX,
        (false, true) => OverlapClass::DisjointY,
        (false, false) if x1 == x2 || y1 == y2 => OverlapClass::Touching,
        (false, false) => OverlapClass::Overlapping,
    }
}

/// A box expressed relative to an anchor, with every coordinate divided by
/// the square root of the anchor's area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnchorEncoding {
    pub scale: f64,
    pub normalized_anchor: [f64; 4],
    pub deltas: [f64; 4],
}

pub fn anchor_scale(anchor: &BBox) -> f64 {
    anchor.area().sqrt()
}

pub fn encode(bbox: &BBox, anchor: &BBox) -> AnchorEncoding {
    let scale = anchor_scale(anchor);
    let na = anchor.coords().map(|c| c / scale);
    let nb = bbox.coords().map(|c| c / scale);
    AnchorEncoding {
        scale,
        normalized_anchor: na,
        deltas: [nb[0] - na[0], nb[1] - na[1], nb[2] - na[2], nb[3] - na[3]],
    }
}

/// Normalized box `deltas + anchor / S`, before denormalization.
pub fn decode_normalized(deltas: &[f64; 4], anchor: &BBox) -> [f64; 4] {
    let scale = anchor_scale(anchor);
    let na = anchor.coords().map(|c| c / scale);
    [
        deltas[0] + na[0],
        deltas[1] + na[1],
        deltas[2] + na[2],
        deltas[3] + na[3],
    ]
}

pub fn decode(enc: &AnchorEncoding, anchor: &BBox) -> Result<BBox> {
    let scale = anchor_scale(anchor);
    BBox::validate(decode_normalized(&enc.deltas, anchor).map(|c| c * scale))
}
