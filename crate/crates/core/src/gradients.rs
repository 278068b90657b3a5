//! Piecewise analytic partial derivatives of `I_e`, `U_e` and the EIoU
//! losses with respect to the predicted box, plus a central-difference
//! oracle and a conformance report.
//!
//! Branch selection uses non-strict inequalities: `x1p >= x1t` routes the
//! derivative through `x1 = max(x1t, x1p)`, otherwise through
//! `x0 = min(x1t, x1p)`; `x1 <= x2` selects the overlapping form.

use std::ops::{Add, Mul, Sub};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{extended_geometry, BBox, ExtendedGeometry};
use crate::losses::{smooth_eiou_loss, LossSpec};
use crate::sampling::{map_trials, substream, BoxSampler};

/// Partial derivatives with respect to `(x1p, y1p, x2p, y2p)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Grad4 {
    pub d_x1p: f64,
    pub d_y1p: f64,
    pub d_x2p: f64,
    pub d_y2p: f64,
}

impl Grad4 {
    pub const ZERO: Grad4 = Grad4 {
        d_x1p: 0.0,
        d_y1p: 0.0,
        d_x2p: 0.0,
        d_y2p: 0.0,
    };

    pub fn from_array(a: [f64; 4]) -> Self {
        Grad4 {
            d_x1p: a[0],
            d_y1p: a[1],
            d_x2p: a[2],
            d_y2p: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.d_x1p, self.d_y1p, self.d_x2p, self.d_y2p]
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_array(self.to_array().map(f))
    }

    pub fn norm(self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(self) -> bool {
        self.to_array().iter().all(|&v| v == 0.0)
    }
}

impl Add for Grad4 {
    type Output = Grad4;
    fn add(self, o: Grad4) -> Grad4 {
        Grad4::from_array([
            self.d_x1p + o.d_x1p,
            self.d_y1p + o.d_y1p,
            self.d_x2p + o.d_x2p,
            self.d_y2p + o.d_y2p,
        ])
    }
}

impl Sub for Grad4 {
    type Output = Grad4;
    fn sub(self, o: Grad4) -> Grad4 {
        self + o.map(|v| -v)
    }
}

impl Mul<f64> for Grad4 {
    type Output = Grad4;
    fn mul(self, s: f64) -> Grad4 {
        self.map(|v| v * s)
    }
}

/// d(I_e)/d(x0): zero unless the boxes are separated along y.
fn die_dx0(g: &ExtendedGeometry) -> f64 {
    if g.y1 <= g.y2 {
        0.0
    } else {
        2.0 * (g.y1 - g.y2)
    }
}

fn die_dy0(g: &ExtendedGeometry) -> f64 {
    if g.x1 <= g.x2 {
        0.0
    } else {
        2.0 * (g.x1 - g.x2)
    }
}

pub(crate) fn grad_ie_with(target: &BBox, pred: &BBox, g: &ExtendedGeometry) -> Grad4 {
    let d_x1p = if pred.x1() >= target.x1() {
        if g.x1 <= g.x2 {
            g.y_min - g.y_max
        } else {
            2.0 * g.y0 - g.y_max - g.y1
        }
    } else {
        die_dx0(g)
    };
    let d_y1p = if pred.y1() >= target.y1() {
        if g.y1 <= g.y2 {
            g.x_min - g.x_max
        } else {
            2.0 * g.x0 - g.x_max - g.x1
        }
    } else {
        die_dy0(g)
    };
    let d_x2p = if pred.x2() <= target.x2() {
        if g.x1 <= g.x2 {
            g.y2 - g.y1
        } else {
            g.y2 + g.y_min - 2.0 * g.y0
        }
    } else {
        0.0
    };
    let d_y2p = if pred.y2() <= target.y2() {
        if g.y1 <= g.y2 {
            g.x2 - g.x1
        } else {
            g.x2 + g.x_min - 2.0 * g.x0
        }
    } else {
        0.0
    };
    Grad4 {
        d_x1p,
        d_y1p,
        d_x2p,
        d_y2p,
    }
}

/// Which side of each piecewise boundary `pred` lies on:
/// `[x1p >= x1t, y1p >= y1t, x2p <= x2t, y2p <= y2t, x1 <= x2, y1 <= y2]`.
/// Within a fixed signature the loss is smooth.
pub fn branch_signature(target: &BBox, pred: &BBox) -> [bool; 6] {
    let g = extended_geometry(target, pred);
    [
        pred.x1() >= target.x1(),
        pred.y1() >= target.y1(),
        pred.x2() <= target.x2(),
        pred.y2() <= target.y2(),
        g.x1 <= g.x2,
        g.y1 <= g.y2,
    ]
}

pub fn grad_ie(target: &BBox, pred: &BBox) -> Grad4 {
    grad_ie_with(target, pred, &extended_geometry(target, pred))
}

/// d(S_p)/d(pred coordinates).
pub fn grad_sp(pred: &BBox) -> Grad4 {
    Grad4 {
        d_x1p: pred.y1() - pred.y2(),
        d_y1p: pred.x1() - pred.x2(),
        d_x2p: pred.y2() - pred.y1(),
        d_y2p: pred.x2() - pred.x1(),
    }
}

fn grad_ue_from(pred: &BBox, die: Grad4) -> Grad4 {
    grad_sp(pred) - die
}

pub fn grad_ue(target: &BBox, pred: &BBox) -> Grad4 {
    grad_ue_from(pred, grad_ie(target, pred))
}

/// d(EIoU)/dz = (dI_e * U_e - I_e * dU_e) / U_e^2.
pub fn grad_eiou(target: &BBox, pred: &BBox) -> Grad4 {
    let g = extended_geometry(target, pred);
    let die = grad_ie_with(target, pred, &g);
    let due = grad_ue_from(pred, die);
    eiou_grad_from(&g, die, due)
}

fn eiou_grad_from(g: &ExtendedGeometry, die: Grad4, due: Grad4) -> Grad4 {
    let u2 = g.u_e * g.u_e;
    Grad4::from_array(
        [0, 1, 2, 3].map(|i| (die.to_array()[i] * g.u_e - g.i_e * due.to_array()[i]) / u2),
    )
}

/// Gradient of `(1 - I_e/U_e)^2`:
/// `2 (1 - I_e/U_e) (I_e dU_e - dI_e U_e) / U_e^2` per coordinate.
pub fn grad_smooth_eiou(target: &BBox, pred: &BBox) -> Grad4 {
    let g = extended_geometry(target, pred);
    let die = grad_ie_with(target, pred, &g);
    let due = grad_ue_from(pred, die);
    let pre = 2.0 * (1.0 - g.i_e / g.u_e);
    let u2 = g.u_e * g.u_e;
    let d = die.to_array();
    let u = due.to_array();
    Grad4::from_array([0, 1, 2, 3].map(|i| pre * (g.i_e * u[i] - d[i] * g.u_e) / u2))
}

/// Gradient of an arbitrary [`LossSpec`] by the chain rule through EIoU.
pub fn grad_loss(target: &BBox, pred: &BBox, spec: &LossSpec) -> Result<Grad4> {
    let g = extended_geometry(target, pred);
    let die = grad_ie_with(target, pred, &g);
    let due = grad_ue_from(pred, die);
    let dl_de = spec.derivative(g.eiou())?;
    Ok(eiou_grad_from(&g, die, due) * dl_de)
}

/// Central differences `(f(z + h) - f(z - h)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(loss: F, pred: [f64; 4], h: f64) -> Grad4
where
    F: Fn([f64; 4]) -> f64,
{
    finite_diff_grad_steps(loss, pred, [h; 4])
}

/// As [`finite_diff_grad`] with a separate step per coordinate.
pub fn finite_diff_grad_steps<F>(loss: F, pred: [f64; 4], h: [f64; 4]) -> Grad4
where
    F: Fn([f64; 4]) -> f64,
{
    let mut out = [0.0; 4];
    for i in 0..4 {
        let mut up = pred;
        let mut down = pred;
        up[i] += h[i];
        down[i] -= h[i];
        out[i] = (loss(up) - loss(down)) / (up[i] - down[i]);
    }
    Grad4::from_array(out)
}

/// Base finite-difference step; scaled by `max(1, |z|)` per coordinate.
pub const FD_STEP: f64 = 1e-6;

fn fd_steps(pred: &BBox) -> [f64; 4] {
    pred.coords().map(|z| FD_STEP * z.abs().max(1.0))
}

/// Distance from `pred` to the nearest kink of the piecewise formulas, in
/// units of the local finite-difference step.
pub fn boundary_clearance(target: &BBox, pred: &BBox) -> f64 {
    let g = extended_geometry(target, pred);
    let h = fd_steps(pred).iter().cloned().fold(0.0, f64::max);
    let gaps = [
        (pred.x1() - target.x1()).abs(),
        (pred.y1() - target.y1()).abs(),
        (pred.x2() - target.x2()).abs(),
        (pred.y2() - target.y2()).abs(),
        (g.x1 - g.x2).abs(),
        (g.y1 - g.y2).abs(),
        pred.width(),
        pred.height(),
    ];
    gaps.iter().cloned().fold(f64::INFINITY, f64::min) / h
}

/// Relative error with magnitudes below `0.01` compared absolutely, so that
/// round-off in the differences of exactly-zero components is not amplified.
fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-2);
    (a - b).abs() / scale
}

fn max_rel_err(a: Grad4, b: Grad4) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| rel_err(*x, y))
        .fold(0.0, f64::max)
}

/// Machine-readable gradient conformance summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub samples: usize,
    pub rejected_near_boundary: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
    /// Pair with the largest error, as `[target, pred]`.
    pub worst: Option<[BBox; 2]>,
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub coordinate_range: (f64, f64),
    pub threads: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            n_samples: 10_000,
            seed: 0,
            tol: 1e-5,
            coordinate_range: (-2.0, 2.0),
            threads: 1,
        }
    }
}

/// Analytic derivatives under test: `(dI_e, dU_e, dLoss)`.
pub type AnalyticGrads = fn(&BBox, &BBox) -> (Grad4, Grad4, Grad4);

/// The library's own derivatives, the default subject of a gradient check.
pub fn analytic_grads(t: &BBox, p: &BBox) -> (Grad4, Grad4, Grad4) {
    (grad_ie(t, p), grad_ue(t, p), grad_smooth_eiou(t, p))
}

pub fn gradcheck_report(n_samples: usize, seed: u64, tol: f64) -> Result<GradcheckReport> {
    gradcheck_with(
        &GradcheckOptions {
            n_samples,
            seed,
            tol,
            ..Default::default()
        },
        analytic_grads,
    )
}

/// Samples pairs until `n_samples` of them clear every branch boundary by
/// at least ten finite-difference steps, then compares `analytic` against
/// central differences of `I_e`, `U_e` and the Smooth-EIoU loss.
pub fn gradcheck_with(opts: &GradcheckOptions, analytic: AnalyticGrads) -> Result<GradcheckReport> {
    if opts.n_samples == 0 {
        return Err(Error::EmptySample);
    }
    let sampler = BoxSampler::new(opts.coordinate_range.0, opts.coordinate_range.1)?;

    let per_trial = map_trials(opts.n_samples, opts.threads, |i| {
        let mut rng = substream(opts.seed, i as u64);
        let mut rejected = 0usize;
        loop {
            let t = sampler.sample(&mut rng);
            let p = sampler.sample(&mut rng);
            if boundary_clearance(&t, &p) < 10.0 {
                rejected += 1;
                continue;
            }
            let steps = fd_steps(&p);
            let ie_of = |c: [f64; 4]| match BBox::validate(c) {
                Ok(pb) => extended_geometry(&t, &pb).i_e,
                Err(_) => f64::NAN,
            };
            let ue_of = |c: [f64; 4]| match BBox::validate(c) {
                Ok(pb) => extended_geometry(&t, &pb).u_e,
                Err(_) => f64::NAN,
            };
            let loss_of = |c: [f64; 4]| match BBox::validate(c) {
                Ok(pb) => smooth_eiou_loss(&t, &pb, 2.0).unwrap_or(f64::NAN),
                Err(_) => f64::NAN,
            };
            let (aie, aue, al) = analytic(&t, &p);
            let err = max_rel_err(aie, finite_diff_grad_steps(ie_of, p.coords(), steps))
                .max(max_rel_err(
                    aue,
                    finite_diff_grad_steps(ue_of, p.coords(), steps),
                ))
                .max(max_rel_err(
                    al,
                    finite_diff_grad_steps(loss_of, p.coords(), steps),
                ));
            // NaN compares false everywhere; surface it as an infinite error.
            let err = if err.is_nan() { f64::INFINITY } else { err };
            return (err, rejected, [t, p]);
        }
    });

    let mut max_err = 0.0f64;
    let mut sum = 0.0;
    let mut rejected = 0;
    let mut worst = None;
    for (err, rej, pair) in per_trial {
        rejected += rej;
        sum += err;
        if worst.is_none() || err > max_err {
            max_err = err;
            worst = Some(pair);
        }
    }
    Ok(GradcheckReport {
        samples: opts.n_samples,
        rejected_near_boundary: rejected,
        max_rel_err: max_err,
        mean_rel_err: sum / opts.n_samples as f64,
        tol: opts.tol,
        pass: max_err < opts.tol,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn ie_examples() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let g = grad_ie(&t, &b(0.5, 0.5, 1.5, 1.5));
        assert!((g.d_x1p + 0.5).abs() < 1e-12);
        // entirely left of the target, overlapping in y
        let g = grad_ie(&t, &b(-3.0, 0.2, -2.0, 0.8));
        assert_eq!(g.d_x1p, 0.0);
    }

    #[test]
    fn left_branch_nonzero_when_separated_in_y() {
        // x1p < x1t with the boxes separated vertically: I_e depends on x0.
        let t = b(0.0, 0.0, 1.0, 1.0);
        let p = b(-0.5, 2.0, 0.5, 3.0);
        let g = grad_ie(&t, &p);
        assert!((g.d_x1p - 2.0).abs() < 1e-12);
        let fd = finite_diff_grad(
            |c| extended_geometry(&t, &BBox::validate(c).unwrap()).i_e,
            p.coords(),
            1e-6,
        );
        assert!((fd.d_x1p - 2.0).abs() < 1e-6);
    }

    #[test]
    fn ue_examples() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let g = grad_ue(&t, &b(0.5, 0.5, 1.5, 1.5));
        assert!((g.d_x1p + 0.5).abs() < 1e-12);
        let g = grad_ue(&t, &t);
        assert_eq!(g.d_x2p, 0.0);
    }

    #[test]
    fn ie_plus_ue_is_area_gradient() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        for p in [b(0.5, 0.5, 1.5, 1.5), b(2.0, 0.0, 3.0, 1.0), b(-1.0, -2.0, -0.5, -1.0)] {
            assert_eq!(grad_ie(&t, &p) + grad_ue(&t, &p), grad_sp(&p));
        }
    }

    #[test]
    fn smooth_examples() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(grad_smooth_eiou(&t, &t), Grad4::ZERO);
        let g = grad_smooth_eiou(&t, &b(0.5, 0.5, 1.5, 1.5));
        let want = 2.0 * (6.0 / 7.0) * (0.25 * -0.5 - (-0.5) * 1.75) / (1.75 * 1.75);
        assert!((g.d_x1p - want).abs() < 1e-12);
        assert!((g.d_x1p - 0.419825).abs() < 1e-6);
    }

    #[test]
    fn generic_loss_matches_smooth_form() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let spec = LossSpec::smooth_eiou(2.0);
        for p in [b(0.5, 0.5, 1.5, 1.5), b(2.0, 0.3, 3.0, 1.7), b(0.1, 0.2, 0.6, 0.9)] {
            let a = grad_smooth_eiou(&t, &p).to_array();
            let c = grad_loss(&t, &p, &spec).unwrap().to_array();
            for (x, y) in a.iter().zip(c) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn raw_loss_gradient_nonzero_at_minimum() {
        let t = b(0.0, 0.0, 1.0, 1.0);
        let g = grad_loss(&t, &t, &LossSpec::raw_neg_eiou()).unwrap();
        assert!(!g.is_zero());
        assert!(grad_loss(&t, &t, &LossSpec::smooth_eiou(1.5)).unwrap().is_zero());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|c| c[0] * c[0], [1.0, 0.0, 2.0, 3.0], 1e-4);
        assert!((g.d_x1p - 2.0).abs() < 1e-8);
        assert_eq!(g.d_y1p, 0.0);
        assert_eq!(finite_diff_grad(|_| 3.0, [0.0, 0.0, 1.0, 1.0], 1e-3), Grad4::ZERO);

        let t = b(0.0, 0.0, 1.0, 1.0);
        let p = b(0.5, 0.5, 1.5, 1.5);
        let fd = finite_diff_grad(
            |c| smooth_eiou_loss(&t, &BBox::validate(c).unwrap(), 2.0).unwrap(),
            p.coords(),
            1e-6,
        );
        assert!(max_rel_err(fd, grad_smooth_eiou(&t, &p)) < 1e-6);
    }

    #[test]
    fn gradcheck_small_and_empty() {
        let r = gradcheck_report(500, 3, 1e-5).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(matches!(gradcheck_report(0, 3, 1e-5), Err(Error::EmptySample)));
    }

    #[test]
    fn gradcheck_detects_corrupted_branch() {
        fn corrupted(t: &BBox, p: &BBox) -> (Grad4, Grad4, Grad4) {
            let (mut ie, ue, l) = analytic_grads(t, p);
            if p.x2() <= t.x2() {
                ie.d_x2p *= 1.01;
            }
            (ie, ue, l)
        }
        let opts = GradcheckOptions {
            n_samples: 500,
            ..Default::default()
        };
        assert!(!gradcheck_with(&opts, corrupted).unwrap().pass);
    }

    #[test]
    fn gradcheck_rejects_zero_left_branch() {
        // Treating d(I_e)/d(x1p) as zero whenever x1p < x1t misses the x0
        // dependence of vertically separated pairs.
        fn zero_left(t: &BBox, p: &BBox) -> (Grad4, Grad4, Grad4) {
            let (mut ie, _, _) = analytic_grads(t, p);
            if p.x1() < t.x1() {
                ie.d_x1p = 0.0;
            }
            if p.y1() < t.y1() {
                ie.d_y1p = 0.0;
            }
            let ue = grad_sp(p) - ie;
            let g = extended_geometry(t, p);
            let pre = 2.0 * (1.0 - g.eiou());
            let l = eiou_grad_from(&g, ie, ue) * -pre;
            (ie, ue, l)
        }
        let opts = GradcheckOptions {
            n_samples: 500,
            ..Default::default()
        };
        assert!(!gradcheck_with(&opts, zero_left).unwrap().pass);
    }

    #[test]
    fn gradcheck_is_thread_invariant() {
        let mut opts = GradcheckOptions {
            n_samples: 200,
            seed: 9,
            ..Default::default()
        };
        let a = gradcheck_with(&opts, analytic_grads).unwrap();
        opts.threads = 4;
        let b = gradcheck_with(&opts, analytic_grads).unwrap();
        assert_eq!(a, b);
    }
}
