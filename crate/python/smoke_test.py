"""Smoke test for the `eiou` extension module.

Build and install first:  maturin develop -m crates/python/Cargo.toml
"""

import math

import eiou


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    t = eiou.BBox(0, 0, 1, 1)
    p = eiou.BBox(0.5, 0.5, 1.5, 1.5)
    assert close(eiou.giou(t, p), -5 / 63)
    assert close(eiou.siou(t, p), 1 / 7)
    assert close(eiou.eiou(t, p), 1 / 7)
    assert eiou.classify_overlap(t, p) == "overlapping"
    assert eiou.classify_overlap(t, eiou.BBox(1, 0, 2, 1)) == "touching"
    assert eiou.eiou(t, eiou.BBox(2, 2, 3, 3)) < 0
    assert eiou.BBox.parse("0,0,1,1") == t

    g = eiou.extended_geometry(t, p)
    assert close(g["i_e"] / g["u_e"], 1 / 7)

    assert eiou.grad_smooth_eiou(t, t) == (0.0, 0.0, 0.0, 0.0)
    assert any(v != 0 for v in eiou.grad_loss(t, t, "neg-eiou:raw"))
    assert close(eiou.kl_iou_loss(1.0, 0.0), math.log(2))

    report = eiou.gradcheck(n_samples=500, seed=1)
    assert report["pass"], report

    tr = eiou.run(t, eiou.BBox(0, 0, 0.5, 0.5), alpha=0.1)
    assert tr.error is None
    assert tr.losses[-1] < 1e-6
    assert tr.first_iter_above(0.9) is not None
    assert tr.to_csv().count("\n") == len(tr) + 1

    big = eiou.run(t.scaled(4), eiou.BBox(0, 0, 2, 2), alpha=0.1)
    assert len(big) == len(tr)
    assert max(abs(a - b) for a, b in zip(big.eious, tr.eious)) <= 1e-9

    names = eiou.scenario_names()
    assert "fig-sot-trapped" in names
    passed, checks, _ = eiou.run_scenario("fig-convergence-smooth")
    assert passed, checks

    dets = [
        eiou.Detection(eiou.BBox(0, 0, 1, 1), cls_score=0.9, iou_score=0.6),
        eiou.Detection(eiou.BBox(0.05, 0, 1.05, 1), cls_score=0.5, iou_score=0.95),
        eiou.Detection(eiou.BBox(3, 3, 4, 4), cls_score=0.4, iou_score=0.8),
    ]
    kept = eiou.nms(dets, 0.5, "iou")
    assert [d.iou_score for d in kept] == [0.95, 0.8]
    assert [d.cls_score for d in eiou.nms(dets, 0.5, "cls")] == [0.9, 0.4]

    try:
        eiou.BBox(1, 0, 0, 1)
    except ValueError:
        pass
    else:
        raise AssertionError("inverted box accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
