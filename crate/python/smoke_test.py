"""Smoke test for the kaneq_py extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import os
import tempfile

import kaneq_py as kq


def main():
    link = kq.LinkConfig(rop=-4.0)
    assert link.rop == -4.0
    frame = kq.simulate(link, 20000, seed=1)
    assert len(frame) == 20000
    assert len(frame.samples) == 2 * len(frame)
    assert abs(frame.accumulated_dispersion - 35.86) < 0.01
    print(f"frame: {frame}, slicer BER {frame.slicer_ber():.3e}")

    spline = kq.SplineFunction([0.5 * k for k in range(9)])
    for k, p in enumerate(spline.points):
        assert spline.eval(p) == spline.coeffs[k]
    assert abs(spline.eval_lut(0.3) - spline.eval_basis_sum(0.3)) < 1e-12

    for taps in (21, 51, 121, 321):
        assert kq.Equalizer(f"fir-k{taps}-s2").rvms == taps

    model = kq.Equalizer("kan1-k21-s2-g9", seed=2)
    record = model.train(frame, iterations=200, test_blocks=10)
    assert len(record.loss) == 200
    assert record.loss[-1] < record.loss[0]
    print(f"{model}: final mean BER {record.final_mean_ber:.3e}")

    pruned = model.prune(20.0)
    assert pruned.rvms <= model.rvms
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.kqm")
        pruned.save(path)
        back = kq.Equalizer.load(path)
        assert back.descriptor == pruned.descriptor
        assert back.forward(frame.samples[:400]) == pruned.forward(frame.samples[:400])

    front = kq.pareto_front([(21, 1e-2), (51, 2e-2), (121, 1e-3)])
    assert front == [0, 2]
    assert len(kq.prune_thresholds()) == 22
    print("smoke test passed")


if __name__ == "__main__":
    main()
