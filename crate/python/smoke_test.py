"""Smoke test for the flowdistill_py extension.

Build the module first, e.g.

    cargo build -p flowdistill-py --release --features extension-module
    cp target/release/libflowdistill_py.so python/flowdistill_py.so

then run `python3 python/smoke_test.py` from the workspace root.
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import flowdistill_py as fd


def main():
    sched = fd.NoiseSchedule()
    a, s = sched.alpha_sigma(0.5)
    assert abs(a * a + s * s - 1.0) < 1e-12

    try:
        fd.NoiseSchedule(beta_min=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative beta_min accepted")

    oracle = fd.MixtureOracle([(0.5, [2.0], 0.1), (0.5, [-2.0], 0.1)])
    assert oracle.dim == 1
    eps = oracle.epsilon_pred([0.3], 0.5)
    assert len(eps) == 1 and math.isfinite(eps[0])

    sample, _ = fd.ddim_sample(oracle, fd.initial_noise(0, 1), steps=200)
    assert abs(abs(sample[0]) - 2.0) < 0.1, sample

    ends = [fd.distill_2d(oracle, "fsd", iterations=200, seed=k) for k in range(8)]
    dispersion, hist = fd.ensemble_diversity(ends, oracle)
    assert sum(hist) == 8 and dispersion >= 0.0

    cam = fd.Camera(math.pi / 2, math.pi)
    field = fd.WorldMapNoise(8, 8, math.pi / 2, beta=1.0, seed=3)
    q1 = field.query(cam, seed=1)
    q2 = field.query(cam, seed=2)
    assert len(q1) == 3 * 8 * 8 and q1 == q2
    r, _ = fd.r_plus(cam, math.pi / 2)
    assert r > 0.0

    scene = fd.VoxelScene(resolution=4, jitter=0.5, seed=1)
    image, opacity = scene.render(cam)
    assert len(image) == 3 * 64 and len(opacity) == 64
    assert all(0.0 <= v <= 1.0 for v in opacity)

    with tempfile.TemporaryDirectory() as out:
        passed, summary = fd.run_experiment(json.dumps({"experiment": "verify-prop1"}), out)
        assert passed, summary
        assert os.path.exists(os.path.join(out, "prop1_report.json"))

    print("smoke test ok")


if __name__ == "__main__":
    main()
