"""Smoke test for the pcalign_py extension.

Build and install first, e.g. `pip install ./crates/py` (needs maturin), then
run `python python/smoke_test.py`.
"""

import json
import math
import os
import tempfile

import pcalign_py as pc


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    t = pc.GroundTransform(1.0, -2.0, 0.3)
    ident = t.compose(t.invert())
    assert close(ident.tx, 0.0) and close(ident.ty, 0.0) and close(ident.yaw, 0.0), ident
    (p,) = t.apply([[1.0, 0.0, 0.5]])
    assert close(p[0], 1.0 + math.cos(0.3)) and close(p[1], -2.0 + math.sin(0.3)) and p[2] == 0.5
    assert close(pc.noise_sigma(40.0), 0.025)

    scenes = pc.generate_scenes(6, seed=3, noise=False)
    assert len(scenes) == 6 and all(len(s.cloud1) >= 16 for s in scenes)

    src = scenes[0].cloud1
    motion = pc.GroundTransform(0.02, -0.01, math.radians(1.0))
    res = pc.icp_p2p(src, motion.apply(src))
    assert res.converged and close(res.transform.yaw, motion.yaw, 1e-6), res.transform

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "s.bin")
        pc.write_dataset(scenes, path)
        back = pc.read_dataset(path)
        assert [s.gt.tx for s in back] == [s.gt.tx for s in scenes]

        cfg = json.loads(pc.AlignNet().config_json())
        cfg.update(n_points=32, coarse_widths=[8, 16, 32], fine_widths=[8, 16, 32],
                   embed_widths=[8, 16, 64], head_widths=[32, 16])
        net = pc.AlignNet(json.dumps(cfg))
        preds = net.predict(scenes, batch=3)
        assert len(preds) == len(scenes)
        ckpt = os.path.join(d, "net.ckpt")
        net.save(ckpt)
        again = pc.AlignNet.load(ckpt).predict(scenes, batch=3)
        assert [(a.tx, a.ty, a.yaw) for a in preds] == [(b.tx, b.ty, b.yaw) for b in again]

        report = json.loads(pc.evaluate([s.gt for s in scenes], scenes))
        assert report["filters"][0]["bins"][0]["accuracy"] == 1.0

        assert pc.cli(["gen", "--help"]) == 0
        assert pc.cli(["eval", "--pred", "x", "--dataset", os.path.join(d, "missing.bin")]) == 2

    print("pcalign_py smoke test passed")


if __name__ == "__main__":
    main()
