"""Brute-force recount of an evaluation report, written without pcalign.

Usage: recount_report.py TRUTH.json PRED.jsonl [--axis-symmetric]

TRUTH.json holds a list of {"tx", "ty", "yaw", "distance_d"} records in
sample order. Prints a JSON object with one entry per distance filter.
"""

import json
import math
import sys

FILTERS = [80.0, 20.0, 5.0]
BINS = [(0.02, 1.0), (0.10, 5.0), (0.20, 10.0)]


def wrap(a):
    a = math.fmod(a, 2 * math.pi)
    if a > math.pi:
        a -= 2 * math.pi
    elif a <= -math.pi:
        a += 2 * math.pi
    return a


def errors(pred, gt, symmetric):
    t = math.hypot(pred["tx"] - gt["tx"], pred["ty"] - gt["ty"])
    r = abs(wrap(pred["yaw"] - gt["yaw"]))
    if symmetric:
        r = min(r, math.pi - r)
    return t, math.degrees(r)


def main(argv):
    symmetric = "--axis-symmetric" in argv
    paths = [a for a in argv if not a.startswith("--")]
    with open(paths[0]) as f:
        truth = json.load(f)
    preds = {}
    with open(paths[1]) as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                preds[rec["sample_id"]] = rec
    if sorted(preds) != list(range(len(truth))):
        sys.exit("prediction ids do not cover the samples exactly once")

    out = []
    for limit in FILTERS:
        errs = [errors(preds[i], g, symmetric) for i, g in enumerate(truth) if g["distance_d"] <= limit]
        n = len(errs)
        row = {"max_distance_m": limit, "count": n}
        for tau, rho in BINS:
            hits = sum(1 for t, r in errs if t <= tau and r <= rho)
            row["acc_%g_%g" % (tau, rho)] = hits / n if n else None
        row["rmse_t_m"] = math.sqrt(sum(t * t for t, _ in errs) / n) if n else None
        row["rmse_r_deg"] = math.sqrt(sum(r * r for _, r in errs) / n) if n else None
        out.append(row)
    json.dump(out, sys.stdout)


if __name__ == "__main__":
    main(sys.argv[1:])
