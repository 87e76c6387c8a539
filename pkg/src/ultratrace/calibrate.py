"""Tune the shared ambient noise level of the scenario presets.

Physical levels (speaker output, room noise, fabric loss) only matter
relative to each other, so one knob is searched: the ambient sigma both
presets share. For each candidate the full-volume noisy_in_pocket sweep is
run and its knee measured; the middle of the candidates that put the knee
on the target is written back to presets.json.

    python -m ultratrace.calibrate --sigmas 0.09,0.1,0.11,0.12,0.13 --reps 5
"""

from __future__ import annotations

import argparse
import json
import logging
from dataclasses import replace
from importlib import resources
from typing import Dict, Optional, Sequence

from .sim import get_preset, knee, sweep_distance

log = logging.getLogger(__name__)

TARGET_PRESET = "noisy_in_pocket"


def knee_for_sigma(sigma: float, distances_ft: Sequence[float], reps: int, seed: int = 0,
                   preset: str = TARGET_PRESET, threshold: float = 0.9) -> float:
    p = get_preset(preset)
    p.ambient_sigma = sigma
    base = replace(p.config(0.0, seed=seed), scene=p.scene(1.0), repetitions=reps,
                   decode_all=False)
    curve = sweep_distance(base, distances_ft)
    for pt in curve:
        log.info("sigma=%.4f d=%4.1f ft r=%.3f +- %.3f", sigma, pt.distance_ft, pt.mean_r, pt.stddev)
    return knee(curve, threshold)


def calibrate(sigmas: Sequence[float], target_ft: float = 6.0,
              distances_ft: Sequence[float] = tuple(range(1, 13)), reps: int = 5,
              seed: int = 0) -> Optional[float]:
    """Return the median sigma whose knee equals ``target_ft``, or None."""
    knees: Dict[float, float] = {}
    for s in sorted(sigmas):
        knees[s] = knee_for_sigma(s, distances_ft, reps, seed)
        print(f"sigma {s:.4f}: knee {knees[s]:g} ft", flush=True)
    hits = [s for s, k in knees.items() if k == target_ft]
    if not hits:
        return None
    return hits[len(hits) // 2]


def write_sigma(sigma: float, path: Optional[str] = None) -> str:
    if path is None:
        path = str(resources.files("ultratrace").joinpath("presets.json"))
    with open(path) as f:
        data = json.load(f)
    for d in data["presets"].values():
        d["ambient_sigma"] = round(float(sigma), 6)
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    return path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigmas", default="0.09,0.1,0.11,0.12,0.13")
    ap.add_argument("--target-ft", type=float, default=6.0)
    ap.add_argument("--distances", default="1..12")
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--write", action="store_true", help="store the result in presets.json")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    if ".." in args.distances:
        lo, hi = (float(x) for x in args.distances.split(".."))
        dists = [float(d) for d in range(int(lo), int(hi) + 1)]
    else:
        dists = [float(x) for x in args.distances.split(",")]
    sigma = calibrate([float(s) for s in args.sigmas.split(",")], args.target_ft, dists,
                      args.reps, args.seed)
    if sigma is None:
        print("no candidate puts the knee on target; widen --sigmas")
        return 2
    print(f"chosen ambient_sigma = {sigma:g}")
    if args.write:
        print("wrote", write_sigma(sigma))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
