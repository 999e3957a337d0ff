"""In-hand alignment statistics over seeded episodes with random contact offsets.

    python3 scripts/closed_loop_convergence.py --episodes 200 --out convergence.json
"""
import argparse
import json
import time

import numpy as np

from smallgrasp.controller import ControllerParams, load_controller_params
from smallgrasp.kinematics import GripperModel
from smallgrasp.simworld.closedloop import hand_episode, run_control_loop
from smallgrasp.simworld.shapes import CATALOG


def run(episodes, seed, params, model, zone=5.0):
    rows = []
    for ep in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, ep]))
        cid = int(rng.integers(1, 21))
        radius, phase = zone * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
        offset = (radius * np.cos(phase), radius * np.sin(phase))
        att, q0 = hand_episode(CATALOG[cid], cid, offset, model, rng, params)
        r = run_control_loop(att, model, params, q0, rng)
        rows.append({"episode": ep, "class_id": cid, "offset": [round(v, 4) for v in offset],
                     "outcome": r.outcome, "steps": r.steps,
                     "monotone_fraction": round(r.monotone_fraction(), 4),
                     "theta_first": round(r.thetas[0], 5) if r.thetas else None,
                     "theta_last": round(r.thetas[-1], 5) if r.thetas else None})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--controller-config")
    ap.add_argument("--out", default="convergence.json")
    args = ap.parse_args()
    params = load_controller_params(args.controller_config) if args.controller_config \
        else ControllerParams()
    t0 = time.perf_counter()
    rows = run(args.episodes, args.seed, params, GripperModel())
    conv = [r for r in rows if r["outcome"] == "converged"]
    mono = [r for r in conv if r["monotone_fraction"] >= 0.9]
    summary = {"episodes": len(rows), "converged": len(conv),
               "lost_contact": sum(r["outcome"] == "lost_contact" for r in rows),
               "monotone_ge_90": len(mono),
               "all_conditions_rate": round(len(mono) / len(rows), 4),
               "median_steps": float(np.median([r["steps"] for r in conv])) if conv else None,
               "seconds": round(time.perf_counter() - t0, 1)}
    with open(args.out, "w") as fh:
        json.dump({"summary": summary, "episodes": rows}, fh, indent=1)
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
