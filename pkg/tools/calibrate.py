"""Rate sweep tool for recalibrating simulator constants.

Runs the production trial paths over seed batches and prints per-cell
success rates, so the effect of changing noise/geometry defaults is
visible at a glance. Not part of the installed package.

    python3 tools/calibrate.py [n_seeds]
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from arshare import presets
from arshare.harness import ExperimentConfig, TrialRunner
from arshare.rng import derive_seed


def rate(fn, seeds):
    return sum(1 for s in seeds if fn(s)["success"]) / len(seeds)


def main(n=50):
    seeds = [derive_seed("calibrate", i) for i in range(n)]
    t0 = time.time()

    with TrialRunner(ExperimentConfig(scenario="A", attack="benign")) as r:
        print(f"A benign:        {rate(r.benign_a_trial, seeds):.2f}")
    with TrialRunner(ExperimentConfig(scenario="A", attack="remote_read")) as r:
        for d in (0.25, 0.5, 0.75, 1.0, 1.5, 2.0):
            print(f"A read d={d:<4}:   {rate(lambda s: r.remote_read_a_trial(s, d), seeds):.2f}")
        print(f"A read clutter:  {rate(lambda s: r.remote_read_a_trial(s, 0.5, 'clutter'), seeds):.2f}")
    with TrialRunner(ExperimentConfig(scenario="A", attack="remote_write")) as r:
        print(f"A write:         {rate(lambda s: r.remote_write_a_trial(s, 0.5), seeds):.2f}")
        print(f"A write clutter: {rate(lambda s: r.remote_write_a_trial(s, 0.5, 'clutter'), seeds):.2f}")
        print(f"A write d=2:     {rate(lambda s: r.remote_write_a_trial(s, 2.0), seeds):.2f}")
    with TrialRunner(ExperimentConfig(scenario="A", attack="triggered_write")) as r:
        outs = [r.triggered_write_trial(s)["cases"] for s in seeds]
        for case in ("main", "case_1a", "case_1b"):
            print(f"A trigger {case}: {sum(o[case] for o in outs) / n:.2f}")
    with TrialRunner(ExperimentConfig(scenario="B", attack="benign")) as r:
        print(f"B benign:        {rate(r.benign_b_trial, seeds):.2f}")
    with TrialRunner(ExperimentConfig(scenario="B", attack="remote_read")) as r:
        for d in (0.25, 0.5, 1.0, 2.0):
            print(f"B read d={d:<4}:   {rate(lambda s: r.remote_read_b_trial(s, d), seeds):.2f}")
    with TrialRunner(ExperimentConfig(scenario="C", attack="benign")) as r:
        print(f"C benign:        {rate(r.benign_c_trial, seeds):.2f}")
    with TrialRunner(ExperimentConfig(scenario="C", attack="gps_swap")) as r:
        print(f"C swap:          {rate(lambda s: r.gps_swap_trial(s, True), seeds):.2f}")
    with TrialRunner(ExperimentConfig(scenario="C", attack="fake_object")) as r:
        print(f"C fake scaled:   {rate(lambda s: r.fake_object_trial(s, 'scaled'), seeds):.2f}")
        print(f"C fake unscaled: {rate(lambda s: r.fake_object_trial(s, 'unscaled'), seeds):.2f}")
    guarded = presets.scenario_a_state(defenses={"depth_check": {}})
    with TrialRunner(ExperimentConfig(scenario="A", attack="remote_read",
                                      state=guarded)) as r:
        print(f"A read w/depth:  {rate(lambda s: r.remote_read_a_trial(s, 0.5), seeds):.2f}")
    with TrialRunner(ExperimentConfig(scenario="A", attack="remote_read")) as r:
        print(f"token spoof:     {rate(lambda s: r.token_defense_trial(s, 'spoof'), seeds):.2f}")
        print(f"token genuine:   {rate(lambda s: r.token_defense_trial(s, 'genuine'), seeds):.2f}")
    print(f"[{time.time() - t0:.0f}s for {n} seeds/cell]")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 50)
