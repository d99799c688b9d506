"""Command-line interface.

    arshare serve --listen HOST:PORT [--scenario A|B|C]
    arshare attack --scenario {A,B,C} --kind KIND --seed N [options]
    arshare experiment --config exp.toml --out report.csv [--json report.json]
                       [--wire HOST:PORT]
    arshare scene gen --spec scene.toml --seed N [--out scene.json]

Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

import argparse
import json
import os
import sys

from . import presets
from .errors import ArShareError, ConfigError
from .harness import Cell, ExperimentConfig, TrialRunner, emit_report, run_experiment
from .protocol import serve
from .rng import derive_seed
from .shared_state import SharedStateStore
from .world import SceneSpec, generate_scene, scene_to_dict

ENV_ADDR = "ARSHARE_ADDR"


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def cmd_serve(args):
    store = SharedStateStore(presets.state_for_scenario(args.scenario))
    handle = serve(args.listen, store)
    host, port = handle.address
    print(f"serving scenario {args.scenario} shared state on {host}:{port}",
          flush=True)
    try:
        handle._thread.join()
    except KeyboardInterrupt:
        handle.close()
    return 0


def cmd_attack(args):
    kind_map = {
        "remote_read": ("remote_read", {}),
        "remote_write": ("remote_write", {}),
        "triggered_write": ("triggered_write", {}),
        "gps_swap": ("gps_swap", {}),
        "fake_object": ("fake_object", {}),
    }
    if args.kind not in kind_map:
        raise ConfigError(f"unknown attack kind: {args.kind}", field="kind")
    config = ExperimentConfig(scenario=args.scenario, attack=args.kind,
                              trials_per_cell=1, master_seed=args.seed,
                              distances=(args.distance,))
    wire = args.wire or os.environ.get(ENV_ADDR)
    cells = {
        "remote_read": Cell("attack", "remote_read",
                            {"distance": args.distance, "condition": "static"}),
        "remote_write": Cell("attack", "remote_write",
                             {"distance": args.distance, "condition": "static"}),
        "triggered_write": Cell("attack", "triggered_write", {"case": "main"}),
        "gps_swap": Cell("attack", "gps_swap", {"swapped": True}),
        "fake_object": Cell("attack", "fake_object", {"mode": "scaled"}),
    }
    with TrialRunner(config, wire_address=wire) as runner:
        out = runner.run_cell_trial(cells[args.kind],
                                    derive_seed(args.seed, "cli-attack"))
    line = {"attack_kind": args.kind, "scenario": args.scenario,
            "seed": args.seed, "success": bool(out["success"]),
            "detail": out.get("detail", {})}
    print(json.dumps(line, sort_keys=True))
    return 0


def cmd_experiment(args):
    config = ExperimentConfig.from_toml(args.config)
    wire = args.wire or os.environ.get(ENV_ADDR)
    report = run_experiment(config, wire_address=wire)
    emit_report(report, args.out, fmt="csv")
    if args.json:
        emit_report(report, args.json, fmt="json")
    for cell in report["cells"]:
        print(f"{cell['cell_id']}: {cell['successes']}/{cell['trials']}"
              f" rate={cell['success_rate']:.4g}")
    print(f"report written to {args.out}")
    return 0


def cmd_scene_gen(args):
    spec = SceneSpec.from_dict(_load_toml(args.spec)) if args.spec else presets.indoor_spec()
    scene = generate_scene(spec, args.seed)
    payload = json.dumps(scene_to_dict(scene), sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
        print(f"scene written to {args.out}")
    else:
        print(payload, end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="arshare",
                                     description="AR shared-state simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the shared-state service over TCP")
    p.add_argument("--listen", default="127.0.0.1:0", help="host:port to bind")
    p.add_argument("--scenario", default="A", choices=["A", "B", "C"])
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("attack", help="run a single seeded attack trial")
    p.add_argument("--scenario", required=True, choices=["A", "B", "C"])
    p.add_argument("--kind", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--distance", type=float, default=0.5)
    p.add_argument("--wire", default=None, help="host:port of a running server")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("experiment", help="run a configured experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--json", default=None, help="optional full JSON report path")
    p.add_argument("--wire", default=None, help="host:port of a running server")
    p.set_defaults(fn=cmd_experiment)

    p_scene = sub.add_parser("scene", help="scene utilities")
    scene_sub = p_scene.add_subparsers(dest="scene_command", required=True)
    p = scene_sub.add_parser("gen", help="generate a scene and export JSON")
    p.add_argument("--spec", default=None, help="TOML scene spec")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_scene_gen)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ArShareError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
