"""Command-line entry point binding config files to the pipelines.

A single TOML config describes the problem, mesh and study; subcommands
run the mesh report, a single trajectory, or the full convergence study.
All randomness flows from the seed in the config (or the --seed
override); nothing is ever seeded from the clock.
"""

import argparse
import math
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .experiment import ExperimentConfig, run_study, study_summary
from .mesh import (
    MeshSizeError,
    accumulated_mesh_points,
    bellman_points,
    build_artm,
    build_augmented_mesh,
    observation_times,
)
from .noise import SeedInfo, sample_paths
from .problem import builtin, list_problems
from .schemes import DivergenceError, SchemeKind, UniformGrid, run_trajectory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_MESH_CAP = 4

_DEFAULT_SCHEMES = ("em", "mem", "milstein-simple", "milstein-refined", "mm-simple", "mm-refined")

CONFIG_KEYS = {
    "problem": {"name": str, "delays": list, "T": (int, float)},
    "mesh": {
        "h_initial": (int, float),
        "h_refined_initial": (int, float),
        "extra_observation_times": list,
    },
    "study": {
        "schemes": list,
        "delayed_values": str,
        "h_initial_list": list,
        "n_trials": int,
        "seed": int,
        "observation_times": list,
    },
    "output": {"dir": str, "formats": list},
}

_EPILOG = """\
config file sections and keys (TOML):
  [problem]  name, delays, T
  [mesh]     h_initial, h_refined_initial, extra_observation_times
  [study]    schemes, delayed_values, h_initial_list, n_trials, seed,
             observation_times
  [output]   dir, formats

scheme names: em, mem, milstein-simple, milstein-refined, mm-simple,
mm-refined; delayed_values is "mesh" or "interpolation".

exit codes: 0 ok, 2 config error, 3 divergence, 4 mesh cap exceeded.
worker count: --workers flag, else SDDEINT_WORKERS, else all cores.
"""


class ConfigError(ValueError):
    pass


def load_config(path):
    """Parse and strictly validate a TOML config: unknown sections or keys
    are errors, as are non-finite or non-positive numbers where a positive
    value is required."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path!r}: {exc}") from exc
    for section, content in raw.items():
        if section not in CONFIG_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"config section [{section}] must be a table")
        for key, value in content.items():
            if key not in CONFIG_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            expected = CONFIG_KEYS[section][key]
            if not isinstance(value, expected):
                raise ConfigError(
                    f"key {key!r} in [{section}] has wrong type {type(value).__name__}"
                )
    if "problem" not in raw or "name" not in raw["problem"]:
        raise ConfigError("config requires [problem] with a 'name' key")
    for section, key in (("problem", "T"), ("mesh", "h_initial"), ("mesh", "h_refined_initial")):
        value = raw.get(section, {}).get(key)
        if value is not None and (not math.isfinite(value) or value <= 0):
            raise ConfigError(f"{key!r} in [{section}] must be finite and positive")
    return raw


def _problem_from(cfg):
    section = cfg["problem"]
    return builtin(
        section["name"],
        delays=tuple(section["delays"]) if "delays" in section else None,
        terminal_time=section.get("T"),
    )


def _study_config(cfg, args):
    problem = _problem_from(cfg)
    study = cfg.get("study", {})
    mesh_cfg = cfg.get("mesh", {})
    mode = {"mesh": "mesh_exact", "interpolation": "linear_interpolation"}.get(
        study.get("delayed_values", "mesh")
    )
    if mode is None:
        raise ConfigError("study.delayed_values must be 'mesh' or 'interpolation'")
    try:
        schemes = tuple(
            SchemeKind.parse(s, mode) for s in study.get("schemes", _DEFAULT_SCHEMES)
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    h_list = study.get("h_initial_list")
    if not h_list:
        if "h_initial" not in mesh_cfg:
            raise ConfigError("study.h_initial_list or mesh.h_initial is required")
        h_list = [mesh_cfg["h_initial"]]
    h_refined = mesh_cfg.get("h_refined_initial")
    if h_refined is None:
        raise ConfigError("mesh.h_refined_initial is required for studies")
    seed = args.seed if args.seed is not None else study.get("seed", 0)
    n_trials = args.trials if args.trials is not None else study.get("n_trials", 200)
    obs = study.get("observation_times")
    return ExperimentConfig(
        problem=cfg["problem"]["name"],
        delays=tuple(cfg["problem"].get("delays", problem.delays.delays)),
        terminal_time=cfg["problem"].get("T", problem.terminal_time),
        h_initial_list=tuple(float(h) for h in h_list),
        h_refined_initial=float(h_refined),
        schemes=schemes,
        n_trials=int(n_trials),
        master_seed=int(seed),
        observation_times=tuple(float(t) for t in obs) if obs else None,
    )


def _out_path(cfg, args, default_name):
    if args.out:
        return args.out
    out_dir = cfg.get("output", {}).get("dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, default_name)


def cmd_mesh(cfg, args):
    prob = _problem_from(cfg)
    delays = prob.delays
    mesh_cfg = cfg.get("mesh", {})
    if "h_initial" not in mesh_cfg:
        raise ConfigError("mesh.h_initial is required for the mesh report")
    h = float(mesh_cfg["h_initial"])
    extra = [float(t) for t in mesh_cfg.get("extra_observation_times", [])]
    obs = observation_times(delays, h)
    if extra:
        obs = np.sort(np.concatenate([obs, np.asarray(extra)]))
    mesh = build_augmented_mesh(obs, delays)
    enumerated = accumulated_mesh_points(delays, h)
    steps = mesh.step_sizes()
    bell = bellman_points(delays)
    print(f"delays: {list(delays.delays)}  T={delays.terminal_time:g}  h_initial={h:g}")
    print(f"mesh size (bitwise-dedup enumeration): {len(enumerated)}")
    print(f"solver mesh points (tolerance-dedup): {len(mesh)}")
    print(f"tolerance-merged distinct points: {mesh.merged_distinct}")
    print(f"step size min/mean/max: {steps.min():.6g} / {steps.mean():.6g} / {steps.max():.6g}")
    print("Bellman boundaries: " + ", ".join(f"{b:.12g}" for b in bell))
    if args.points_csv:
        with open(args.points_csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t\n")
            for t in mesh.points:
                fh.write(f"{t:.17g}\n")
        print(f"wrote {len(mesh)} mesh points to {args.points_csv}")
    return EXIT_OK


def cmd_simulate(cfg, args):
    prob = _problem_from(cfg)
    study_cfg = _study_config(cfg, args)
    kind = study_cfg.schemes[0]
    h = study_cfg.h_initial_list[0]
    delays = prob.delays
    extra = [t for t in (study_cfg.observation_times or ()) if t > 0.0]
    artm = build_artm(delays, h, study_cfg.h_refined_initial, extra_obs=extra)
    if kind.delayed_value_mode == "mesh_exact":
        obs = observation_times(delays, h)
        if extra:
            obs = np.sort(np.concatenate([obs, np.asarray(extra)]))
        grid = build_augmented_mesh(obs, delays)
    else:
        grid = UniformGrid.create(h, delays.terminal_time)
    paths = sample_paths(artm, prob.m, SeedInfo(study_cfg.master_seed, 0))
    traj = run_trajectory(prob, kind, grid, paths)
    out = _out_path(cfg, args, "trajectory.csv")
    header = "t," + ",".join(f"y{i + 1}" for i in range(prob.d))
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for t, row in zip(traj.times, traj.values):
            fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")
    print(f"wrote trajectory ({kind.label}, h={h:g}) to {out}")
    return EXIT_OK


def cmd_converge(cfg, args):
    study_cfg = _study_config(cfg, args)
    workers = _resolve_workers(args)
    table = run_study(study_cfg, workers=workers)
    out = _out_path(cfg, args, "errors.csv")
    table.write_csv(out)
    print(f"wrote error table to {out}")
    print(study_summary(table))
    return EXIT_OK


def cmd_list_problems(_cfg, _args):
    for name in list_problems():
        print(name)
    return EXIT_OK


def _resolve_workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get("SDDEINT_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"SDDEINT_WORKERS must be an integer, got {env!r}") from exc
    return None  # run_study defaults to all cores


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sddeint",
        description="Strong-order schemes for stochastic delay-differential equations",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text, epilog=_EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if needs_config:
            p.add_argument("config", help="path to the TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override study.seed")
        p.add_argument("--trials", type=int, default=None, help="override study.n_trials")
        p.add_argument("--out", default=None, help="override the output path")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: SDDEINT_WORKERS or all cores)")
        p.set_defaults(func=func, needs_config=needs_config)
        return p

    mesh_p = add("mesh", cmd_mesh, "report the augmented mesh for the configured step")
    mesh_p.add_argument("--points-csv", default=None,
                        help="also dump the solver mesh points to this CSV file")
    add("simulate", cmd_simulate, "run one trajectory and write it as CSV")
    add("converge", cmd_converge, "run the Monte Carlo convergence study")
    add("list-problems", cmd_list_problems, "list registered problem names",
        needs_config=False)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.needs_config else None
        return args.func(cfg, args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshSizeError as exc:
        print(f"mesh cap exceeded: {exc}", file=sys.stderr)
        return EXIT_MESH_CAP
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
