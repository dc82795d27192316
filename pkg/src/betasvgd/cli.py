"""Command-line front end: presets, JSON configs and CSV output.

Configuration is resolved as built-in defaults, then the preset, then the
``--config`` file, then command-line flags. The resolved flat dictionary is
written to ``config.resolved.json``; feeding that file back through
``--config`` reproduces the run byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .flow1d import AbsoluteContinuityError, GridDensity, domain_for_mixture, run_flow
from .kernel import BANDWIDTH_RULES, KernelSpec
from .numerics import lemma_battery, logdet_bound_check
from .sampler import BetaConfig, DivergenceError, fmt_num, run_beta_svgd
from .stein import solve_stein_weights
from .target import DatasetError, GaussianMixture, LogisticPosterior, accuracy, load_dataset, synthesize_logistic_data

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

SAMPLE_PRESETS = ("fig3-1d-mixture", "fig9-2d-mixture", "fig5-gaussian-ksd", "fig6-weight-dev", "logreg-synthetic", "custom")
COMMAND_PRESETS = {
    "sample": SAMPLE_PRESETS,
    "weights": SAMPLE_PRESETS,
    "flow": ("flow-thm31", "custom"),
    "check-lemma": ("check-lemma",),
}
DEFAULT_PRESET = {"sample": "custom", "weights": "custom", "flow": "flow-thm31", "check-lemma": "check-lemma"}


class ConfigError(ValueError):
    pass


def _num(key, val, kind):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key} must be a number, got {val!r}")
    if kind is int:
        if isinstance(val, float) and not val.is_integer():
            raise ConfigError(f"{key} must be an integer, got {val!r}")
        return int(val)
    if not math.isfinite(val):
        raise ConfigError(f"{key} must be finite, got {val!r}")
    return float(val)


def _as_int(key, val):
    return _num(key, val, int)


def _as_float(key, val):
    return _num(key, val, float)


def _as_bool(key, val):
    if not isinstance(val, bool):
        raise ConfigError(f"{key} must be true or false, got {val!r}")
    return val


def _as_str(key, val):
    if not isinstance(val, str):
        raise ConfigError(f"{key} must be a string, got {val!r}")
    return val


def _optional(conv):
    def check(key, val):
        return None if val is None else conv(key, val)

    return check


def _as_vector(key, val):
    """A number (broadcast later) or a flat list of numbers."""
    if isinstance(val, list):
        return [_as_float(key, v) for v in val]
    return _as_float(key, val)


def _as_means(key, val):
    """A number ``c`` (one component at ``c * ones(dim)``) or a list of mean vectors."""
    if isinstance(val, list):
        if not val:
            raise ConfigError(f"{key} must not be empty")
        rows = [_as_vector(key, row) for row in val]
        return [row if isinstance(row, list) else [row] for row in rows]
    return _as_float(key, val)


# key -> (converter, default)
SCHEMA = {
    "preset": (_as_str, "custom"),
    "out": (_as_str, "out"),
    "seed": (_as_int, 0),
    "record_every": (_as_int, 1),
    "wall_time": (_as_bool, False),
    # beta-SVGD
    "beta": (_as_float, -0.5),
    "gamma": (_as_float, 0.1),
    "tau": (_as_float, 0.01),
    "refresh_period": (_as_int, 1),
    "mirror_iters": (_as_int, 40),
    "mirror_step": (_as_float, 0.5),
    "iters": (_as_int, 100),
    "auto_scale": (_as_bool, True),
    "particles": (_as_int, 100),
    "bandwidth": (_optional(_as_float), None),
    "bandwidth_rule": (_as_str, "dimension"),
    # mixture targets and initial particles
    "dim": (_as_int, 1),
    "target_weights": (_optional(_as_vector), None),
    "target_means": (_as_means, 0.0),
    "target_variances": (_as_vector, 1.0),
    "init_mean": (_as_vector, 0.0),
    "init_std": (_as_float, 1.0),
    # logistic regression
    "target": (_as_str, "mixture"),
    "dataset": (_optional(_as_str), None),
    "label_col": (_as_int, -1),
    "standardize": (_as_bool, False),
    "n_data": (_as_int, 2000),
    "holdout": (_as_float, 0.2),
    "minibatch": (_optional(_as_int), 256),
    "prior_precision": (_as_float, 0.01),
    # weights command
    "particles_file": (_optional(_as_str), None),
    # flow
    "grid_m": (_as_int, 2048),
    "horizon": (_as_float, 50.0),
    "dt0": (_as_float, 0.05),
    "rel_change": (_as_float, 0.05),
    "rho0_mean": (_as_float, -2.0),
    "rho0_std": (_as_float, 1.0),
    "target_std": (_as_float, 1.0),
    # lemma battery
    "trials": (_as_int, 1000),
    "max_order": (_as_int, 6),
}

_FIG5 = {
    "dim": 10,
    "target_means": 2.0,
    "particles": 300,
    "gamma": 0.1,
    "tau": 0.01,
    "refresh_period": 1,
    "mirror_iters": 40,
    "mirror_step": 0.3,
    "auto_scale": False,
    "iters": 100,
    "init_mean": 0.0,
    "init_std": 1.0,
}

PRESETS = {
    "custom": {},
    "fig3-1d-mixture": {
        "dim": 1,
        "target_weights": [0.4, 0.6],
        "target_means": [[2.0], [6.0]],
        "target_variances": 1.0,
        "particles": 200,
        "init_mean": 0.0,
        "init_std": 1.0,
        "iters": 100,
        "gamma": 0.2,
        "tau": 0.01,
        "refresh_period": 20,
        "mirror_iters": 40,
        "mirror_step": 0.3,
        "auto_scale": False,
    },
    "fig9-2d-mixture": {
        "dim": 2,
        "target_weights": [0.4, 0.2, 0.4],
        "target_means": [[2.0, 0.0], [4.0, 0.0], [3.0, -3.0]],
        "target_variances": 1.0,
        "particles": 200,
        "init_mean": [-2.0, 0.0],
        "init_std": 1.0,
        "iters": 500,
        "gamma": 0.2,
        "tau": 0.01,
        "refresh_period": 20,
        "mirror_iters": 40,
        "mirror_step": 0.3,
        "auto_scale": False,
    },
    "fig5-gaussian-ksd": dict(_FIG5),
    "fig6-weight-dev": dict(_FIG5),
    "logreg-synthetic": {
        "target": "logistic",
        "dim": 10,
        "n_data": 2000,
        "holdout": 0.2,
        "minibatch": 256,
        "prior_precision": 0.01,
        "particles": 100,
        "iters": 500,
        "gamma": 0.0005,
        "tau": 0.05,
        "refresh_period": 1,
        "mirror_iters": 200,
        "mirror_step": 2.0,
        "auto_scale": True,
        "init_mean": 0.0,
        "init_std": 1.0,
        "record_every": 10,
    },
    "flow-thm31": {
        "beta": -0.5,
        "grid_m": 2048,
        "horizon": 50.0,
        "dt0": 0.05,
        "rho0_mean": -2.0,
        "rho0_std": 1.0,
        "target_means": 2.0,
        "target_std": 1.0,
        "bandwidth_rule": "dimension",
    },
    "check-lemma": {"trials": 1000, "max_order": 6},
}


def validate(cfg: dict, command: str) -> dict:
    """Type-check every key, reject unknown ones and check ranges."""
    unknown = sorted(set(cfg) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    out = {key: conv(key, cfg[key]) for key, (conv, _) in SCHEMA.items() if key in cfg}
    preset = out["preset"]
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}")
    if preset not in COMMAND_PRESETS[command]:
        raise ConfigError(f"preset: {preset!r} cannot be used with the {command} command")
    if out["bandwidth_rule"] not in BANDWIDTH_RULES:
        raise ConfigError(f"bandwidth_rule must be one of {', '.join(BANDWIDTH_RULES)}")
    if out["bandwidth"] is not None and not out["bandwidth"] > 0:
        raise ConfigError("bandwidth must be positive")
    if out["bandwidth_rule"] == "fixed" and out["bandwidth"] is None:
        raise ConfigError("bandwidth must be set when bandwidth_rule is fixed")
    if out["target"] not in ("mixture", "logistic"):
        raise ConfigError("target must be 'mixture' or 'logistic'")
    positive_ints = ("record_every", "particles", "dim", "n_data", "grid_m", "trials", "max_order")
    for key in positive_ints:
        if out[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if out["grid_m"] < 2:
        raise ConfigError("grid_m must be at least 2")
    if out["minibatch"] is not None and out["minibatch"] < 1:
        raise ConfigError("minibatch must be a positive integer")
    for key in ("init_std", "prior_precision", "horizon", "dt0", "rho0_std", "target_std"):
        if not out[key] > 0:
            raise ConfigError(f"{key} must be positive")
    if not 0 < out["holdout"] < 1:
        raise ConfigError("holdout must lie in (0, 1)")
    if not 0 < out["rel_change"] < 1:
        raise ConfigError("rel_change must lie in (0, 1)")
    if out["seed"] < 0:
        raise ConfigError("seed must be nonnegative")
    beta_config(out)  # range checks on the sampler fields, messages name the key
    return out


def resolve(command: str, file_cfg: dict | None, cli_cfg: dict) -> dict:
    preset = cli_cfg.get("preset", (file_cfg or {}).get("preset", DEFAULT_PRESET[command]))
    if not isinstance(preset, str) or preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}")
    cfg = {key: default for key, (_, default) in SCHEMA.items()}
    cfg.update(PRESETS[preset])
    cfg.update(file_cfg or {})
    cfg.update(cli_cfg)
    cfg["preset"] = preset
    return validate(cfg, command)


def beta_config(cfg: dict) -> BetaConfig:
    try:
        return BetaConfig(
            beta=cfg["beta"],
            gamma=cfg["gamma"],
            tau=cfg["tau"],
            refresh_period=cfg["refresh_period"],
            mirror_iters=cfg["mirror_iters"],
            mirror_step=cfg["mirror_step"],
            total_iters=cfg["iters"],
            seed=cfg["seed"],
            auto_scale=cfg["auto_scale"],
        )
    except ValueError as exc:
        msg = str(exc).replace("total_iters", "iters")
        raise ConfigError(msg) from None


def kernel_spec(cfg: dict) -> KernelSpec:
    return KernelSpec(bandwidth=cfg["bandwidth"], bandwidth_rule=cfg["bandwidth_rule"])


def _broadcast(key, val, dim) -> np.ndarray:
    arr = np.full(dim, val, dtype=float) if not isinstance(val, list) else np.asarray(val, dtype=float)
    if arr.shape != (dim,):
        raise ConfigError(f"{key} has length {arr.size}, expected dim = {dim}")
    return arr


def mixture_target(cfg: dict) -> GaussianMixture:
    dim = cfg["dim"]
    means = cfg["target_means"]
    means = [[means] * dim] if not isinstance(means, list) else means
    means = np.asarray(means, dtype=float)
    if means.shape[1] != dim:
        raise ConfigError(f"target_means rows have length {means.shape[1]}, expected dim = {dim}")
    k = means.shape[0]
    weights = cfg["target_weights"]
    weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (k,):
        raise ConfigError(f"target_weights has length {weights.size}, expected {k}")
    if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, rel_tol=1e-9):
        raise ConfigError("target_weights must be nonnegative and sum to 1")
    variances = cfg["target_variances"]
    variances = np.full(k, variances) if not isinstance(variances, list) else np.asarray(variances, dtype=float)
    if variances.shape != (k,):
        raise ConfigError(f"target_variances has length {variances.size}, expected {k}")
    if np.any(variances <= 0):
        raise ConfigError("target_variances must be positive")
    return GaussianMixture(weights, means, variances)


def _streams(seed: int):
    """Independent generators for initial particles and data, plus the sampler's seed."""
    init_ss, data_ss, run_ss = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init_ss), np.random.default_rng(data_ss), int(run_ss.generate_state(1)[0])


def build_problem(cfg: dict):
    """Target, initial particles and optional extra metrics for a sample run."""
    init_rng, data_rng, _ = _streams(cfg["seed"])
    dim = cfg["dim"]
    metrics = None
    if cfg["target"] == "logistic":
        if cfg["dataset"]:
            data = load_dataset(cfg["dataset"], label_col=cfg["label_col"], standardize=cfg["standardize"])
        else:
            data, _ = synthesize_logistic_data(dim, cfg["n_data"], seed=int(data_rng.integers(2**63)))
        if data.feature_count != dim:
            raise ConfigError(f"dim = {dim} but the dataset has {data.feature_count} features")
        train, test = data.split(cfg["holdout"], seed=int(data_rng.integers(2**63)))
        target = LogisticPosterior.from_dataset(train, prior_precision=cfg["prior_precision"], minibatch=cfg["minibatch"])

        def metrics(X):
            return {"accuracy": accuracy(X, test)}

    else:
        target = mixture_target(cfg)
    mean = _broadcast("init_mean", cfg["init_mean"], dim)
    init = mean + cfg["init_std"] * init_rng.standard_normal((cfg["particles"], dim))
    return target, init, metrics


def write_config(cfg: dict, out: Path) -> None:
    with open(out / "config.resolved.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows(path: Path, rows, header=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt_num(v) for v in row])


def read_particles(path: str) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(tok) for tok in row])
            except ValueError:
                if k == 0 and not rows:
                    continue  # header
                raise ConfigError(f"particles_file row {k} is not numeric") from None
    if not rows:
        raise ConfigError("particles_file has no rows")
    if len({len(r) for r in rows}) != 1:
        raise ConfigError("particles_file rows have different lengths")
    return np.asarray(rows)


def cmd_sample(cfg: dict, out: Path) -> int:
    target, init, metrics = build_problem(cfg)
    bc = beta_config(cfg)
    bc.seed = _streams(cfg["seed"])[2]
    try:
        traj, X = run_beta_svgd(
            init,
            bc,
            target,
            kernel_spec(cfg),
            record_every=cfg["record_every"],
            metrics=metrics,
            record_wall_time=cfg["wall_time"],
        )
    except DivergenceError as exc:
        print(f"error: diverged at iteration {exc.iteration}", file=sys.stderr)
        return EXIT_DIVERGED
    traj.to_csv(out / "trajectory.csv")
    write_rows(out / "particles.csv", X)
    last = {name: series[-1] for name, series in traj.extra.items()}
    summary = f"iter {traj.iters[-1]}: ksd {traj.ksd[-1]:.6g}, weight_dev {traj.weight_dev[-1]:.6g}"
    summary += "".join(f", {k} {v:.6g}" for k, v in last.items())
    print(summary)
    return EXIT_OK


def cmd_weights(cfg: dict, out: Path) -> int:
    if not cfg["particles_file"]:
        raise ConfigError("particles_file is required for the weights command")
    X = read_particles(cfg["particles_file"])
    if X.shape[1] != cfg["dim"]:
        raise ConfigError(f"particles have {X.shape[1]} coordinates, expected dim = {cfg['dim']}")
    target, _, _ = build_problem(cfg)
    w, obj = solve_stein_weights(
        X, target, kernel_spec(cfg), m=cfg["mirror_iters"], r=cfg["mirror_step"], auto_scale=cfg["auto_scale"]
    )
    with open(out / "weights.csv", "w") as fh:
        for v in w:
            fh.write(fmt_num(v) + "\n")
        fh.write(f"objective,{fmt_num(obj)}\n")
    print(f"objective {obj:.6g}")
    return EXIT_OK


def cmd_flow(cfg: dict, out: Path) -> int:
    if cfg["target"] != "mixture" or isinstance(cfg["target_means"], list):
        raise ConfigError("target_means must be a single number for the flow command")
    mu, std = cfg["target_means"], cfg["target_std"]
    lo, hi = domain_for_mixture([cfg["rho0_mean"], mu], [cfg["rho0_std"], std])
    target = GaussianMixture.gaussian([mu], std**2)
    rho0 = GridDensity.gaussian(cfg["rho0_mean"], cfg["rho0_std"], lo, hi, cfg["grid_m"])
    try:
        rep = run_flow(rho0, target, kernel_spec(cfg), cfg["beta"], cfg["horizon"], cfg["dt0"], rel_change=cfg["rel_change"])
    except AbsoluteContinuityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    rep.to_csv(out / "flow.csv")
    pi = GridDensity.from_target(target, lo, hi, cfg["grid_m"])
    write_rows(out / "density.csv", zip(rho0.centers, rho0.values, rep.final.values, pi.values), ["x", "rho0", "rho_final", "pi"])

    problems = []
    if rep.mass_error > 1e-8:
        problems.append(f"mass error {rep.mass_error:.3e}")
    if rep.min_density < 0:
        problems.append(f"negative density {rep.min_density:.3e}")
    if np.any(np.diff(rep.renyi) > 1e-6):
        problems.append("Renyi divergence increased")
    if np.any(rep.avg_stein_fisher > 1.1 * rep.bound):
        problems.append("time-averaged Stein Fisher information exceeds the bound")
    ok = rep.identity_residual <= 0.05 * rep.identity_scale + 1e-6
    if not np.all(ok):
        problems.append("descent identity residual above 5%")
    print(
        f"T {rep.T:g}: avg I_Stein {rep.avg_stein_fisher[-1]:.6g}, bound {rep.bound:.6g}, "
        f"steps {rep.steps}, mass error {rep.mass_error:.2e}"
    )
    for p in problems:
        print(f"invariant violated: {p}", file=sys.stderr)
    return EXIT_INVARIANT if problems else EXIT_OK


LEMMA_HEADER = ["case", "trials", "lower_passes", "upper_passes", "worst_lower_slack", "worst_upper_slack", "median_halving_ratio"]


def lemma_rows(cfg: dict):
    res = lemma_battery(cfg["trials"], cfg["max_order"], seed=cfg["seed"])
    rows = [
        ["battery", res.trials, res.lower_passes, res.upper_passes, res.worst_lower_slack, res.worst_upper_slack, float(np.median(res.halving_ratios))]
    ]
    for name, B in (("rotation", [[0.0, 1.0], [-1.0, 0.0]]), ("identity", np.eye(2))):
        chk = logdet_bound_check(B, 0.05)
        rows.append([name, 1, int(chk.lower_ok), int(chk.upper_ok), chk.lower_slack, chk.upper_slack, float("nan")])
    return rows, res.lower_all_ok


def cmd_check_lemma(cfg: dict, out: Path) -> int:
    rows, lower_ok = lemma_rows(cfg)
    write_rows(out / "lemma.csv", rows, LEMMA_HEADER)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(LEMMA_HEADER)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt_num(v) for v in row])
    return EXIT_OK if lower_ok else EXIT_INVARIANT


COMMANDS = {"sample": cmd_sample, "weights": cmd_weights, "flow": cmd_flow, "check-lemma": cmd_check_lemma}


STRING_KEYS = {key for key, (conv, _) in SCHEMA.items() if conv is _as_str} | {"dataset", "particles_file"}
BOOL_KEYS = {key for key, (conv, _) in SCHEMA.items() if conv is _as_bool}


def _cli_values(args: dict) -> dict:
    """Flag text is taken verbatim for string keys and parsed as JSON otherwise."""
    out = {}
    for key, text in args.items():
        if key in STRING_KEYS:
            out[key] = text
            continue
        try:
            out[key] = json.loads(text)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of flat config keys")
    for key in SCHEMA:
        flag = "--" + key.replace("_", "-")
        if key in BOOL_KEYS:
            common.add_argument(flag, dest=key, nargs="?", const="true", default=argparse.SUPPRESS, metavar="BOOL")
        else:
            common.add_argument(flag, dest=key, default=argparse.SUPPRESS, metavar="VALUE")
    parser = argparse.ArgumentParser(prog="betasvgd", description="SVGD and beta-SVGD experiments", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "sample": "run SVGD / beta-SVGD on a target",
        "weights": "Stein importance weights of a particle file",
        "flow": "simulate the 1-D population flow on a grid",
        "check-lemma": "random battery for the log-determinant bounds",
    }
    for name, text in helps.items():
        sub.add_parser(name, help=text, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        file_cfg = None
        if config_path is not None:
            try:
                with open(config_path) as fh:
                    file_cfg = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"config: cannot read {config_path}: {exc}") from None
            if not isinstance(file_cfg, dict):
                raise ConfigError("config: top level must be a JSON object")
        cfg = resolve(command, file_cfg, _cli_values(args))
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_config(cfg, out)
        return COMMANDS[command](cfg, out)
    except (ConfigError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
