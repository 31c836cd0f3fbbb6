"""Command-line entry points: ``bubble``, ``decompose`` and ``sweep``.

Options may also come from a JSON config file (``--config``) whose keys
mirror the long flag names; flags given on the command line win.  Output
files go to ``--output-dir``, overridden by ``CKNLAB_OUTPUT_DIR``.

Exit codes: 0 success, 2 configuration error, 3 input-file error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import io as cio
from .bubbles import BubbleSpec, dpsi_profile, kernel_profile, psi_profile
from .calculus import (bubble_count, dual_norm, lp_norm, norm, residual,
                       sobolev_constant)
from .cylinder import DEFAULT_MAX_MODE, DEFAULT_N_T, make_grid, make_params
from .decompose import FitError, decompose, manifold_distance
from .linops import apply_L
from .stability_lab import (CorrectionLevel, ExampleSpec, fit_by_regime,
                            run_sweep)

__all__ = ["main", "build_parser", "RunConfig", "ConfigError", "PRESETS"]

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


class _NumericFailure(RuntimeError):
    pass


# sweep presets; explicit flags and config entries override every key
PRESETS = {
    "kernel": {"d": 3, "p": 2.0, "beta_min": 0.02, "beta_max": 0.2, "n_beta": 8,
               "log_beta": True, "r_min": 14.0, "r_max": 14.0, "n_r": 1},
    "interaction": {"d": 3, "p": 2.0, "beta_min": 0.0, "beta_max": 0.0, "n_beta": 1,
                    "q_max": 1e-3, "q_min": 1e-8, "n_r": 6},
    "grid": {"d": 3, "p": 2.0, "beta_min": 0.02, "beta_max": 0.2, "n_beta": 6,
             "log_beta": True, "r_min": 8.0, "r_max": 16.0, "n_r": 6},
}
# for 1 < p < 2 the interaction law is only asymptotic for Q below ~1e-9
_SUBQUADRATIC_WINDOW = {"q_max": 1e-9, "q_min": 1e-13, "refine": 4}

_DEFAULTS = {
    "d": 3, "p": 2.0, "n_t": None, "pad": None, "max_mode": DEFAULT_MAX_MODE,
    "output_dir": "cknlab_out", "seed": 0, "workers": 1, "refine": 1,
    "nu": None, "n_starts": 3, "preset": None,
    "beta_min": 0.0, "beta_max": 0.0, "n_beta": 1, "log_beta": False,
    "r_min": None, "r_max": None, "n_r": 0, "q_min": None, "q_max": None,
    "level": CorrectionLevel.FULL.value, "positive_part": False,
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    d: int
    p: float
    n_t: int | None
    pad: float | None
    max_mode: int
    output_dir: str
    seed: int
    workers: int
    refine: int
    nu: int | None
    n_starts: int
    preset: str | None
    beta_min: float
    beta_max: float
    n_beta: int
    log_beta: bool
    r_min: float | None
    r_max: float | None
    n_r: int
    q_min: float | None
    q_max: float | None
    level: str
    positive_part: bool
    field: str | None = None

    def params(self):
        try:
            return make_params(self.d, self.p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def betas(self) -> np.ndarray:
        if self.n_beta <= 0:
            return np.array([])
        if self.log_beta:
            if not 0 < self.beta_min <= self.beta_max:
                raise ConfigError("log-spaced beta needs 0 < beta-min <= beta-max")
            return np.geomspace(self.beta_min, self.beta_max, self.n_beta)
        return np.linspace(self.beta_min, self.beta_max, self.n_beta)

    def radii(self) -> np.ndarray:
        if self.n_r <= 0:
            return np.array([])
        if self.q_min is not None or self.q_max is not None:
            if self.q_min is None or self.q_max is None or not 0 < self.q_min <= self.q_max < 1:
                raise ConfigError("q-min and q-max must satisfy 0 < q-min <= q-max < 1")
            g = self.params().sqrt_lambda
            return np.linspace(-math.log(self.q_max) / g, -math.log(self.q_min) / g, self.n_r)
        if self.r_min is None or self.r_max is None:
            raise ConfigError("sweep needs an R range (r-min, r-max) or a Q range")
        if not 0 < self.r_min <= self.r_max:
            raise ConfigError("R range must satisfy 0 < r-min <= r-max")
        return np.linspace(self.r_min, self.r_max, self.n_r)

    def schedule(self) -> list:
        params = self.params()
        level = CorrectionLevel(self.level)
        return [ExampleSpec(params, float(R), float(b), correction_level=level,
                            positive_part=self.positive_part)
                for b in self.betas() for R in self.radii()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values (flags win)")
    common.add_argument("--d", type=int, default=None)
    common.add_argument("--p", type=float, default=None)
    common.add_argument("--n-t", type=int, default=None, help="grid points in t")
    common.add_argument("--pad", type=float, default=None)
    common.add_argument("--max-mode", type=int, default=None)
    common.add_argument("--output-dir", default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)

    parser = argparse.ArgumentParser(prog="cknlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bubble", parents=[common], help="bubble diagnostics and field file")

    dec = sub.add_parser("decompose", parents=[common], help="decompose a field file")
    dec.add_argument("field", help="field JSON file")
    dec.add_argument("--nu", type=int, default=None, help="bubble count (default: from energy)")
    dec.add_argument("--n-starts", type=int, default=None)

    sw = sub.add_parser("sweep", parents=[common], help="(beta, R) sweep with exponent fits")
    sw.add_argument("--preset", choices=sorted(PRESETS), default=None)
    sw.add_argument("--beta-min", type=float, default=None)
    sw.add_argument("--beta-max", type=float, default=None)
    sw.add_argument("--n-beta", type=int, default=None)
    sw.add_argument("--log-beta", action=argparse.BooleanOptionalAction, default=None)
    sw.add_argument("--r-min", type=float, default=None)
    sw.add_argument("--r-max", type=float, default=None)
    sw.add_argument("--n-r", type=int, default=None)
    sw.add_argument("--q-min", type=float, default=None)
    sw.add_argument("--q-max", type=float, default=None)
    sw.add_argument("--level", choices=[c.value for c in CorrectionLevel], default=None)
    sw.add_argument("--positive-part", action=argparse.BooleanOptionalAction, default=None)
    sw.add_argument("--refine", type=int, default=None, help="divide the default spacing by this")
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    """Merge defaults < preset < config file < flags."""
    file_vals = {}
    if ns.config:
        doc = cio.load_json(ns.config)
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, val in doc.items():
            name = str(key).replace("-", "_")
            if name not in _DEFAULTS:
                raise ConfigError(f"unknown config key '{key}'")
            file_vals[name] = val
    flags = {k: v for k, v in vars(ns).items()
             if k in _DEFAULTS and v is not None}
    preset_name = flags.get("preset", file_vals.get("preset"))
    merged = dict(_DEFAULTS)
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset '{preset_name}'")
        merged.update(PRESETS[preset_name])
    merged.update(file_vals)
    merged.update(flags)
    if preset_name == "interaction" and float(merged["p"]) < 2:
        for key, val in _SUBQUADRATIC_WINDOW.items():
            if key not in file_vals and key not in flags:
                merged[key] = val
    try:
        cfg = RunConfig(command=ns.command, field=getattr(ns, "field", None), **{
            "d": int(merged["d"]), "p": float(merged["p"]),
            "n_t": None if merged["n_t"] is None else int(merged["n_t"]),
            "pad": None if merged["pad"] is None else float(merged["pad"]),
            "max_mode": int(merged["max_mode"]), "output_dir": str(merged["output_dir"]),
            "seed": int(merged["seed"]), "workers": int(merged["workers"]),
            "refine": int(merged["refine"]),
            "nu": None if merged["nu"] is None else int(merged["nu"]),
            "n_starts": int(merged["n_starts"]), "preset": preset_name,
            "beta_min": float(merged["beta_min"]), "beta_max": float(merged["beta_max"]),
            "n_beta": int(merged["n_beta"]), "log_beta": bool(merged["log_beta"]),
            "r_min": None if merged["r_min"] is None else float(merged["r_min"]),
            "r_max": None if merged["r_max"] is None else float(merged["r_max"]),
            "n_r": int(merged["n_r"]),
            "q_min": None if merged["q_min"] is None else float(merged["q_min"]),
            "q_max": None if merged["q_max"] is None else float(merged["q_max"]),
            "level": str(merged["level"]), "positive_part": bool(merged["positive_part"]),
        })
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid option value: {exc}") from exc
    cfg.params()
    if cfg.n_t is not None and (cfg.n_t < 9 or cfg.n_t % 2 == 0):
        raise ConfigError("n-t must be an odd integer >= 9")
    if cfg.pad is not None and not cfg.pad > 0:
        raise ConfigError("pad must be positive")
    if cfg.max_mode < 1 or cfg.workers < 1 or cfg.refine < 1 or cfg.n_starts < 0:
        raise ConfigError("max-mode, workers and refine must be >= 1; n-starts >= 0")
    if cfg.level not in {c.value for c in CorrectionLevel}:
        raise ConfigError(f"unknown correction level '{cfg.level}'")
    if cfg.nu is not None and cfg.nu < 1:
        raise ConfigError("nu must be >= 1")
    return cfg


def _relative(num: float, den: float) -> float:
    return num / den if den > 0 else float("nan")


def cmd_bubble(cfg: RunConfig) -> dict:
    params = cfg.params()
    grid = make_grid(params, [0.0], pad=cfg.pad, n_t=cfg.n_t or DEFAULT_N_T,
                     max_mode=cfg.max_mode)
    s = 0.5 * (grid.t_min + grid.t_max)
    psi = psi_profile(params, s, grid)
    dpsi = dpsi_profile(params, s, grid)
    w = kernel_profile(params, s, grid)
    one = [BubbleSpec(1.0, s)]
    out_dir = cio.output_dir(cfg.output_dir)
    path = cio.write_field(psi, out_dir / "psi.json")
    psi_norm = norm(psi)
    return {
        "d": params.d, "p": params.p, "a": params.a, "b": params.b, "a_c": params.a_c,
        "lambda_fs": params.lambda_fs, "s_inv": sobolev_constant(params, grid),
        "psi_norm_sq": psi_norm ** 2,
        "psi_lp_pow": lp_norm(psi, params.p + 1.0) ** (params.p + 1.0),
        "residual_rel": _relative(dual_norm(residual(psi)), psi_norm),
        "nullity_dpsi_rel": _relative(dual_norm(apply_L(one, dpsi)), norm(dpsi)),
        "nullity_w_rel": _relative(dual_norm(apply_L(one, w)), norm(w)),
        "n_t": grid.n_t, "h": grid.h, "field_file": path.name,
    }


def cmd_decompose(cfg: RunConfig) -> tuple:
    v = cio.read_field(cfg.field)
    nu = cfg.nu
    if nu is None:
        nu = bubble_count(v).nu
        if nu is None:
            raise _NumericFailure("field energy is outside every bubble-count window; pass --nu")
    try:
        res = decompose(v, nu)
        best = manifold_distance(v, nu, n_starts=cfg.n_starts, seed=cfg.seed)
    except (FitError, np.linalg.LinAlgError) as exc:
        raise _NumericFailure(str(exc)) from exc
    report = res.as_dict()
    report.update({"nu": nu, "manifold_distance": best, "seed": cfg.seed,
                   "field_file": str(cfg.field)})
    cio.write_json(report, cio.output_dir(cfg.output_dir) / "decomposition.json")
    return report, res.passed


def cmd_sweep(cfg: RunConfig) -> tuple:
    schedule = cfg.schedule()
    if not schedule:
        raise ConfigError("empty schedule: n-beta and n-r must be positive")
    records = run_sweep(schedule, workers=cfg.workers, n_t=cfg.n_t, pad=cfg.pad,
                        max_mode=cfg.max_mode, refine=cfg.refine)
    fits = fit_by_regime(records)
    out_dir = cio.output_dir(cfg.output_dir)
    cio.write_sweep_csv(records, out_dir / "sweep.csv")
    cio.write_plot_data(records, "f_dual", "dist", out_dir / "f_dual_dist.dat")
    cio.write_plot_data(records, "q_r", "f_dual", out_dir / "q_r_f_dual.dat")
    summary = {"d": cfg.d, "p": cfg.p, "preset": cfg.preset, "seed": cfg.seed,
               "level": cfg.level, "refine": cfg.refine, "n_records": len(records),
               "n_failed": sum(not r.ok for r in records),
               "errors": [r.error for r in records if not r.ok],
               "fits": fits}
    cio.write_json(summary, out_dir / "fit.json")
    return summary, any(r.ok for r in records)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = resolve_config(ns)
        if cfg.command == "bubble":
            payload, ok = cmd_bubble(cfg), True
        elif cfg.command == "decompose":
            payload, ok = cmd_decompose(cfg)
        else:
            payload, ok = cmd_sweep(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except cio.FieldFileError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (_NumericFailure, ArithmeticError, np.linalg.LinAlgError, FitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(cio.dumps(payload))
    return EXIT_OK if ok else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
