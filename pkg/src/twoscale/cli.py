"""Command-line front end: JSON config in, CSV/JSON artifacts out.

Commands: ``simulate`` (reference + reconstructions as CSV), ``converge``
(eps-sweep report), ``crosscheck`` (generic vs closed forms), ``density``
(transported-density evaluation).  Exit codes: 0 success, 2 configuration
error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .averaging import FDConfig, QuadratureConfig
from .errors import (AxisError, BlowUpError, ConfigError, FlowError,
                     QuadratureError, TwoScaleError)
from .fields import field_from_spec
from .harness import crosscheck, run_convergence, sup_error
from .integrate import EngineOptions, TimeGrid, TrajectoryBundle, solve_hierarchy, solve_reference
from .model import reduce_phase
from .reconstruct import transported_density
from .regimes import MAX_ORDER, Regime, make_regime

COMMANDS = ("simulate", "converge", "crosscheck", "density")

_COMMON_KEYS = {"command", "regime", "engine", "order", "x0", "v0", "s", "T",
                "samples", "field", "seed", "out", "quadrature", "fd",
                "hierarchy_steps", "r_min"}
_ALLOWED_KEYS = {
    "simulate": _COMMON_KEYS | {"eps", "osc_resolution"},
    "converge": _COMMON_KEYS | {"eps_list", "orders", "osc_resolution"},
    "crosscheck": _COMMON_KEYS | {"n_samples"},
    "density": _COMMON_KEYS | {"eps", "u0", "x", "v", "t_eval"},
}

_U0_PRESETS = ("linear", "gaussian")


@dataclass
class RunConfig:
    """A fully validated run request with all defaults resolved."""

    command: str
    regime: str
    engine: str
    order: int
    x0: np.ndarray
    s: float
    T: float
    samples: int
    field_spec: dict
    seed: int
    out: Optional[str]
    eps: Optional[float] = None
    eps_list: Optional[list] = None
    orders: Optional[list] = None
    osc_resolution: int = 50
    n_samples: int = 50
    u0_spec: Optional[dict] = None
    density_state: Optional[np.ndarray] = None
    t_eval: Optional[float] = None
    quadrature: dict = field(default_factory=dict)
    fd: dict = field(default_factory=dict)
    hierarchy_steps: int = 2000
    r_min: float = 1e-6

    def resolved(self) -> dict:
        """The configuration echoed into every output artifact."""
        out = {
            "command": self.command,
            "regime": self.regime,
            "engine": self.engine,
            "order": self.order,
            "x0": list(self.x0[:3]),
            "v0": list(self.x0[3:]),
            "s": self.s,
            "T": self.T,
            "samples": self.samples,
            "field": self.field_spec,
            "seed": self.seed,
            "quadrature": self.quadrature,
            "fd": self.fd,
            "hierarchy_steps": self.hierarchy_steps,
            "r_min": self.r_min,
            "library_version": __version__,
        }
        if self.command in ("simulate", "density"):
            out["eps"] = self.eps
        if self.command == "simulate":
            out["osc_resolution"] = self.osc_resolution
        if self.command == "converge":
            out["eps_list"] = self.eps_list
            out["orders"] = self.orders
            out["osc_resolution"] = self.osc_resolution
        if self.command == "crosscheck":
            out["n_samples"] = self.n_samples
        if self.command == "density":
            out["u0"] = self.u0_spec
            out["x"] = list(self.density_state[:3])
            out["v"] = list(self.density_state[3:])
            out["t_eval"] = self.t_eval
        return out

    # -- helpers -----------------------------------------------------------

    def make_regime(self) -> Regime:
        quad = QuadratureConfig(**{k: v for k, v in self.quadrature.items()}) \
            if self.quadrature else None
        fdc = FDConfig(**{k: v for k, v in self.fd.items()}) if self.fd else None
        return make_regime(self.regime, field_from_spec(self.field_spec),
                           r_min=self.r_min, quad=quad, fd=fdc)

    def engine_options(self) -> EngineOptions:
        quad = QuadratureConfig(**self.quadrature) if self.quadrature else QuadratureConfig()
        fdc = FDConfig(**self.fd) if self.fd else FDConfig()
        return EngineOptions(steps=self.hierarchy_steps, engine=self.engine,
                             quad=quad, fd=fdc)


def _need(cfg, key, kind=None):
    if key not in cfg:
        raise ConfigError(f"missing required key '{key}'")
    val = cfg[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"key '{key}' has the wrong type")
    return val


def _vec3(cfg, key, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key '{key}'")
        return np.asarray(default, dtype=float)
    v = cfg[key]
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ConfigError(f"key '{key}' must be a 3-vector")
    return np.asarray(v, dtype=float)


def parse_config(text: str, command: Optional[str] = None) -> RunConfig:
    """Parse and validate a JSON run configuration; defaults are filled in."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")

    cmd = cfg.get("command", command)
    if cmd is None:
        raise ConfigError("missing required key 'command'")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command '{cmd}'; choose from {COMMANDS}")
    if command is not None and cmd != command:
        raise ConfigError(f"config command '{cmd}' does not match subcommand '{command}'")

    unknown = set(cfg) - _ALLOWED_KEYS[cmd]
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}' in config")

    regime = _need(cfg, "regime", str)
    if regime not in MAX_ORDER:
        raise ConfigError(f"unknown regime '{regime}'; choose from {sorted(MAX_ORDER)}")
    engine = cfg.get("engine", "auto")
    if engine not in ("auto", "closed", "generic"):
        raise ConfigError(f"unknown engine '{engine}' (auto, closed or generic)")

    max_k = MAX_ORDER[regime]
    order = int(cfg.get("order", 0))
    if order < 0 or order > max_k:
        raise ConfigError(f"order {order} unsupported: regime '{regime}' has max_order {max_k}")

    x0 = _vec3(cfg, "x0")
    v0 = _vec3(cfg, "v0", default=(0.0, 0.0, 0.0))
    state0 = np.concatenate([x0, v0])
    r_min = float(cfg.get("r_min", 1e-6))
    if regime == "gc_variable" and float(np.hypot(x0[0], x0[1])) < r_min:
        raise ConfigError("x0 lies on the magnetic axis of the variable-field regime")

    quadrature = cfg.get("quadrature", {})
    fdcfg = cfg.get("fd", {})
    for name, sub, allowed in (("quadrature", quadrature, {"base_nodes", "max_nodes", "rel_tol"}),
                               ("fd", fdcfg, {"h1", "h2"})):
        if not isinstance(sub, dict):
            raise ConfigError(f"key '{name}' must be a mapping")
        bad = set(sub) - allowed
        if bad:
            raise ConfigError(f"unknown key '{sorted(bad)[0]}' in '{name}'")

    out = RunConfig(
        command=cmd,
        regime=regime,
        engine=engine,
        order=order,
        x0=state0,
        s=float(cfg.get("s", 0.0)),
        T=float(cfg.get("T", 1.0)),
        samples=int(cfg.get("samples", 400)),
        field_spec=cfg.get("field", {"preset": "constant", "value": [0.0, 0.0, 0.0]}),
        seed=int(cfg.get("seed", 0)),
        out=cfg.get("out"),
        quadrature=quadrature,
        fd=fdcfg,
        hierarchy_steps=int(cfg.get("hierarchy_steps", 2000)),
        r_min=r_min,
    )
    field_from_spec(out.field_spec)  # validate eagerly

    if cmd in ("simulate", "density"):
        out.eps = float(_need(cfg, "eps", (int, float)))
        if out.eps <= 0:
            raise ConfigError("eps must be positive")
    if cmd == "simulate":
        out.osc_resolution = int(cfg.get("osc_resolution", 50))
    if cmd == "converge":
        eps_list = _need(cfg, "eps_list", list)
        if len(eps_list) < 4:
            raise ConfigError("eps_list needs at least 4 decreasing values")
        out.eps_list = [float(e) for e in eps_list]
        if any(e <= 0 for e in out.eps_list) or any(
                a <= b for a, b in zip(out.eps_list, out.eps_list[1:])):
            raise ConfigError("eps_list must be positive and strictly decreasing")
        orders = cfg.get("orders", list(range(order + 1)))
        if not isinstance(orders, list) or not orders:
            raise ConfigError("orders must be a non-empty list")
        if max(orders) > max_k:
            raise ConfigError(f"order {max(orders)} unsupported: regime '{regime}' "
                              f"has max_order {max_k}")
        out.orders = [int(k) for k in orders]
        out.osc_resolution = int(cfg.get("osc_resolution", 50))
    if cmd == "crosscheck":
        out.n_samples = int(cfg.get("n_samples", 50))
    if cmd == "density":
        u0 = cfg.get("u0", {"preset": "linear", "coeffs": [1, 0, 0, 0, 0, 0], "offset": 0.0})
        if not isinstance(u0, dict) or u0.get("preset") not in _U0_PRESETS:
            raise ConfigError(f"u0 preset must be one of {_U0_PRESETS}")
        out.u0_spec = u0
        x = _vec3(cfg, "x", default=list(x0))
        v = _vec3(cfg, "v", default=list(v0))
        out.density_state = np.concatenate([x, v])
        out.t_eval = float(cfg.get("t_eval", out.s + out.T))
    return out


def _u0_from_spec(spec: dict):
    if spec["preset"] == "linear":
        coeffs = np.asarray(spec.get("coeffs", [1, 0, 0, 0, 0, 0]), dtype=float)
        offset = float(spec.get("offset", 0.0))
        if coeffs.shape != (6,):
            raise ConfigError("u0 coeffs must have length 6")
        return lambda state: float(coeffs @ state + offset)
    center = np.asarray(spec.get("center", [0, 0, 0, 0, 0, 0]), dtype=float)
    width = float(spec.get("width", 1.0))
    if center.shape != (6,) or width <= 0:
        raise ConfigError("gaussian u0 needs a 6-vector center and positive width")
    return lambda state: float(np.exp(-np.sum((state - center) ** 2) / (2 * width ** 2)))


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def emit_trajectory_csv(bundle: TrajectoryBundle, path: str, config: Optional[dict] = None):
    """Write a trajectory bundle as CSV (17 significant digits) plus metadata."""
    orders = sorted(bundle.reconstruction)
    d = bundle.reference.shape[1]
    header = ["t"] + [f"ref_{j+1}" for j in range(d)]
    for k in orders:
        header += [f"rec{k}_{j+1}" for j in range(d)] + [f"err{k}"]
    times = bundle.grid.times
    lines = [",".join(header)]
    for m in range(len(times)):
        row = [f"{times[m]:.17g}"] + [f"{v:.17g}" for v in bundle.reference[m]]
        for k in orders:
            rec = bundle.reconstruction[k][m]
            err = float(np.linalg.norm(rec - bundle.reference[m]))
            row += [f"{v:.17g}" for v in rec] + [f"{err:.17g}"]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = {"config": config if config is not None else {},
            "library_version": __version__,
            "eps": bundle.eps,
            "orders": orders,
            "samples": len(times)}
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def emit_report_json(report, path: str, config: Optional[dict] = None):
    """Serialize a report with deterministic key order; runtime comes last."""
    body = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    runtime = body.pop("runtime_seconds", None)
    body["config"] = config if config is not None else {}
    body["runtime_seconds"] = runtime
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _run_simulate(cfg: RunConfig, out_path: str, quiet: bool) -> int:
    regime = cfg.make_regime()
    opts = cfg.engine_options()
    grid = TimeGrid(s=cfg.s, T=cfg.T, samples=cfg.samples)
    ref = solve_reference(regime.system, cfg.eps, cfg.x0, cfg.s, grid,
                          osc_resolution=cfg.osc_resolution)
    hier = solve_hierarchy(regime, cfg.order, cfg.x0, grid, opts)
    thetas = reduce_phase((grid.times - cfg.s) / cfg.eps)
    closed_ok = cfg.engine != "generic" and not (regime.kind == "gc_variable" and cfg.order >= 1)
    recon = {}
    profs = np.empty((cfg.order + 1,) + ref.shape)
    from .reconstruct import reconstruct_X
    for m in range(len(grid.times)):
        stack = hier.stack_at(m)
        for i in range(cfg.order + 1):
            if closed_ok:
                profs[i, m] = regime.reconstruct(i, stack.t, thetas[m], np.stack(stack.ys))
            else:
                profs[i, m] = reconstruct_X(regime.system, i, stack.t, thetas[m],
                                            stack, opts.quad, opts.fd)
    for k in range(cfg.order + 1):
        recon[k] = sum(cfg.eps ** i * profs[i] for i in range(k + 1))
    bundle = TrajectoryBundle(grid=grid, eps=cfg.eps, reference=ref, reconstruction=recon)
    emit_trajectory_csv(bundle, out_path, cfg.resolved())
    if not quiet:
        err = sup_error(recon[cfg.order], ref)
        print(f"simulate: wrote {out_path} (sup error at order {cfg.order}: {err:.3e})")
    return 0


def _run_converge(cfg: RunConfig, out_path: str, quiet: bool) -> int:
    regime = cfg.make_regime()
    report = run_convergence(regime, cfg.x0, cfg.s, cfg.T, cfg.eps_list,
                             cfg.orders, cfg.engine_options(),
                             samples=cfg.samples, osc_resolution=cfg.osc_resolution)
    emit_report_json(report, out_path, cfg.resolved())
    if not quiet:
        slopes = ", ".join(f"k={k}: {v:.3f}" if v is not None else f"k={k}: n/a"
                           for k, v in report.slopes.items())
        print(f"converge: wrote {out_path} (slopes {slopes})")
    return 0


def _run_crosscheck(cfg: RunConfig, out_path: str, quiet: bool) -> int:
    regime = cfg.make_regime()
    report = crosscheck(regime, cfg.order, n_samples=cfg.n_samples, seed=cfg.seed)
    emit_report_json(report, out_path, cfg.resolved())
    if not quiet:
        print(f"crosscheck: wrote {out_path} (max rel rhs dev {report.max_rel_rhs:.3e})")
    return 0


def _run_density(cfg: RunConfig, out_path: str, quiet: bool) -> int:
    regime = cfg.make_regime()
    u0 = _u0_from_spec(cfg.u0_spec)
    value = transported_density(u0, regime, cfg.order, cfg.eps, cfg.t_eval, cfg.s,
                                cfg.density_state, cfg.engine_options())
    body = {"value": value, "config": cfg.resolved(), "runtime_seconds": None}
    with open(out_path, "w") as fh:
        json.dump(body, fh, indent=2)
        fh.write("\n")
    if not quiet:
        print(f"density: wrote {out_path} (value {value:.12g})")
    return 0


_DEFAULT_OUT = {"simulate": "trajectory.csv", "converge": "convergence.json",
                "crosscheck": "crosscheck.json", "density": "density.json"}
_RUNNERS = {"simulate": _run_simulate, "converge": _run_converge,
            "crosscheck": _run_crosscheck, "density": _run_density}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="twoscale",
        description="Two-scale averaging expansions of oscillatory ODEs")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON run configuration")
        p.add_argument("--out", default=None, help="output artifact path")
        p.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 4

    try:
        cfg = parse_config(text, command=args.subcommand)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_path = args.out or cfg.out or _DEFAULT_OUT[cfg.command]
    try:
        return _RUNNERS[cfg.command](cfg, out_path, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BlowUpError, AxisError, QuadratureError, FlowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except TwoScaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
