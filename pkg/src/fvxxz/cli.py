"""Command-line front end.

Subcommands::

    xx-roughness   closed-form W(ell, t) for the quadratic chain
    oracle         exact small-chain cumulants from the generating function
    collapse       Family-Vicsek fit of roughness CSV files
    velocity       effective velocity and crossover times
    kernel-dump    single-particle transfer weights p_r(t)

Rates are in units of J and times in units of 1/J.  Results go to
``<out>/<subcommand>/<tag or timestamp>/``.  Exit codes: 0 success, 2 usage
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import RoughnessSeries, crossover_scales, roughness_series, time_grid
from .collapse import CollapseError, classify_regime, fit_exponents, rescale
from .csvio import (CsvFormatError, format_value, read_series_csv, write_series_csv,
                    write_table)
from .freefermion import KernelVariant, effective_velocity, make_kernel
from .model import Boundary, ChainModel, DissipationSpec, SegmentSpec
from .oracle import ExtractionError, build_liouvillian, oracle_cumulants

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("xx-roughness", "oracle", "collapse", "velocity", "kernel-dump")
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
DEFAULT_T_MAX = {"xx-roughness": 1e5, "oracle": 100.0, "kernel-dump": 100.0}


class UsageError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    if text.strip() == "":
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _strs(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.split(",") if v)


def _opt_float(text: str):
    return None if text in ("", "none") else float(text)


def _opt_str(text: str):
    return None if text in ("", "none") else text


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


_PARSERS = {"int": int, "float": float, "str": str, "bool": _bool,
            "tuple[int, ...]": _ints, "tuple[str, ...]": _strs,
            "float | None": _opt_float, "str | None": _opt_str}


@dataclass
class RunConfig:
    """Every setting of a run; serializes to ``key=value`` lines."""

    subcommand: str
    L: int = 6
    J: float = 1.0
    delta: float = 0.0
    j2: float = 0.0
    boundary: str = "open"
    gamma_l: float = 0.0
    gamma_p: float | None = None
    zeta: float = 0.5
    ell: tuple[int, ...] = (10, 20, 40, 80, 160)
    offset: str | None = None
    grid: str = "geometric"
    t_min: float = 0.01
    t_max: float | None = None
    points: int = 200
    kernel: str = KernelVariant.BESSEL_INFINITE.value
    evolution: str = "both"
    unitary: bool = False
    jumps: str = "spin"
    r: float = 1e-2
    allow_large: bool = False
    inputs: tuple[str, ...] = ()
    force: bool = False
    search: str = "grid"
    alpha: float = 0.5
    z: float = 1.0
    fit_t_min: float = 5.0
    x_max: float = 0.2
    r_max: int = 20
    out: str = "out"
    tag: str | None = None
    seed: int = 0

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            text = ",".join(str(x) for x in v) if isinstance(v, tuple) else format_value(v)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        values = parse_config_text(text)
        values.update(overrides)
        return cls(**values)

    def dissipation(self) -> DissipationSpec:
        """Rates with gamma_p = zeta * gamma_l unless given explicitly."""
        if self.gamma_l < 0 or (self.gamma_p is not None and self.gamma_p < 0):
            raise UsageError("rates must be non-negative")
        if self.zeta <= 0:
            raise UsageError("zeta must be positive")
        if self.gamma_p is None:
            return DissipationSpec.from_zeta(self.gamma_l, self.zeta)
        if self.gamma_l > 0 and not math.isclose(self.gamma_p / self.gamma_l, self.zeta,
                                                 rel_tol=1e-12):
            raise UsageError("gamma_p / gamma_l disagrees with zeta")
        return DissipationSpec(self.gamma_l, self.gamma_p)

    @property
    def n_bar(self) -> float:
        return self.zeta / (1.0 + self.zeta)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config_text(text: str) -> dict:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise UsageError(f"config line {n}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[_FIELD_TYPES[key]](value)
        except ValueError as exc:
            raise UsageError(f"config line {n}: {exc}") from None
    return values


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags take precedence")
    p.add_argument("--out", help="output root (default: out)")
    p.add_argument("--tag", help="output subdirectory name (default: timestamp)")
    p.add_argument("--seed", type=int)


def _add_model(p, L=True):
    if L:
        p.add_argument("--L", type=int, dest="L")
    p.add_argument("--J", "--j", type=float, dest="J")
    p.add_argument("--delta", type=float)
    p.add_argument("--j2", type=float)
    p.add_argument("--boundary", choices=[b.value for b in Boundary])


def _add_rates(p):
    p.add_argument("--gamma-l", type=float)
    p.add_argument("--gamma-p", type=float)
    p.add_argument("--zeta", type=float)


def _add_grid(p):
    p.add_argument("--ell", type=str, help="comma-separated segment lengths")
    p.add_argument("--offset", type=str, help="segment start (default: centered)")
    p.add_argument("--grid", choices=["geometric", "linear"])
    p.add_argument("--t-min", type=float)
    p.add_argument("--t-max", type=float)
    p.add_argument("--points", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fvxxz", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("xx-roughness", help="closed-form roughness for Delta = 0")
    _add_common(p), _add_model(p), _add_rates(p), _add_grid(p)
    p.add_argument("--kernel", choices=[k.value for k in KernelVariant])
    p.add_argument("--evolution", choices=["both", "unitary", "lindblad"])

    p = sub.add_parser("oracle", help="exact Lindblad cumulants for small chains")
    _add_common(p), _add_model(p), _add_rates(p), _add_grid(p)
    p.add_argument("--unitary", action="store_const", const=True,
                   help="switch the dissipator off after preparing the steady state")
    p.add_argument("--jumps", choices=["spin", "fermion"])
    p.add_argument("--r", type=float, help="counting-field magnitude")
    p.add_argument("--allow-large", action="store_const", const=True, help="permit L = 8")

    p = sub.add_parser("collapse", help="Family-Vicsek fit of roughness CSVs")
    _add_common(p)
    p.add_argument("inputs", nargs="*", help="roughness CSV files")
    p.add_argument("--force", action="store_const", const=True,
                   help="accept mixed parameter headers")
    p.add_argument("--search", choices=["grid", "simplex"])
    p.add_argument("--alpha", type=float, help="alpha for rescale-only mode")
    p.add_argument("--z", type=float, help="z for rescale-only mode")
    p.add_argument("--fit-t-min", type=float, help="transient cut in units of 1/J")
    p.add_argument("--x-max", type=float, help="upper end of the growth window")

    p = sub.add_parser("velocity", help="effective velocity and t*(ell)")
    _add_common(p), _add_model(p, L=False)
    p.add_argument("--ell", type=str)

    p = sub.add_parser("kernel-dump", help="transfer weights p_r(t)")
    _add_common(p), _add_model(p), _add_grid(p)
    p.add_argument("--kernel", choices=[k.value for k in KernelVariant])
    p.add_argument("--r-max", type=int)
    return parser


_FLAG_CONVERT = {"ell": _ints, "offset": _opt_str}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    for name in _FIELD_TYPES:
        if name == "subcommand" or not hasattr(args, name):
            continue
        v = getattr(args, name)
        if v is None or (name == "inputs" and not v and "inputs" in values):
            continue
        if name in _FLAG_CONVERT:
            v = _FLAG_CONVERT[name](v)
        elif name == "inputs":
            v = tuple(v)
        values[name] = v
    values["subcommand"] = args.subcommand
    return RunConfig(**values)


def output_dir(cfg: RunConfig) -> Path:
    name = cfg.tag or time.strftime("%Y%m%d-%H%M%S")
    path = Path(cfg.out) / cfg.subcommand / name
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.txt").write_text(cfg.to_text())
    return path


def _segment(cfg: RunConfig, ell: int, L: int) -> SegmentSpec:
    if cfg.offset is None:
        return SegmentSpec.centered(ell, L)
    return SegmentSpec(ell, int(cfg.offset)).validated(L)


def _t_max(cfg: RunConfig) -> float:
    return cfg.t_max if cfg.t_max is not None else DEFAULT_T_MAX.get(cfg.subcommand, 100.0)


def _times(cfg: RunConfig) -> np.ndarray:
    try:
        return time_grid(cfg.grid, cfg.t_min, _t_max(cfg), cfg.points)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _model_header(cfg: RunConfig, d: DissipationSpec | None) -> dict:
    h = {"J": cfg.J, "delta": cfg.delta, "j2": cfg.j2, "L": cfg.L, "boundary": cfg.boundary,
         "zeta": cfg.zeta, "n_bar": cfg.n_bar}
    if d is not None:
        h.update({"gamma_l": d.gamma_l, "gamma_p": d.gamma_p, "Gamma": d.Gamma})
    h.update({"grid": cfg.grid, "t_min": cfg.t_min, "t_max": _t_max(cfg), "points": cfg.points})
    return h


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_xx_roughness(cfg: RunConfig) -> list[Path]:
    if cfg.delta != 0:
        raise UsageError("xx-roughness needs delta = 0 (no closed form otherwise)")
    if not cfg.ell:
        raise UsageError("--ell is empty")
    d = cfg.dissipation()
    kernel = make_kernel(cfg.kernel, J=cfg.J, J2=cfg.j2, L=cfg.L, boundary=cfg.boundary)
    times = _times(cfg)
    runs = {}
    if cfg.evolution in ("both", "unitary"):
        runs["unitary"] = 0.0
    if cfg.evolution in ("both", "lindblad"):
        if d.Gamma > 0:
            runs["lindblad"] = d.Gamma
        elif cfg.evolution == "lindblad":
            raise UsageError("Lindblad evolution needs gamma_l > 0")
    odir = output_dir(cfg)
    written = []
    for name, Gamma in runs.items():
        offset_mode = cfg.offset if cfg.offset is not None else "centered"
        series = []
        for ell in cfg.ell:
            offset = None
            if kernel.describe()["kernel"] == KernelVariant.FINITE_EXACT.value:
                offset = _segment(cfg, ell, cfg.L).offset
            series.append(roughness_series(ell, times, cfg.n_bar, Gamma, kernel, offset))
        header = {"subcommand": cfg.subcommand, "evolution": name, **_model_header(cfg, d),
                  "Gamma": Gamma, "offset": offset_mode, **kernel.describe()}
        written.append(write_series_csv(odir / f"{name}.csv", series, header))
    return written


def cmd_oracle(cfg: RunConfig) -> list[Path]:
    if not cfg.ell:
        raise UsageError("--ell is empty")
    d = cfg.dissipation()
    if d.gamma_l <= 0:
        raise UsageError("the oracle needs gamma_l > 0 to define the steady state")
    try:
        model = ChainModel(L=cfg.L, J=cfg.J, Delta=cfg.delta, J2=cfg.j2, boundary=cfg.boundary)
        Lv = build_liouvillian(model, None if cfg.unitary else d, jumps=cfg.jumps,
                               allow_large=cfg.allow_large)
        segments = [_segment(cfg, ell, cfg.L) for ell in cfg.ell]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    times = _times(cfg)
    odir = output_dir(cfg)
    header = {"subcommand": cfg.subcommand, "evolution": "Unitary" if cfg.unitary else "Lindblad",
              **_model_header(cfg, d), "jumps": cfg.jumps, "r": cfg.r}
    if cfg.unitary:
        header["Gamma"] = 0.0
    series = []
    written = []
    for seg in segments:
        run = oracle_cumulants(model, d, seg, times, r=cfg.r, unitary=cfg.unitary, Lv=Lv)
        k2 = run.cumulants.kappa2
        series.append(RoughnessSeries(seg.ell, times, np.sqrt(np.clip(k2, 0.0, None))))
        for k, (lam, G) in enumerate(run.G.items()):
            rows = zip(times, run.cumulants.kappa1, k2, G.real, G.imag)
            written.append(write_table(
                odir / f"qgf_ell{seg.ell}_lam{k}.csv",
                {**header, "ell": seg.ell, "offset": seg.offset, "lambda": complex(lam),
                 "richardson_spread": run.diagnostics["richardson_spread"]},
                ("t", "kappa1", "kappa2", "G_real", "G_imag"), rows))
    written.insert(0, write_series_csv(odir / "roughness.csv", series,
                                       {**header, "offset": cfg.offset or "centered"}))
    return written


def _check_headers(headers: list[dict], force: bool) -> None:
    for key in ("zeta", "J", "j2", "Gamma"):
        vals = {h.get(key) for h in headers}
        if len(vals) > 1 and not force:
            raise UsageError(f"input files disagree on {key}: {sorted(map(str, vals))} "
                             "(use --force)")


def cmd_collapse(cfg: RunConfig) -> list[Path]:
    if not cfg.inputs:
        raise UsageError("collapse needs at least one input CSV")
    headers, series = [], []
    for path in cfg.inputs:
        try:
            h, s = read_series_csv(path)
        except OSError as exc:
            raise UsageError(f"cannot read {path}: {exc}") from None
        headers.append(h)
        series.extend(s)
    _check_headers(headers, cfg.force)
    if len({s.ell for s in series}) != len(series):
        raise UsageError("duplicate segment lengths across inputs")
    series.sort(key=lambda s: s.ell)
    odir = output_dir(cfg)
    ells = [s.ell for s in series]
    report: dict = {"inputs": ";".join(cfg.inputs), "ells": ";".join(map(str, ells))}
    fitted = len(ells) >= 3 and ells[-1] >= 4 * ells[0]
    alpha, z = cfg.alpha, cfg.z
    if fitted:
        fit = fit_exponents(series, cfg.search, t_min=cfg.fit_t_min / cfg.J, x_max=cfg.x_max)
        alpha, z = fit.alpha, fit.z
        report.update({"mode": "fit", "alpha": fit.alpha, "beta": fit.beta, "z": fit.z,
                       "alpha_over_beta": fit.alpha_over_beta, "objective": fit.objective,
                       "x_star": fit.x_star, "window_x_min": fit.window[0],
                       "window_x_max": fit.window[1], "flags": ";".join(fit.flags) or "none"})
        for k, v in sorted(fit.uncertainty.items()):
            report[f"uncertainty_{k}"] = v
    else:
        report.update({"mode": "rescale-only", "alpha": alpha, "z": z})
    h0 = headers[0]
    if "Gamma" in h0 and len(series) >= 2:
        J, j2 = float(h0.get("J", 1.0)), float(h0.get("j2", 0.0))
        Gamma = float(h0["Gamma"])
        model = ChainModel(L=max(2, max(ells)), J=J, J2=j2)
        d = DissipationSpec(Gamma, 0.0) if Gamma > 0 else None
        scales = [crossover_scales(ell, model, d) for ell in ells]
        reg = classify_regime(series, scales, Gamma=Gamma)
        report.update({"regime": reg.label.value, "ratio_t_gamma_t_star_max": reg.ratio_max,
                       "ratio_t_gamma_t_star_min": reg.ratio_min,
                       "objective_x": reg.objective_x, "objective_y": reg.objective_y,
                       "empirical_winner": reg.empirical})
    curves = rescale(series, alpha, z)
    written = [
        write_table(odir / "fit_report.csv", {"subcommand": cfg.subcommand}, ("key", "value"),
                    report.items()),
        write_table(odir / "rescaled.csv", {"alpha": alpha, "z": z}, ("ell", "x", "Y"),
                    ((c.ell, float(x), float(y)) for c in curves for x, y in zip(c.x, c.Y))),
    ]
    summary = "\n".join(f"{k:>26s}  {format_value(v)}" for k, v in report.items()) + "\n"
    (odir / "summary.txt").write_text(summary)
    print(summary, end="")
    written.append(odir / "summary.txt")
    return written


def cmd_velocity(cfg: RunConfig) -> list[Path]:
    vbar = effective_velocity(cfg.J, cfg.j2)
    ratio = cfg.J / vbar if vbar > 0 else math.inf
    print(f"vbar = {vbar:.15g}")
    print(f"J t*/ell = J/vbar = {ratio:.15g}")
    rows = []
    for ell in cfg.ell:
        t_star = ell / vbar if vbar > 0 else math.inf
        rows.append((ell, t_star))
        print(f"  ell={ell:6d}  t* = {t_star:.6g}")
    if cfg.tag is None:
        return []
    odir = output_dir(cfg)
    return [write_table(odir / "velocity.csv", {"J": cfg.J, "j2": cfg.j2, "vbar": vbar},
                        ("ell", "t_star"), rows)]


def cmd_kernel_dump(cfg: RunConfig) -> list[Path]:
    kernel = make_kernel(cfg.kernel, J=cfg.J, J2=cfg.j2, L=cfg.L, boundary=cfg.boundary)
    if cfg.r_max < 0:
        raise UsageError("--r-max must be >= 0")
    times = _times(cfg)
    if cfg.kernel == KernelVariant.FINITE_EXACT.value:
        centre = (cfg.L - 1) // 2
        rs = [r for r in range(-cfg.r_max, cfg.r_max + 1) if 0 <= centre + r < cfg.L]
        rows = [(float(t), r, float(kernel.pair_weight(centre, centre + r, t)))
                for t in times for r in rs]
    else:
        w = kernel.weights(times, cfg.r_max)  # (r_max+1, n_t) for r >= 0
        rows = [(float(t), r, float(w[abs(r), n]))
                for n, t in enumerate(times) for r in range(-cfg.r_max, cfg.r_max + 1)]
    odir = output_dir(cfg)
    return [write_table(odir / "kernel.csv",
                        {"J": cfg.J, "j2": cfg.j2, **kernel.describe(), "r_max": cfg.r_max},
                        ("t", "r", "p"), rows)]


COMMANDS = {"xx-roughness": cmd_xx_roughness, "oracle": cmd_oracle, "collapse": cmd_collapse,
            "velocity": cmd_velocity, "kernel-dump": cmd_kernel_dump}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        for path in COMMANDS[cfg.subcommand](cfg):
            logger.info("wrote %s", path)
    except (UsageError, CsvFormatError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExtractionError, CollapseError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


__all__ = ["RunConfig", "UsageError", "build_parser", "config_from_args", "main", "COMMANDS",
           "parse_config_text"]
