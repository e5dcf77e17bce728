"""Experiment configuration: typed dotted keys, INI-style files and builders.

A config file holds ``key = value`` lines.  Keys are dotted (``tau.value``) and may
also be grouped under a section header, so ``[tau]`` followed by ``value = 1`` is the
same as ``tau.value = 1``.  Values are Python literals where that makes sense
(``tau.pieces = (0.05, 1, 1.0)``); unknown keys and duplicates are errors.

Precedence is defaults < config file < command-line flags.
"""
from __future__ import annotations

import ast
import configparser
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from .coefficients import CoeffMode
from .errors import ParseError, UnknownKey
from .models import GaussianMixtureData, GMMOracle, perturb_model
from .schedules import GridKind, NoiseSchedule, ScheduleKind, TimeGrid, make_time_grid
from .solver import SolverConfig
from .stochasticity import TauKind, TauSchedule

_ROOT = "__root__"


def _literal(text: str):
    return ast.literal_eval(text)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str):
    v = _literal(text)
    return [float(x) for x in (v if isinstance(v, (list, tuple)) else [v])]


def _int_list(text: str):
    v = _literal(text)
    return [int(x) for x in (v if isinstance(v, (list, tuple)) else [v])]


def _pieces(text: str):
    if text.strip().lower() in ("", "none"):
        return None
    v = _literal(text)
    if isinstance(v, tuple) and len(v) == 3 and all(isinstance(x, (int, float)) for x in v):
        v = [v]
    return [[float(a), float(b), float(c)] for a, b, c in v]


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "schedule.kind": (str, "vp-linear"),
    "schedule.beta_min": (float, 0.1),
    "schedule.beta_max": (float, 20.0),
    "schedule.cosine_s": (float, 0.008),
    "schedule.sigma_min": (float, 0.02),
    "schedule.sigma_max": (float, 80.0),
    "schedule.t_eps": (_opt_float, None),
    "schedule.T": (_opt_float, None),
    "grid.kind": (str, "uniform-lambda"),
    "grid.M": (int, 20),
    "grid.rho": (float, 7.0),
    "grid.sigma_min": (_opt_float, None),
    "grid.sigma_max": (_opt_float, None),
    "tau.kind": (str, "constant"),
    "tau.value": (float, 0.0),
    "tau.pieces": (_pieces, None),
    "tau.fill": (float, 0.0),
    "solver.sp": (int, 3),
    "solver.sc": (int, 0),
    "coeff.mode": (str, "quadrature"),
    "model.weights": (_float_list, [0.5, 0.5]),
    "model.means": (_float_list, [-2.0, 2.0]),
    "model.variances": (_float_list, [0.25, 0.25]),
    "model.perturb_epsilon": (float, 0.0),
    "model.perturb_seed": (int, 0),
    "run.seed": (int, 0),
    "run.batch": (int, 1000),
    "verify.levels": (int, 5),
    "verify.L": (int, 14),
    "verify.M0": (int, 4),
    "verify.n_paths": (int, 64),
    "verify.dim": (int, 2),
    "verify.affine_mean": (_float_list, [0.5, -1.0]),
    "verify.affine_variance": (float, 0.3),
    "verify.n_samples": (int, 100_000),
    "verify.taus": (_float_list, [0.0, 0.5, 1.0]),
    "verify.epsilons": (_float_list, [0.0, 0.5, 1.0]),
    "verify.n_boot": (int, 200),
    "verify.n_intervals": (int, 1000),
    "verify.eta": (float, 0.5),
    "verify.assert": (_bool, True),
}


def defaults() -> dict:
    return {k: (list(v) if isinstance(v, list) else v) for k, (_, v) in SCHEMA.items()}


def parse_value(key: str, text: str, lineno: int | None = None):
    if key not in SCHEMA:
        raise UnknownKey(f"unknown key {key!r}", lineno)
    try:
        return SCHEMA[key][0](text)
    except (ValueError, SyntaxError, TypeError) as exc:
        raise ParseError(f"bad value for {key}: {text!r} ({exc})", lineno) from None


def _key_lines(text: str) -> dict[str, int]:
    """Best-effort 1-based line numbers of each (dotted) key in the file."""
    out, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", stripped)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", stripped)
        if m and not line[:1].isspace():
            key = m.group(1)
            out.setdefault(f"{section}.{key}" if section else key, n)
    return out


def parse_config_text(text: str) -> dict:
    """Values explicitly set in ``text`` (no defaults applied)."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, delimiters=("=", ":"),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string(f"[{_ROOT}]\n" + text)
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"duplicate key {exc.option!r}", (exc.lineno or 1) - 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section {exc.section!r}", (exc.lineno or 1) - 1) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] - 1 if exc.errors else None
        raise ParseError("malformed line", lineno) from None
    except configparser.Error as exc:
        raise ParseError(str(exc)) from None
    lines = _key_lines(text)
    values: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section, raw=True):
            full = key if section == _ROOT else f"{section}.{key}"
            if full in values:
                raise ParseError(f"duplicate key {full!r}", lines.get(full))
            values[full] = parse_value(full, raw, lines.get(full))
    return values


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=defaults)

    def __getitem__(self, key):
        return self.values[key]

    def update(self, overrides: dict) -> "ExperimentConfig":
        for k in overrides:
            if k not in SCHEMA:
                raise UnknownKey(f"unknown key {k!r}")
        merged = dict(self.values)
        merged.update(overrides)
        return ExperimentConfig(merged)

    def to_json(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        cfg = cls()
        return cfg.update(dict(data))

    # -- builders -----------------------------------------------------------------

    def schedule(self) -> NoiseSchedule:
        v = self.values
        return NoiseSchedule(ScheduleKind(v["schedule.kind"]), beta_min=v["schedule.beta_min"],
                             beta_max=v["schedule.beta_max"], cosine_s=v["schedule.cosine_s"],
                             sigma_min=v["schedule.sigma_min"], sigma_max=v["schedule.sigma_max"],
                             t_eps=v["schedule.t_eps"], T=v["schedule.T"])

    def grid(self, s: NoiseSchedule | None = None, M: int | None = None) -> TimeGrid:
        v = self.values
        s = s or self.schedule()
        return make_time_grid(s, GridKind(v["grid.kind"]), v["grid.M"] if M is None else M,
                              rho=v["grid.rho"], sigma_min=v["grid.sigma_min"], sigma_max=v["grid.sigma_max"])

    def tau(self, s: NoiseSchedule | None = None) -> TauSchedule:
        v = self.values
        kind = TauKind(v["tau.kind"])
        if v["tau.pieces"] is not None or kind is TauKind.PIECEWISE_CONSTANT:
            if not v["tau.pieces"]:
                raise ParseError("piecewise tau needs tau.pieces")
            return TauSchedule.from_sigma_edm(s or self.schedule(), v["tau.pieces"], fill=v["tau.fill"])
        if kind is TauKind.ZERO:
            return TauSchedule.zero()
        return TauSchedule.constant(v["tau.value"])

    def solver(self, **kw) -> SolverConfig:
        v = self.values
        return SolverConfig(v["solver.sp"], v["solver.sc"], CoeffMode(v["coeff.mode"]), v["run.seed"], **kw)

    def data(self) -> GaussianMixtureData:
        v = self.values
        return GaussianMixtureData(v["model.weights"], v["model.means"], v["model.variances"])

    def model(self, s: NoiseSchedule | None = None):
        v = self.values
        base = GMMOracle(self.data(), s or self.schedule())
        if v["model.perturb_epsilon"] == 0:
            return base
        return perturb_model(base, v["model.perturb_epsilon"], v["model.perturb_seed"])


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}") from None
    return ExperimentConfig().update(parse_config_text(text))
