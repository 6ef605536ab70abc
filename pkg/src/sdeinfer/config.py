"""Experiment configuration files (INI format).

Sections and keys:

[model]
  dim = 2
  drift =                     ; one expression per line, d lines
      0.4*x1 - 0.1*x1*x2
      -0.8*x2 + 0.2*x1^2
  sigma =                     ; d rows of d comma-separated expressions
      0.6, 0.2                ; (';' may separate rows on one line)
      0.2, 0.8
  initial = uniform(0, 10)    ; one spec for all coordinates, or one per
                              ; coordinate separated by whitespace, or
                              ; point(c1, ..., cd) [';'-separated list]

[simulate]
  T = 1.0    dt = 0.001    M = 1000    seed = 7    record_noise = true

[basis]
  kind = bspline | pwpoly
  degree = 2
  knots_per_dim = 8           ; or a comma list, one per dimension
  pad_fraction = 0.0

[estimate]
  mode = drift | covariance | both
  covariance = known | estimate
  covariance_form = constant | state-dependent
  solver = auto | diagonal | full

[output]
  directory = out
  csv = false                 ; also export trajectories as CSV

[agents]                      ; interacting subcommand
  count = 20    agent_dim = 2
  phi = r - 1                 ; expression in the pairwise distance r
  sigma = 0.1, 0; 0, 0.1      ; agent_dim x agent_dim rows ';'-separated
  initial = uniform(0, 5)     ; per agent coordinate

[kernel]                      ; 1d basis for the interaction kernel
  kind = bspline    degree = 2    knots = 8
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec
from .expr import ExprError, parse_expr
from .interacting import AgentSystem
from .model import Initial, ModelError, SdeModel
from .simulate import SimConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    pass


def _require(section, key, parser, name):
    if not parser.has_section(section):
        raise ConfigError(f"missing section [{section}] in {name}")
    if not parser.has_option(section, key):
        raise ConfigError(f"missing key '{key}' in section [{section}]")
    return parser.get(section, key)


def _optional(parser, section, key, default):
    if parser.has_section(section) and parser.has_option(section, key):
        return parser.get(section, key)
    return default


_UNIFORM_RE = re.compile(r"uniform\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)")
_POINT_RE = re.compile(r"point\(([^()]*)\)")


def parse_initial(text: str, dim: int) -> Initial:
    text = text.strip()
    if text.startswith("point"):
        points = []
        for m in _POINT_RE.finditer(text):
            coords = [float(v) for v in m.group(1).split(",")]
            if len(coords) != dim:
                raise ConfigError(
                    f"initial point has {len(coords)} coordinates, need {dim}"
                )
            points.append(coords)
        if not points:
            raise ConfigError(f"cannot parse 'initial' value {text!r}")
        return Initial.point(*points)
    specs = _UNIFORM_RE.findall(text)
    if not specs:
        raise ConfigError(f"cannot parse 'initial' value {text!r}")
    if len(specs) == 1:
        lo, hi = (float(specs[0][0]), float(specs[0][1]))
        return Initial.uniform([lo] * dim, [hi] * dim)
    if len(specs) != dim:
        raise ConfigError(
            f"'initial' lists {len(specs)} uniform ranges, need 1 or {dim}"
        )
    lows = [float(a) for a, _ in specs]
    highs = [float(b) for _, b in specs]
    return Initial.uniform(lows, highs)


def _expr_lines(text: str) -> list[str]:
    parts = []
    for line in text.replace(";", "\n").splitlines():
        line = line.strip()
        if line:
            parts.append(line)
    return parts


def parse_model_section(parser, name) -> SdeModel:
    dim_text = _require("model", "dim", parser, name)
    try:
        dim = int(dim_text)
    except ValueError:
        raise ConfigError(f"key 'dim' must be an integer, got {dim_text!r}")
    drift_lines = _expr_lines(_require("model", "drift", parser, name))
    if len(drift_lines) != dim:
        raise ConfigError(
            f"key 'drift' has {len(drift_lines)} expressions, need dim={dim}"
        )
    sigma_rows = _expr_lines(_require("model", "sigma", parser, name))
    if len(sigma_rows) != dim:
        raise ConfigError(
            f"key 'sigma' has {len(sigma_rows)} rows, need dim={dim}"
        )
    sigma = []
    for row in sigma_rows:
        entries = [e.strip() for e in row.split(",")]
        if len(entries) != dim:
            raise ConfigError(
                f"key 'sigma' row '{row}' has {len(entries)} entries, need {dim}"
            )
        sigma.append(entries)
    initial = parse_initial(_require("model", "initial", parser, name), dim)
    try:
        return SdeModel.from_strings(dim, drift_lines, sigma, initial)
    except (ExprError, ModelError) as err:
        raise ConfigError(f"in [model]: {err}") from err


def parse_sim_section(parser, name, seed_override=None) -> SimConfig:
    try:
        cfg = SimConfig(
            T=float(_require("simulate", "T", parser, name)),
            dt=float(_require("simulate", "dt", parser, name)),
            M=int(_require("simulate", "M", parser, name)),
            seed=(seed_override if seed_override is not None
                  else int(_optional(parser, "simulate", "seed", "0"))),
            record_noise=_optional(
                parser, "simulate", "record_noise", "true"
            ).strip().lower() in ("1", "true", "yes"),
        )
    except ValueError as err:
        raise ConfigError(f"in [simulate]: {err}") from err
    except ModelError as err:
        raise ConfigError(f"in [simulate]: {err}") from err
    return cfg


def parse_basis_section(parser, name) -> tuple[BasisSpec, float]:
    kind = _optional(parser, "basis", "kind", "bspline").strip()
    degree = int(_optional(parser, "basis", "degree", "2"))
    knots_text = _optional(parser, "basis", "knots_per_dim", "8")
    knots = tuple(int(k) for k in str(knots_text).split(","))
    pad = float(_optional(parser, "basis", "pad_fraction", "0"))
    if pad < 0:
        raise ConfigError("key 'pad_fraction' must be >= 0")
    try:
        spec = BasisSpec(kind, degree, knots if len(knots) > 1 else knots[0])
    except ValueError as err:
        raise ConfigError(f"in [basis]: {err}") from err
    return spec, pad


def parse_agents_section(parser, name) -> AgentSystem:
    count = int(_require("agents", "count", parser, name))
    agent_dim = int(_require("agents", "agent_dim", parser, name))
    phi_text = _require("agents", "phi", parser, name)
    try:
        phi = parse_expr(phi_text, 1, names=("r",))
    except ExprError as err:
        raise ConfigError(f"key 'phi': {err}") from err
    rows = _expr_lines(_require("agents", "sigma", parser, name))
    try:
        sigma = np.array([[float(v) for v in row.split(",")] for row in rows])
    except ValueError as err:
        raise ConfigError(f"key 'sigma' (agents): {err}") from err
    initial = parse_initial(_require("agents", "initial", parser, name),
                            agent_dim)
    try:
        return AgentSystem(count, agent_dim, phi, sigma, initial)
    except ModelError as err:
        raise ConfigError(f"in [agents]: {err}") from err


def parse_kernel_section(parser, name) -> BasisSpec:
    kind = _optional(parser, "kernel", "kind", "bspline").strip()
    degree = int(_optional(parser, "kernel", "degree", "2"))
    knots = int(_optional(parser, "kernel", "knots", "8"))
    try:
        return BasisSpec(kind, degree, knots)
    except ValueError as err:
        raise ConfigError(f"in [kernel]: {err}") from err


@dataclass
class ExperimentConfig:
    """Parsed experiment configuration plus the raw text (for hashing)."""

    path: str
    raw_text: str
    parser: configparser.ConfigParser

    @property
    def output_dir(self) -> str:
        return _optional(self.parser, "output", "directory", "out")

    @property
    def export_csv(self) -> bool:
        return _optional(self.parser, "output", "csv", "false").strip().lower() \
            in ("1", "true", "yes")

    def model(self) -> SdeModel:
        return parse_model_section(self.parser, self.path)

    def sim(self, seed_override=None) -> SimConfig:
        return parse_sim_section(self.parser, self.path, seed_override)

    def basis(self) -> tuple[BasisSpec, float]:
        return parse_basis_section(self.parser, self.path)

    def estimate_options(self) -> dict:
        mode = _optional(self.parser, "estimate", "mode", "drift").strip()
        if mode not in ("drift", "covariance", "both"):
            raise ConfigError(f"key 'mode' must be drift|covariance|both, got {mode!r}")
        cov = _optional(self.parser, "estimate", "covariance", "known").strip()
        if cov not in ("known", "estimate"):
            raise ConfigError(f"key 'covariance' must be known|estimate, got {cov!r}")
        form = _optional(self.parser, "estimate", "covariance_form",
                         "constant").strip()
        if form not in ("constant", "state-dependent"):
            raise ConfigError(
                f"key 'covariance_form' must be constant|state-dependent, got {form!r}"
            )
        solver = _optional(self.parser, "estimate", "solver", "auto").strip()
        if solver not in ("auto", "diagonal", "full"):
            raise ConfigError(f"key 'solver' must be auto|diagonal|full, got {solver!r}")
        return {"mode": mode, "covariance": cov, "covariance_form": form,
                "solver": solver}

    def agents(self) -> AgentSystem:
        return parse_agents_section(self.parser, self.path)

    def kernel_basis(self) -> BasisSpec:
        return parse_kernel_section(self.parser, self.path)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}") from err
    return ExperimentConfig(str(path), text, parser)
