"""Experiment configuration: INI-style ``key = value`` files with sections.

Unset keys take the defaults in :data:`DEFAULTS`; :func:`dump_config`
writes every key so that a resolved file reproduces the run.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .model import DiffusionSpec, ElementwiseDirection, HeterodimerParams, constant

SCENARIOS = ("convergence", "timestep-convergence", "p-convergence", "travelling-wave",
             "equilibrium-wavefront", "custom")

DEFAULTS = {
    "experiment": {
        "scenario": "custom",
        "seed": "1",
        "output": "results",
        "snapshot_stride": "0",
    },
    "mesh": {
        "source": "generate",        # generate | load | agglomerate
        "shape": "rectangle",        # rectangle | disk (generate only)
        "domain": "0 1 0 1",
        "n_elements": "100",
        "lloyd_iters": "100",
        "boundary": "D",             # D | N; for loaded meshes an empty value keeps the file tags
        "path": "",
        "disk_center": "0 0",
        "disk_radius": "1",
        "disk_triangles": "2000",
    },
    "discretization": {
        "degree": "1",
        "dt": "0.01",
        "final_time": "1",
        "theta": "0.5",
        "linearization": "extrapolated",
        "schemes": "",               # timestep-convergence: subset of BE CN
        "gamma0": "10",
        "solver": "direct",          # direct | krylov
    },
    "model": {
        "manufactured": "none",      # none | trigonometric | arctan-front
        "wave_speed": "0.1",
        "d_ext": "1",
        "d_axn": "0",
        "axon": "",                  # "ax ay", radial or circumferential
        "axon_center": "0 0",
        "axon_file": "",
        "k0": "0",
        "k1": "1",
        "k1t": "1",
        "k12": "1",
        "f_c": "",
        "f_q": "0",
        "c_dirichlet": "0",
        "q_dirichlet": "0",
        "c0": "0",
        "q0": "0",
    },
    "checks": {
        "rate_tolerance": "0.3",
        "time_rate_tolerance": "0.1",
        "check_fields": "c",
        "speed_tolerance": "0.05",
        "time_ratio": "2",
        "equal_dof_factor": "5",
        "equilibrium_tolerance": "1e-2",
        "equilibrium_degrees": "3",
    },
}


class ConfigError(ValueError):
    pass


_NAMESPACE = {name: getattr(np, name) for name in
              ("sin", "cos", "tan", "exp", "log", "sqrt", "arctan", "tanh", "abs", "minimum", "maximum",
               "where", "pi")}


def expression_field(text):
    """Field ``f(x, t)`` from an expression in x, y and t.

    Purely numeric expressions give a constant field usable by the
    analytic diagnostics.
    """
    text = text.strip()
    try:
        return constant(float(text))
    except ValueError:
        pass
    try:
        code = compile(text, "<expression>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {text!r}: {exc.msg}") from None
    unknown = set(code.co_names) - set(_NAMESPACE) - {"x", "y", "t"}
    if unknown:
        raise ConfigError(f"unknown names in {text!r}: {sorted(unknown)}")

    def f(x, t=0.0):
        x = np.asarray(x, dtype=float)
        env = dict(_NAMESPACE, x=x[..., 0], y=x[..., 1], t=t)
        return np.broadcast_to(np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float), x.shape[:-1])
    f.expression = text
    return f


def _floats(s):
    return [float(v) for v in s.replace(",", " ").split()]


def _ints(s):
    return [int(v) for v in s.replace(",", " ").split()]


def _direction_field(spec: str, center):
    spec = spec.strip()
    cx, cy = center
    if spec in ("radial", "circumferential"):
        def a(x):
            d = np.stack([x[..., 0] - cx, x[..., 1] - cy], axis=-1)
            n = np.linalg.norm(d, axis=-1, keepdims=True)
            d = np.where(n > 0, d / np.where(n > 0, n, 1.0), np.array([1.0, 0.0]))
            return d if spec == "radial" else np.stack([-d[..., 1], d[..., 0]], axis=-1)
        return a
    v = np.array(_floats(spec))
    if v.shape != (2,):
        raise ConfigError(f"axon must be 'ax ay', radial or circumferential, got {spec!r}")

    def a(x):
        return np.broadcast_to(v, np.shape(x)[:-1] + (2,))
    return a


def load_direction_file(path):
    """Per-element unit directions, one ``ax ay`` line per element."""
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigError(f"{path}: line {i}: expected 'ax ay'")
            rows.append([float(p) for p in parts])
    return ElementwiseDirection(rows)


@dataclass
class ExperimentConfig:
    sections: dict
    source_path: str = ""
    base_dir: str = "."

    # -------------------------------------------------------------- access
    def get(self, section, key):
        return self.sections[section][key]

    def set(self, section, key, value):
        self.sections[section][key] = str(value)

    @property
    def scenario(self):
        return self.get("experiment", "scenario")

    @property
    def seed(self):
        return int(self.get("experiment", "seed"))

    @property
    def output(self):
        return self.resolve_path(self.get("experiment", "output"))

    @property
    def snapshot_stride(self):
        return int(self.get("experiment", "snapshot_stride"))

    def resolve_path(self, p):
        if not p:
            return p
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def floats(self, section, key):
        return _floats(self.get(section, key))

    def ints(self, section, key):
        return _ints(self.get(section, key))

    def float(self, section, key):
        return float(self.get(section, key))

    def int(self, section, key):
        return int(self.get(section, key))

    @property
    def degrees(self):
        return self.ints("discretization", "degree")

    @property
    def n_elements(self):
        return self.ints("mesh", "n_elements")

    @property
    def domain(self):
        d = tuple(self.floats("mesh", "domain"))
        if len(d) != 4:
            raise ConfigError("mesh.domain needs four numbers x0 x1 y0 y1")
        return d

    # -------------------------------------------------------------- validation
    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        src = self.get("mesh", "source")
        if src not in ("generate", "load", "agglomerate"):
            raise ConfigError(f"unknown mesh source {src!r}")
        if src in ("load", "agglomerate"):
            p = self.resolve_path(self.get("mesh", "path"))
            if not p or not os.path.exists(p):
                raise ConfigError(f"mesh file {p!r} does not exist")
        if self.get("mesh", "shape") not in ("rectangle", "disk"):
            raise ConfigError("mesh.shape must be rectangle or disk")
        axon_file = self.get("model", "axon_file")
        if axon_file and not os.path.exists(self.resolve_path(axon_file)):
            raise ConfigError(f"axon file {axon_file!r} does not exist")
        if not self.degrees or min(self.degrees) < 1:
            raise ConfigError("degrees must be >= 1")
        if not self.n_elements or min(self.n_elements) < 1:
            raise ConfigError("n_elements must be >= 1")
        if min(self.floats("discretization", "dt")) <= 0:
            raise ConfigError("dt must be positive")
        if min(self.floats("discretization", "final_time")) < 0:
            raise ConfigError("final_time must be non-negative")
        th = self.float("discretization", "theta")
        if not 0 <= th <= 1:
            raise ConfigError("theta must lie in [0, 1]")
        if self.get("discretization", "linearization") not in ("lagged", "extrapolated"):
            raise ConfigError("linearization must be lagged or extrapolated")
        if self.get("discretization", "solver") not in ("direct", "krylov"):
            raise ConfigError("solver must be direct or krylov")
        if self.float("discretization", "gamma0") <= 0:
            raise ConfigError("gamma0 must be positive")
        if self.get("model", "manufactured") not in ("none", "trigonometric", "arctan-front"):
            raise ConfigError("model.manufactured must be none, trigonometric or arctan-front")
        for s in self.get("discretization", "schemes").split():
            if s not in ("BE", "CN"):
                raise ConfigError(f"unknown scheme {s!r}")
        return self

    # -------------------------------------------------------------- model
    def diffusion(self, mesh=None):
        d_ext = self.float("model", "d_ext")
        d_axn = self.float("model", "d_axn")
        axon = None
        if self.get("model", "axon_file"):
            axon = load_direction_file(self.resolve_path(self.get("model", "axon_file")))
            if mesh is not None and len(axon.vectors) != mesh.n_elements:
                raise ConfigError(f"axon file has {len(axon.vectors)} directions for {mesh.n_elements} elements")
        elif self.get("model", "axon"):
            axon = _direction_field(self.get("model", "axon"), self.floats("model", "axon_center"))
        return DiffusionSpec(d_ext, d_axn, axon)

    def params(self, mesh=None) -> HeterodimerParams:
        m = self.sections["model"]
        k0 = float(m["k0"])
        f_c = expression_field(m["f_c"]) if m["f_c"].strip() else None
        return HeterodimerParams(
            self.diffusion(mesh),
            k1=_rate(m["k1"]), k1t=_rate(m["k1t"]), k12=_rate(m["k12"]), k0=k0,
            f_c=f_c, f_q=expression_field(m["f_q"]),
            c_D=expression_field(m["c_dirichlet"]), q_D=expression_field(m["q_dirichlet"]),
            c_0=expression_field(m["c0"]), q_0=expression_field(m["q0"]))


def _rate(text):
    f = expression_field(text)
    return f.constant_value if hasattr(f, "constant_value") else f


def load_config(path=None, text=None, overrides=None) -> ExperimentConfig:
    """Read a config file (or string) on top of :data:`DEFAULTS`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        if path is not None:
            with open(path) as fh:
                cp.read_file(fh, source=str(path))
        elif text is not None:
            cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    sections = {s: dict(v) for s, v in DEFAULTS.items()}
    for s in cp.sections():
        if s not in DEFAULTS:
            raise ConfigError(f"unknown section [{s}]")
        for k, v in cp.items(s):
            if k not in DEFAULTS[s]:
                raise ConfigError(f"unknown key {k!r} in [{s}]")
            sections[s][k] = v
    for (s, k), v in (overrides or {}).items():
        sections[s][k] = str(v)
    base = os.path.dirname(os.path.abspath(path)) if path else os.getcwd()
    return ExperimentConfig(sections, str(path or ""), base).validate()


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for s, kv in cfg.sections.items():
        lines.append(f"[{s}]")
        for k, v in kv.items():
            if s == "experiment" and k == "output":
                v = cfg.output
            elif s == "mesh" and k == "path" and v:
                v = os.path.abspath(cfg.resolve_path(v))
            elif s == "model" and k == "axon_file" and v:
                v = os.path.abspath(cfg.resolve_path(v))
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
