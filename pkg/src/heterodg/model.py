"""Heterodimer model coefficients and analytic diagnostics."""
from __future__ import annotations

import math
import numbers
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

FieldLike = Union[float, Callable]


class UnsupportedDiagnosticError(ValueError):
    """Diagnostic needs spatially constant coefficients."""


class WaveConditionError(ValueError):
    pass


def constant(value):
    """Field returning ``value`` everywhere."""
    value = float(value)

    def f(x, t=0.0):
        return np.full(np.shape(x)[:-1], value)
    f.constant_value = value
    return f


def is_constant(v):
    return isinstance(v, numbers.Real) or hasattr(v, "constant_value")


def constant_value(v):
    if isinstance(v, numbers.Real):
        return float(v)
    if hasattr(v, "constant_value"):
        return v.constant_value
    raise UnsupportedDiagnosticError("coefficient is not spatially constant")


class ElementwiseDirection:
    """Per-element constant unit vectors (e.g. read from a direction file)."""
    elementwise = True

    def __init__(self, vectors):
        v = np.asarray(vectors, dtype=float).reshape(-1, 2)
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero direction vector")
        if np.any(np.abs(norms - 1) > 1e-12):
            warnings.warn("axon directions are not unit length; normalising", RuntimeWarning, stacklevel=2)
        self.vectors = v / norms[:, None]

    def __call__(self, x, t, elements):
        return self.vectors[np.asarray(elements)]


@dataclass(frozen=True)
class DiffusionSpec:
    """D(x) = d_ext I + d_axn a(x) (x) a(x)."""
    d_ext: float
    d_axn: float = 0.0
    axon: Callable | None = None

    def __post_init__(self):
        if not self.d_ext > 0:
            raise ValueError("d_ext must be positive")
        if self.d_axn < 0:
            raise ValueError("d_axn must be non-negative")
        if self.d_axn > 0 and self.axon is None:
            raise ValueError("d_axn > 0 needs an axon direction field")

    @property
    def isotropic(self):
        return self.d_axn == 0.0

    def field(self):
        d_ext, d_axn, axon = self.d_ext, self.d_axn, self.axon
        if d_axn == 0.0 or axon is None:
            def D(x, t=0.0):
                out = np.zeros(np.shape(x)[:-1] + (2, 2))
                out[..., 0, 0] = d_ext
                out[..., 1, 1] = d_ext
                return out
            return D

        def _tensor(a):
            n = np.linalg.norm(a, axis=-1, keepdims=True)
            if np.any(np.abs(n - 1) > 1e-12):
                warnings.warn("axon direction is not unit length; normalising", RuntimeWarning, stacklevel=3)
            a = a / n
            return d_ext * np.eye(2) + d_axn * a[..., :, None] * a[..., None, :]

        if getattr(axon, "elementwise", False):
            def D(x, t, elements):
                return _tensor(np.asarray(axon(x, t, elements), dtype=float))
            D.elementwise = True
            return D

        def D(x, t=0.0):
            return _tensor(np.asarray(axon(x), dtype=float))
        return D


def diffusion_tensor(spec: DiffusionSpec, x, elements=None):
    D = spec.field()
    x = np.asarray(x, dtype=float)
    if getattr(D, "elementwise", False):
        return D(x, 0.0, elements)
    return D(x, 0.0)


@dataclass
class HeterodimerParams:
    """Coefficients and data of the two-species system.

    Reaction rates accept numbers or fields ``f(x, t)``; forcing, boundary
    and initial data are fields (or ``None`` for zero).
    """
    diffusion: DiffusionSpec
    k1: FieldLike = 1.0
    k1t: FieldLike = 1.0
    k12: FieldLike = 1.0
    k0: float | None = None
    f_c: Callable | None = None
    f_q: Callable | None = None
    c_D: Callable | None = None
    q_D: Callable | None = None
    c_0: FieldLike = 0.0
    q_0: FieldLike = 0.0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.f_c is None and self.k0 is not None:
            self.f_c = constant(self.k0)

    def check(self, points):
        """Pointwise checks of the coefficient assumptions at ``points``."""
        from .dgspace import sample
        k1 = sample(self.k1, points, 0.0)
        k1t = sample(self.k1t, points, 0.0)
        k12 = sample(self.k12, points, 0.0)
        if np.any(k1 <= 0) or np.any(k1t <= 0):
            raise ValueError("k1 and k1t must be strictly positive")
        if np.any(k12 < 0):
            raise ValueError("k12 must be non-negative")


@dataclass(frozen=True)
class ModelDiagnostics:
    unstable_eq: tuple[float, float]
    stable_eq: tuple[float, float]
    wave_condition: bool
    min_wave_speed: float | None
    fk_alpha: float


def _rates(params):
    try:
        k1 = constant_value(params.k1)
        k1t = constant_value(params.k1t)
        k12 = constant_value(params.k12)
    except UnsupportedDiagnosticError:
        raise UnsupportedDiagnosticError("diagnostics need spatially constant reaction rates") from None
    if params.k0 is None:
        raise UnsupportedDiagnosticError("diagnostics need a constant production rate k0")
    return float(params.k0), k1, k1t, k12


def equilibria(params):
    """Unstable (healthy) and stable (coexistence) equilibria for f_c = k0, f_q = 0."""
    k0, k1, k1t, k12 = _rates(params)
    if k1 <= 0 or k1t <= 0 or k12 <= 0:
        raise UnsupportedDiagnosticError("equilibria need k1, k1t, k12 > 0")
    return (k0 / k1, 0.0), (k1t / k12, k0 / k1t - k1 / k12)


def fk_alpha(params):
    k0, k1, k1t, k12 = _rates(params)
    # same numerator as the wave condition, so the signs always agree
    return (k12 * k0 - k1t * k1) / k1


def wave_condition(params):
    k0, k1, k1t, k12 = _rates(params)
    return k0 * k12 - k1t * k1 > 0


def min_wave_speed(params):
    if not params.diffusion.isotropic:
        raise UnsupportedDiagnosticError("minimum wave speed needs isotropic diffusion")
    if not wave_condition(params):
        raise WaveConditionError("wave condition k0*k12 > k1t*k1 fails; no travelling wave")
    return 2.0 * math.sqrt(params.diffusion.d_ext * fk_alpha(params))


def diagnostics(params) -> ModelDiagnostics:
    unstable, stable = equilibria(params)
    cond = wave_condition(params)
    speed = min_wave_speed(params) if cond and params.diffusion.isotropic else None
    return ModelDiagnostics(unstable, stable, cond, speed, fk_alpha(params))


def alpha_range(params, points):
    """Pointwise range of k12 k0 / k1 - k1t for field coefficients."""
    from .dgspace import sample
    if params.k0 is None:
        raise UnsupportedDiagnosticError("alpha needs a production rate k0")
    a = sample(params.k12, points, 0.0) * params.k0 / sample(params.k1, points, 0.0) - sample(params.k1t, points, 0.0)
    return float(np.min(a)), float(np.max(a))
