"""Closed-form exact solutions with hand-derived forcings.

The forcings assume the sign convention

    c_t - div(D grad c) + k1 c + k12 c q = f_c
    q_t - div(D grad q) + k1t q - k12 c q = f_q

with isotropic constant D = d I and constant reaction rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import DiffusionSpec, HeterodimerParams


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact fields ``u(x, t)`` with gradients, time derivatives and Laplacians."""
    name: str
    c: Callable
    q: Callable
    grad_c: Callable
    grad_q: Callable
    dc_dt: Callable
    dq_dt: Callable
    lap_c: Callable
    lap_q: Callable
    domain: tuple = (0.0, 1.0, 0.0, 1.0)

    def forcings(self, d, k1, k1t, k12):
        c, q = self.c, self.q

        def f_c(x, t):
            cv, qv = c(x, t), q(x, t)
            return self.dc_dt(x, t) - d * self.lap_c(x, t) + k1 * cv + k12 * cv * qv

        def f_q(x, t):
            cv, qv = c(x, t), q(x, t)
            return self.dq_dt(x, t) - d * self.lap_q(x, t) + k1t * qv - k12 * cv * qv
        return f_c, f_q

    def params(self, d_ext=1.0, k1=1.0, k1t=1.0, k12=1.0, k0=0.0):
        """Dirichlet problem whose solution is this pair."""
        f_c, f_q = self.forcings(d_ext, k1, k1t, k12)
        return HeterodimerParams(DiffusionSpec(d_ext), k1=k1, k1t=k1t, k12=k12, k0=k0,
                                 f_c=f_c, f_q=f_q, c_D=self.c, q_D=self.q, c_0=self.c, q_0=self.q,
                                 notes={"manufactured": self.name})

    def residual(self, x, t, d, k1, k1t, k12, h=1e-4):
        """PDE residual with finite-difference derivatives of the exact fields.

        Returns the pair of pointwise residuals; both vanish up to O(h^2)
        when the forcing matches the exact fields.
        """
        f_c, f_q = self.forcings(d, k1, k1t, k12)
        x = np.asarray(x, dtype=float)
        ex, ey = np.array([h, 0.0]), np.array([0.0, h])
        out = []
        for u, f, lin, sign in ((self.c, f_c, k1, 1.0), (self.q, f_q, k1t, -1.0)):
            ut = (u(x, t + h) - u(x, t - h)) / (2 * h)
            lap = (u(x + ex, t) + u(x - ex, t) + u(x + ey, t) + u(x - ey, t) - 4 * u(x, t)) / h**2
            cq = self.c(x, t) * self.q(x, t)
            out.append(ut - d * lap + lin * u(x, t) + sign * k12 * cq - f(x, t))
        return tuple(out)


def _xy(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1]


def trigonometric_pair() -> ManufacturedSolution:
    """c = (cos pi x + cos pi y) cos t, q = (cos 4 pi x cos 4 pi y + 2) exp(-t) on the unit square."""
    pi = math.pi

    def c(x, t):
        X, Y = _xy(x)
        return (np.cos(pi * X) + np.cos(pi * Y)) * np.cos(t)

    def grad_c(x, t):
        X, Y = _xy(x)
        return np.stack([-pi * np.sin(pi * X), -pi * np.sin(pi * Y)], axis=-1) * np.cos(t)

    def dc_dt(x, t):
        X, Y = _xy(x)
        return -(np.cos(pi * X) + np.cos(pi * Y)) * np.sin(t)

    def lap_c(x, t):
        return -pi**2 * c(x, t)

    def q(x, t):
        X, Y = _xy(x)
        return (np.cos(4 * pi * X) * np.cos(4 * pi * Y) + 2.0) * np.exp(-t)

    def grad_q(x, t):
        X, Y = _xy(x)
        e = -4 * pi * np.exp(-t)
        return np.stack([e * np.sin(4 * pi * X) * np.cos(4 * pi * Y),
                         e * np.cos(4 * pi * X) * np.sin(4 * pi * Y)], axis=-1)

    def dq_dt(x, t):
        return -q(x, t)

    def lap_q(x, t):
        X, Y = _xy(x)
        return -32 * pi**2 * np.cos(4 * pi * X) * np.cos(4 * pi * Y) * np.exp(-t)

    return ManufacturedSolution("trigonometric", c, q, grad_c, grad_q, dc_dt, dq_dt, lap_c, lap_q)


def arctan_front(speed=0.1, length=5.0, x0=1.0) -> ManufacturedSolution:
    """c = arctan(3 pi (x - v t - x0)) / pi + 1/2 and q = 1 - c on (0, length) x (0, 1)."""
    pi = math.pi
    a = 3 * pi

    def s(x, t):
        X, _ = _xy(x)
        return a * (X - speed * t - x0)

    def c(x, t):
        return np.arctan(s(x, t)) / pi + 0.5

    def cx(x, t):
        return 3.0 / (1.0 + s(x, t) ** 2)

    def grad_c(x, t):
        g = cx(x, t)
        return np.stack([g, np.zeros_like(g)], axis=-1)

    def dc_dt(x, t):
        return -speed * cx(x, t)

    def lap_c(x, t):
        sv = s(x, t)
        return -6.0 * a * sv / (1.0 + sv**2) ** 2

    def q(x, t):
        return 1.0 - c(x, t)

    def grad_q(x, t):
        return -grad_c(x, t)

    def dq_dt(x, t):
        return -dc_dt(x, t)

    def lap_q(x, t):
        return -lap_c(x, t)

    return ManufacturedSolution("arctan-front", c, q, grad_c, grad_q, dc_dt, dq_dt, lap_c, lap_q,
                                (0.0, float(length), 0.0, 1.0))


SOLUTIONS = {"trigonometric": trigonometric_pair, "arctan-front": arctan_front}
