"""Error norms, convergence rates and front tracking."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .dgspace import DgSpace, contract, sample
from .forms import PenaltyParams

_DIR = 1


class FrontNotFoundError(ValueError):
    """The level set does not cross the probe line inside the domain."""


# ---------------------------------------------------------------- norms

def _volume_terms(space: DgSpace, u, D, t, exact=None, grad_exact=None):
    """Squared L2 and D-weighted gradient norms of u_h - exact (exact may be None)."""
    loc = space.local(u)
    l2 = 0.0
    grad = 0.0
    for blk in space.blocks:
        ids = blk.element_ids()
        B = space.block_values(blk)
        G = space.block_grads(blk)
        uk = loc[blk.elements]
        e = contract(B, uk)
        ge = contract(G, uk)
        if exact is not None:
            e = e - sample(exact, blk.points, t, ids)
        if grad_exact is not None:
            ge = ge - sample(grad_exact, blk.points, t, ids)
        Dq = sample(D, blk.points, t, ids)
        l2 += np.sum(blk.weights * e * e)
        grad += np.sum(blk.weights * np.einsum("eqk,eqkl,eql->eq", ge, Dq, ge, optimize=True))
    return l2, grad


def _face_terms(space: DgSpace, u, D, penalty: PenaltyParams, t, exact=None, grad_exact=None, g_D=None):
    """Squared penalty-weighted jumps and inverse-penalty-weighted flux averages.

    The exact solution is continuous, so interior jumps of the error are the
    jumps of u_h; on Dirichlet faces the jump is u_h - g with g = ``g_D``
    (or the exact trace when ``g_D`` is None).
    """
    fd = space.faces
    loc = space.local(u)
    w, nrm, gam = fd["weights"], fd["normal"], penalty.face_gamma
    jump = 0.0
    flux = 0.0
    inner = np.flatnonzero(fd["neighbor"] >= 0)
    if len(inner):
        o, nb = fd["owner"][inner], fd["neighbor"][inner]
        pts = fd["points"][inner]
        uo = np.einsum("fqi,fi->fq", fd["vals_owner"][inner], loc[o])
        un = np.einsum("fqi,fi->fq", fd["vals_nbr"][inner], loc[nb])
        jump += np.sum(w[inner] * gam[inner][:, None] * (uo - un) ** 2)
        go = np.einsum("fqid,fi->fqd", fd["grads_owner"][inner], loc[o])
        gn = np.einsum("fqid,fi->fqd", fd["grads_nbr"][inner], loc[nb])
        if grad_exact is not None:
            gx = sample(grad_exact, pts, t)
            go, gn = go - gx, gn - gx
        Do = sample(D, pts, t, np.broadcast_to(o[:, None], pts.shape[:2]))
        Dn = sample(D, pts, t, np.broadcast_to(nb[:, None], pts.shape[:2]))
        avg = 0.5 * (np.einsum("fqkl,fql->fqk", Do, go) + np.einsum("fqkl,fql->fqk", Dn, gn))
        flux += np.sum(w[inner] / gam[inner][:, None] * np.sum(avg**2, axis=-1))
    dirichlet = np.flatnonzero(fd["tag"] == _DIR)
    if len(dirichlet):
        o = fd["owner"][dirichlet]
        pts = fd["points"][dirichlet]
        uo = np.einsum("fqi,fi->fq", fd["vals_owner"][dirichlet], loc[o])
        g = g_D if g_D is not None else exact
        if g is not None:
            uo = uo - sample(g, pts, t)
        jump += np.sum(w[dirichlet] * gam[dirichlet][:, None] * uo**2)
        go = np.einsum("fqid,fi->fqd", fd["grads_owner"][dirichlet], loc[o])
        if grad_exact is not None:
            go = go - sample(grad_exact, pts, t)
        Do = sample(D, pts, t, np.broadcast_to(o[:, None], pts.shape[:2]))
        avg = np.einsum("fqkl,fql->fqk", Do, go)
        flux += np.sum(w[dirichlet] / gam[dirichlet][:, None] * np.sum(avg**2, axis=-1))
    return jump, flux


def l2_norm(space: DgSpace, u):
    loc = space.local(u)
    return math.sqrt(max(float(np.einsum("ei,eij,ej->", loc, space.mass_blocks, loc)), 0.0))


def dg_norm(space: DgSpace, u, D, penalty: PenaltyParams, t=0.0):
    """||sqrt(D) grad_h u||^2 + sum_F gamma_F |[[u]]|^2 over interior and Dirichlet faces, square-rooted."""
    _, grad = _volume_terms(space, u, D, t)
    jump, _ = _face_terms(space, u, D, penalty, t)
    return math.sqrt(grad + jump)


@dataclass(frozen=True)
class NormValues:
    l2: float
    dg: float
    triple: float


def error_norms(space: DgSpace, u, exact, grad_exact, D, penalty: PenaltyParams, t=0.0, g_D=None) -> NormValues:
    """L2, DG and triple norms of u_h - u at time t."""
    l2, grad = _volume_terms(space, u, D, t, exact, grad_exact)
    jump, flux = _face_terms(space, u, D, penalty, t, exact, grad_exact, g_D)
    dg2 = grad + jump
    return NormValues(math.sqrt(l2), math.sqrt(dg2), math.sqrt(dg2 + flux))


class EnergyAccumulator:
    """Callback accumulating the energy norm of the error of one field.

    After the last state, ``value`` is
    sqrt(||e(T)||^2 + trapezoid of (||e||_DG^2 + ||e||^2) over the step times).
    ``select`` picks the coefficient vector from a state.
    """

    def __init__(self, space, D, penalty, exact=None, grad_exact=None, select: Callable = lambda s: s.C, g_D=None):
        self.space, self.D, self.penalty = space, D, penalty
        self.exact, self.grad_exact, self.select, self.g_D = exact, grad_exact, select, g_D
        self.times: list[float] = []
        self.integrand: list[float] = []
        self.last: NormValues | None = None

    def __call__(self, state):
        if self.times and state.t <= self.times[-1]:
            raise ValueError("states must arrive in increasing time")
        if self.exact is None:
            nv = NormValues(l2_norm(self.space, self.select(state)),
                            dg_norm(self.space, self.select(state), self.D, self.penalty, state.t), float("nan"))
        else:
            nv = error_norms(self.space, self.select(state), self.exact, self.grad_exact, self.D,
                             self.penalty, state.t, self.g_D)
        self.add(state.t, nv.l2**2, nv.dg**2)
        self.last = nv

    def add(self, t, l2_sq, dg_sq):
        self.times.append(float(t))
        self.integrand.append(float(l2_sq + dg_sq))
        self._final_l2_sq = float(l2_sq)

    @property
    def value(self):
        if not self.times:
            raise ValueError("no states recorded")
        integral = float(np.trapezoid(self.integrand, self.times)) if len(self.times) > 1 else 0.0
        return math.sqrt(self._final_l2_sq + integral)


def energy_from_series(times, l2_sq, dg_sq):
    """Energy norm from per-step squared norms; same rule as :class:`EnergyAccumulator`."""
    acc = EnergyAccumulator(None, None, None)
    for t, a, b in zip(times, l2_sq, dg_sq):
        acc.add(t, a, b)
    return acc.value


# ---------------------------------------------------------------- rates

@dataclass(frozen=True)
class RateFit:
    pairwise: np.ndarray
    least_squares: float


def fit_rates(h, errors) -> RateFit:
    """Slopes of log(error) against log(h), pairwise and by least squares."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.shape != e.shape or h.size < 2:
        raise ValueError("need at least two (h, error) pairs")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ValueError("errors and sizes must be positive")
    lh, le = np.log(h), np.log(e)
    pair = np.diff(le) / np.diff(lh)
    slope = np.polyfit(lh, le, 1)[0]
    return RateFit(pair, float(slope))


@dataclass
class ErrorRecord:
    test: str
    p: int
    n_el: int
    h: float
    dt: float
    T: float
    field: str
    l2: float
    dg: float
    energy: float
    dofs: int = 0

    def __post_init__(self):
        for name in ("l2", "dg", "energy"):
            v = getattr(self, name)
            if not (v >= 0 or math.isnan(v)):
                raise ValueError(f"{name} error must be non-negative")


CSV_COLUMNS = ("test", "p", "n_el", "h", "dt", "T", "field", "l2", "dg", "energy")


def format_records(records: Sequence[ErrorRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.test, r.p, r.n_el, repr(float(r.h)), repr(float(r.dt)), repr(float(r.T)), r.field,
                    repr(float(r.l2)), repr(float(r.dg)), repr(float(r.energy))])
    return buf.getvalue()


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        fh.write(format_records(records))


def read_records(path) -> list[ErrorRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(CSV_COLUMNS) - set(rows[0]):
        raise ValueError(f"{path}: missing columns {sorted(set(CSV_COLUMNS) - set(rows[0]))}")
    return [ErrorRecord(r["test"], int(r["p"]), int(r["n_el"]), float(r["h"]), float(r["dt"]), float(r["T"]),
                        r["field"], float(r["l2"]), float(r["dg"]), float(r["energy"])) for r in rows]


# ---------------------------------------------------------------- front tracking

def locate_points(mesh, points, chunk=256):
    """Owning element of each point (-1 when outside), via the sub-triangulation."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    tris, owners = [], []
    for k, t in enumerate(mesh.subtriangulation):
        tris.append(t)
        owners.append(np.full(len(t), k))
    tris = np.concatenate(tris)
    owners = np.concatenate(owners)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    v0, v1 = b - a, c - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    out = np.full(len(points), -1)
    tol = 1e-12
    for s in range(0, len(points), chunk):
        P = points[s:s + chunk]
        d = P[:, None, :] - a[None]
        l1 = (d[..., 0] * v1[:, 1] - d[..., 1] * v1[:, 0]) / det
        l2 = (v0[:, 0] * d[..., 1] - v0[:, 1] * d[..., 0]) / det
        inside = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
        hit = inside.any(axis=1)
        out[s:s + chunk][hit] = owners[inside.argmax(axis=1)[hit]]
    return out


def evaluate_at(space: DgSpace, coeffs, points):
    """Point values of a DG function; NaN outside the mesh."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    el = locate_points(space.mesh, points)
    out = np.full(len(points), np.nan)
    ok = el >= 0
    if ok.any():
        B = space._eval_many(el[ok], points[ok][:, None, :])[:, 0, :]
        out[ok] = np.einsum("ei,ei->e", B, space.local(coeffs)[el[ok]])
    return out


@dataclass
class WaveTrace:
    times: np.ndarray
    positions: np.ndarray
    speed: float
    band: tuple[float, float]
    intercept: float = 0.0

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


def front_position(profile: Callable[[np.ndarray], np.ndarray], x_lo, x_hi, level=0.5, n_samples=400, tol=1e-10):
    """Crossing of ``profile(x) = level`` on [x_lo, x_hi].

    The profile is sampled on a uniform polyline; among the sign changes the
    steepest bracket is refined by bisection.
    """
    xs = np.linspace(x_lo, x_hi, n_samples)
    vals = profile(xs) - level
    good = np.isfinite(vals)
    s = np.sign(vals)
    change = np.flatnonzero(good[:-1] & good[1:] & (s[:-1] * s[1:] <= 0) & (s[:-1] != s[1:]))
    if not len(change):
        raise FrontNotFoundError(f"no crossing of level {level} on [{x_lo}, {x_hi}]")
    i = change[np.argmax(np.abs(vals[change + 1] - vals[change]))]
    a, b = xs[i], xs[i + 1]
    fa = vals[i]
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = float(profile(np.array([m]))[0] - level)
        if fm == 0 or b - a < tol:
            return m
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def fit_speed(times, positions) -> WaveTrace:
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if len(times) < 2:
        raise ValueError("need at least two front positions")
    fit = stats.linregress(times, positions)
    n = len(times)
    half = stats.t.ppf(0.975, n - 2) * fit.stderr if n > 2 else 0.0
    return WaveTrace(times, positions, float(fit.slope), (float(fit.slope - half), float(fit.slope + half)),
                     float(fit.intercept))


def estimate_wave_speed(space: DgSpace, snapshots, level=0.5, y0=None, n_samples=400) -> WaveTrace:
    """Track the ``level`` crossing of q_h along the horizontal line y = y0.

    ``snapshots`` is a sequence of (t, q coefficients). The probe defaults to
    the mid-height of the mesh bounding box.
    """
    v = space.mesh.vertices
    (x_lo, y_lo), (x_hi, y_hi) = v.min(axis=0), v.max(axis=0)
    if y0 is None:
        y0 = 0.5 * (y_lo + y_hi)
    eps = 1e-9 * (x_hi - x_lo)
    times, pos = [], []
    for t, q in snapshots:
        def profile(xs, q=q):
            return evaluate_at(space, q, np.column_stack([xs, np.full_like(xs, y0)]))
        pos.append(front_position(profile, x_lo + eps, x_hi - eps, level, n_samples))
        times.append(t)
    return fit_speed(times, pos)
