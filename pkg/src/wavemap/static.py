"""Static solutions (r^2 chi')' = sin(2 chi) and their oscillation spectrum.

Regular solutions start as chi = a r - (2 a^3 / 15) r^3 and approach pi/2
with a decaying oscillation in ln r.  They form a one-parameter family
related by chi_a(r) = chi_1(a r).

Small oscillations chi_s + exp(-i omega t) f(r) satisfy

    f'' + (2/r) f' - (2 cos(2 chi_s) / r^2 - omega^2) f = 0,

with f(0) = 0, f'(0) = 1, and f'(R) = 0 imposed at a finite outer radius.
omega^2 < 0 signals an unstable mode.  The shooting uses the Pruefer phase
theta = atan2(f, f'), which increases monotonically with omega^2, so roots are
the crossings of theta(R) through pi/2 + k pi.  For a bound state (omega^2 < 0)
theta(R) sits near a fixed value set by the growing solution and jumps by pi
where its coefficient changes sign, i.e. at the decaying mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import IntegrationError, RangeBoundaryError

RTOL = 1e-12
ATOL = 1e-14
SERIES_RADIUS = 1e-3


def _static_rhs(r, y):
    chi, d = y
    return [d, math.sin(2.0 * chi) / (r * r) - 2.0 * d / r]


def _series(a, r):
    e = -2.0 * a ** 3 / 15.0
    return np.array([a * r + e * r ** 3, a + 3.0 * e * r ** 2])


def static_residual(r, chi, dchi, d2chi):
    """r^2 chi'' + 2 r chi' - sin(2 chi)."""
    r = np.asarray(r, dtype=float)
    return r * r * d2chi + 2.0 * r * dchi - np.sin(2.0 * chi)


@dataclass(frozen=True, eq=False)
class StaticProfile:
    """chi_s(r) with chi_s'(0) = a, dense on [0, R_ode]; frozen beyond R_ode."""

    a: float
    R_ode: float
    r_start: float
    solution: Callable | None
    residual_norm: float = math.nan
    meta: dict = field(default_factory=dict)

    def _eval(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.zeros((2, r.size))
        if self.solution is None:
            return out
        a = np.abs(r)
        m0 = a <= self.r_start
        m1 = (a > self.r_start) & (a <= self.R_ode)
        m2 = a > self.R_ode
        if m0.any():
            out[:, m0] = _series(self.a, a[m0])
        if m1.any():
            out[:, m1] = self.solution(a[m1])
        if m2.any():
            out[0, m2] = self.solution(self.R_ode)[0]
        out[0] *= np.where(r < 0, -1.0, 1.0)
        return out

    def __call__(self, r):
        v = self._eval(r)[0]
        return v if np.ndim(r) else float(v[0])

    def derivative(self, r):
        v = self._eval(r)[1]
        return v if np.ndim(r) else float(v[0])

    def energy_density(self, r) -> np.ndarray:
        """Radial energy density (r^2/2)[chi'^2 + 2 sin^2 chi / r^2] of the static field."""
        r = np.asarray(r, dtype=float)
        v = self._eval(r)
        return 0.5 * r * r * v[1] ** 2 + np.sin(v[0]) ** 2


def _fd_second(fn, x, h):
    w = (1.0 / 60.0, -3.0 / 20.0, 3.0 / 4.0)
    acc = np.zeros_like(x)
    for k, wk in enumerate(w):
        s = 3 - k
        acc += wk * (fn(x + s * h) - fn(x - s * h))
    return acc / h


def residual_at(profile: StaticProfile, radii) -> np.ndarray:
    """|static equation| at ``radii`` with chi'' from differencing the dense chi'."""
    r = np.atleast_1d(np.asarray(radii, dtype=float))
    h = 1e-3 * np.minimum(r, 1.0 / max(abs(profile.a), 1e-300))
    d2 = _fd_second(profile.derivative, r, h)
    return np.abs(static_residual(r, profile(r), profile.derivative(r), d2))


def solve_static(a: float, R_ode: float = 1e3, res_tol: float = 1e-8) -> StaticProfile:
    """Integrate the static equation from the origin series to ``R_ode``.

    The series starts at r = 1e-3 / |a| so the start is at the same point of
    the scaled profile for every a.  Raises :class:`IntegrationError` with the
    radius reached when the integrator fails.
    """
    if R_ode <= 0:
        raise ValueError("R_ode must be positive")
    if a == 0.0:
        return StaticProfile(a=0.0, R_ode=float(R_ode), r_start=0.0, solution=None,
                             residual_norm=0.0)
    r0 = SERIES_RADIUS / abs(a)
    if r0 >= R_ode:
        raise ValueError("R_ode lies inside the series region for this a")
    sol = solve_ivp(_static_rhs, (r0, R_ode), _series(a, r0), method="DOP853", rtol=RTOL,
                    atol=ATOL, dense_output=True)
    if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
        raise IntegrationError(f"static integration failed: {sol.message}", float(sol.t[-1]))
    prof = StaticProfile(a=float(a), R_ode=float(R_ode), r_start=r0, solution=sol.sol)
    probe = np.geomspace(2.0 * r0, 0.9 * R_ode, 400)
    res = float(np.max(residual_at(prof, probe)))
    prof = StaticProfile(a=float(a), R_ode=float(R_ode), r_start=r0, solution=sol.sol,
                         residual_norm=res)
    if res > res_tol:
        raise IntegrationError(f"static residual {res:.3g} exceeds {res_tol:.3g}", float(R_ode))
    return prof


# ---------------------------------------------------------------------------
# oscillation spectrum


def _phase_rhs(r, y, a_sq_omega):
    chi, d, th, lr = y
    q = 2.0 * math.cos(2.0 * chi) / (r * r) - a_sq_omega
    s, c = math.sin(th), math.cos(th)
    return [d, math.sin(2.0 * chi) / (r * r) - 2.0 * d / r,
            c * c + 2.0 / r * s * c - q * s * s,
            (1.0 + q) * s * c - 2.0 / r * c * c]


def _phase_start(a, omega_sq, r0):
    alpha = -(4.0 * a * a + omega_sq) / 10.0
    f, g = r0 + alpha * r0 ** 3, 1.0 + 3.0 * alpha * r0 ** 2
    chi, d = _series(a, r0)
    return [chi, d, math.atan2(f, g), 0.5 * math.log(f * f + g * g)]


def _shoot_phase(a, omega_sq, R_ode, dense=False):
    r0 = SERIES_RADIUS / abs(a)
    sol = solve_ivp(_phase_rhs, (r0, R_ode), _phase_start(a, omega_sq, r0), args=(omega_sq,),
                    method="LSODA", rtol=1e-11, atol=1e-12, dense_output=dense)
    if sol.status != 0:
        raise IntegrationError(f"mode integration failed: {sol.message}", float(sol.t[-1]))
    return sol


def end_phase(a: float, omega_sq: float, R_ode: float) -> float:
    """Pruefer phase theta(R_ode) of the origin-regular mode."""
    return float(_shoot_phase(a, omega_sq, R_ode).y[2, -1])


@dataclass(frozen=True, eq=False)
class StaticMode:
    """One root omega^2 with its mode, normalized to f(0) = 0, f'(0) = 1.

    ``outer_slope`` is f'(R) / sup |f|; ``match_error`` is |sin| of the phase
    difference between the origin and outer shots where they are joined.
    """

    omega_sq: float
    mode: Callable
    R_ode: float
    residual_norm: float
    outer_slope: float
    match_error: float
    nodes: int

    def __call__(self, r):
        return self.mode(r)


class _PhaseMode:
    """Mode assembled from an origin shot and an inward shot from R with f'(R) = 0.

    Past its decay length the origin shot is swamped by the growing solution,
    so it is used only up to ``r_match`` and the inward shot, scaled to the
    same value there, covers the rest.
    """

    def __init__(self, a, omega_sq, left, right, r_match):
        self.a, self.omega_sq = a, omega_sq
        self.left, self.right, self.r_match = left, right, r_match
        self.r_start = float(left.t[0])
        yl, yr = left.sol(r_match), right.sol(r_match)
        fl = math.exp(yl[3]) * math.sin(yl[2])
        fr = math.exp(yr[3]) * math.sin(yr[2])
        self.log_scale = yl[3] - yr[3]
        self.sign = 1.0 if fl * fr >= 0 else -1.0
        self.match_error = abs(math.sin(yl[2] - yr[2]))

    def _eval(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.zeros((2, r.size))
        m0 = r <= self.r_start
        if m0.any():
            alpha = -(4.0 * self.a ** 2 + self.omega_sq) / 10.0
            x = r[m0]
            out[:, m0] = [x + alpha * x ** 3, 1.0 + 3.0 * alpha * x ** 2]
        m1 = (r > self.r_start) & (r <= self.r_match)
        if m1.any():
            y = self.left.sol(r[m1])
            rho = np.exp(y[3])
            out[:, m1] = [rho * np.sin(y[2]), rho * np.cos(y[2])]
        m2 = r > self.r_match
        if m2.any():
            y = self.right.sol(r[m2])
            rho = self.sign * np.exp(y[3] + self.log_scale)
            out[:, m2] = [rho * np.sin(y[2]), rho * np.cos(y[2])]
        return out

    def __call__(self, r):
        v = self._eval(r)[0]
        return v if np.ndim(r) else float(v[0])

    def derivative(self, r):
        v = self._eval(r)[1]
        return v if np.ndim(r) else float(v[0])


def _build_mode(a, omega_sq, R):
    kappa = math.sqrt(-omega_sq) if omega_sq < 0 else 0.0
    r_match = 0.5 * R if kappa == 0.0 else min(0.5 * R, 10.0 / kappa)
    left = _shoot_phase(a, omega_sq, R, dense=True)
    chi_R, d_R = left.y[0, -1], left.y[1, -1]
    right = solve_ivp(_phase_rhs, (R, r_match), [chi_R, d_R, 0.5 * math.pi, 0.0],
                      args=(omega_sq,), method="LSODA", rtol=1e-11, atol=1e-12,
                      dense_output=True)
    if right.status != 0:
        raise IntegrationError(f"mode integration failed: {right.message}", float(right.t[-1]))
    return _PhaseMode(a, omega_sq, left, right, r_match)


def mode_residual(profile: StaticProfile, omega_sq: float, mode, R_ode: float,
                  n_points: int = 800) -> float:
    """sup |r^2 f'' + 2 r f' - r^2 q f| / sup |f| over (0, R_ode)."""
    r0 = 2.0 * SERIES_RADIUS / abs(profile.a)
    r = np.geomspace(r0, 0.98 * R_ode, n_points)
    h = 1e-4 * np.minimum(r, 1.0 / max(abs(profile.a), 1e-300))
    join = getattr(mode, "r_match", None)
    if join is not None:
        # stencils stay on one side of the join
        keep = np.abs(r - join) > 1e-6 * join
        r, h = r[keep], np.minimum(h[keep], np.abs(r[keep] - join) / 3.5)
    f, g = mode(r), mode.derivative(r)
    d2 = _fd_second(mode.derivative, r, h)
    q = 2.0 * np.cos(2.0 * profile(r)) / (r * r) - omega_sq
    res = r * r * d2 + 2.0 * r * g - r * r * q * f
    return float(np.max(np.abs(res)) / max(np.max(np.abs(f)), 1e-300))


def default_omega_range(R_ode: float, kappa_min: float = 10.0) -> tuple[float, float]:
    """[-10, -(kappa_min / R_ode)^2]: modes decay over at least kappa_min e-folds inside R_ode."""
    return (-10.0, -(kappa_min / R_ode) ** 2)


def omega_spectrum(profile: StaticProfile, omega_sq_range=None, R_ode: float | None = None,
                   n_scan: int = 60, boundary_tol: float = 1e-6) -> list[StaticMode]:
    """All omega^2 in range with f'(R_ode) = 0 for the origin-regular mode.

    The scan is logarithmic in |omega^2| for negative ranges (uniform
    otherwise).  theta(R) increases with omega^2, so every level pi/2 + k pi
    crossed between two scan points holds exactly one root, found by
    bisection.  A root at a range end, or beyond it by less than
    ``boundary_tol`` times |end|, raises :class:`RangeBoundaryError`.
    """
    if profile.a == 0.0:
        raise ValueError("the zero solution has no nontrivial static background")
    R = float(R_ode if R_ode is not None else profile.R_ode)
    lo, hi = omega_sq_range if omega_sq_range is not None else default_omega_range(R)
    if not lo < hi:
        raise ValueError("omega_sq_range must be increasing")
    a = profile.a
    if hi < 0:
        pts = -np.geomspace(-lo, -hi, n_scan)
    else:
        pts = np.linspace(lo, hi, n_scan)
    th = np.array([end_phase(a, w, R) for w in pts])
    level = np.floor((th - 0.5 * math.pi) / math.pi)
    # for omega^2 < 0 theta(R) passes a level by a jump of pi, so a root at an
    # end shows up as a level change just outside the range
    width = hi - lo
    for end, t, out in ((lo, th[0], -1.0), (hi, th[-1], 1.0)):
        t_out = end_phase(a, end + out * boundary_tol * (abs(end) or width), R)
        if math.floor((t_out - 0.5 * math.pi) / math.pi) != math.floor((t - 0.5 * math.pi) / math.pi):
            raise RangeBoundaryError(f"a root sits at the range end omega^2={end:.6g}; widen it")
    roots = []
    for i in range(len(pts) - 1):
        for k in range(int(level[i]) + 1, int(level[i + 1]) + 1):
            target = 0.5 * math.pi + k * math.pi
            w = brentq(lambda x: end_phase(a, x, R) - target, pts[i], pts[i + 1],
                       xtol=1e-15, rtol=1e-13)
            roots.append((w, k))
    modes = []
    for w, k in roots:
        m = _build_mode(a, w, R)
        sup = float(np.max(np.abs(m(np.geomspace(m.r_start, R, 2000)))))
        modes.append(StaticMode(omega_sq=float(w), mode=m, R_ode=R,
                                residual_norm=mode_residual(profile, w, m, R),
                                outer_slope=float(m.derivative(R)) / sup,
                                match_error=m.match_error, nodes=int(k)))
    return modes


def best_match_parameter(radii, rho, a_range=(0.01, 1.0), n_scan: int = 200,
                         window=None) -> tuple[float, float]:
    """Static parameter a whose energy density best fits ``rho`` (least squares).

    Uses the rescaling chi_a(r) = chi_1(a r), so the density of chi_a is the
    a = 1 density evaluated at a r.  Returns (a, relative rms deviation).
    """
    from scipy.optimize import minimize_scalar

    r = np.asarray(radii, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if window is not None:
        keep = (r >= window[0]) & (r <= window[1])
        r, rho = r[keep], rho[keep]
    base = solve_static(1.0, R_ode=max(10.0, a_range[1] * r[-1] * 1.01))
    norm = max(float(np.sqrt(np.mean(rho ** 2))), 1e-300)

    def cost(log_a):
        a = math.exp(log_a)
        return float(np.sqrt(np.mean((base.energy_density(a * r) / 1.0 - rho) ** 2))) / norm

    grid = np.linspace(math.log(a_range[0]), math.log(a_range[1]), n_scan)
    vals = [cost(g) for g in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(0, i - 1)], grid[min(n_scan - 1, i + 1)]
    best = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
    return math.exp(best.x), float(best.fun)


def nonlinear_sign_test(a: float, A_p: float, R0_p: float, delta_p: float, settings,
                        jobs: int = 1, keep_records: bool = False):
    """Evolve chi_a plus a +|A_p| and a -|A_p| pulse; SignSplit if + collapses and - disperses.

    ``settings`` is a :class:`~wavemap.criticality.RunSettings`.
    """
    from .criticality import attractor_sign_test

    return attractor_sign_test(("static", a), A_p, R0_p, delta_p, settings, jobs=jobs,
                               keep_records=keep_records)
