"""Regular self-similar solutions chi(z), z = -r/t, and their linear spectrum.

The profile equation is

    z^2 (z^2 - 1) chi'' + 2 z (z^2 - 1) chi' + sin(2 chi) = 0,

singular at z = 0 and z = 1.  Regular solutions have chi = b z + O(z^3) at
the origin and chi = pi/2 + c (z - 1) + O((z - 1)^2) at the light cone; the
branch AB_n crosses pi/2 exactly n times on (0, 1).  They are found by
shooting in b and polished by matching (b, c) at an interior point.

Perturbations chi + exp(lambda tau) f(z), tau = -ln(-t), obey

    z^2 (z^2 - 1) f'' + 2 z (z^2 - 1 - lambda z^2) f'
        + (2 cos(2 chi) + (lambda^2 - lambda) z^2) f = 0,

and lambda < 0 means growth toward the singularity.  lambda = -1 is the
gauge mode f = z chi' generated by shifting the blow-up time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, root

from .errors import (AmbiguousCrossingError, BranchNotFoundError, BracketError, EstimationError,
                     InsufficientDataError, IntegrationError)

HALF_PI = 0.5 * math.pi
RTOL = 1e-12
ATOL = 1e-14
RESONANT_LAMBDAS = (0.0, 1.0, 2.0)


def ts_closed_form(z):
    """The n = 0 member, 2 arctan(z)."""
    return 2.0 * np.arctan(z)


def profile_residual(z, chi, dchi, d2chi):
    """Left-hand side of the profile equation."""
    z = np.asarray(z, dtype=float)
    return z * z * (z * z - 1.0) * d2chi + 2.0 * z * (z * z - 1.0) * dchi + np.sin(2.0 * chi)


def _profile_rhs(z, y):
    chi, d = y
    w = z * z - 1.0
    return [d, -(2.0 * z * w * d + math.sin(2.0 * chi)) / (z * z * w)]


def _left_series(b, z):
    e = b / 5.0 - 2.0 * b ** 3 / 15.0
    return np.array([b * z + e * z ** 3, b + 3.0 * e * z ** 2])


def _right_series(c, x):
    # expansion about z = 1 in x = z - 1, valid on both sides
    return np.array([HALF_PI + c * x - 0.5 * c * x ** 2 + c * x ** 3 / 6.0,
                     c - c * x + 0.5 * c * x ** 2])


def _integrate(rhs, span, y0, args=(), dense=True):
    sol = solve_ivp(rhs, span, y0, method="DOP853", rtol=RTOL, atol=ATOL, args=args,
                    dense_output=dense)
    if sol.status != 0:
        raise IntegrationError(f"profile integration failed: {sol.message}", float(sol.t[-1]))
    return sol


def _left_start(b, z_ser):
    return z_ser / max(1.0, abs(b))


def _shoot_gap(b, z_ser):
    # chi(1^-) - pi/2 for the solution regular at the origin
    z0 = _left_start(b, z_ser)
    sol = solve_ivp(_profile_rhs, (z0, 1.0 - 1e-7), _left_series(b, z0), method="DOP853",
                    rtol=RTOL, atol=ATOL)
    if sol.status != 0:
        return math.nan
    return float(sol.y[0, -1] - HALF_PI)


@dataclass(frozen=True, eq=False)
class SelfSimilarProfile:
    """A regular solution of the profile equation, evaluable on z >= 0.

    Pieces: the origin series on [0, z_l], a dense solution from z_l to the
    match point, a dense solution from 1 - z_ser back to the match point,
    the light-cone series on |z - 1| <= z_ser, and an exterior solution from
    1 + z_ser to ``z_ext``.  Beyond ``z_ext`` the profile is frozen at its
    last value.
    """

    n: int
    b: float
    c: float
    z_ser: float
    z_match: float
    left: Callable
    right: Callable
    exterior: Callable | None
    z_ext: float
    residual_norm: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def z_left(self) -> float:
        return _left_start(self.b, self.z_ser)

    def _eval(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty((2, z.size))
        zl, zm, zs = self.z_left, self.z_match, self.z_ser
        sign = np.sign(z)
        a = np.abs(z)
        m0 = a <= zl
        m1 = (a > zl) & (a <= zm)
        m2 = (a > zm) & (a < 1.0 - zs)
        m3 = (a >= 1.0 - zs) & (a <= 1.0 + zs)
        m4 = (a > 1.0 + zs) & (a <= self.z_ext)
        m5 = a > max(self.z_ext, 1.0 + zs)
        if m0.any():
            out[:, m0] = _left_series(self.b, a[m0])
        if m1.any():
            out[:, m1] = self.left(a[m1])
        if m2.any():
            out[:, m2] = self.right(a[m2])
        if m3.any():
            out[:, m3] = _right_series(self.c, a[m3] - 1.0)
        if m4.any():
            if self.exterior is None:
                raise ValueError("profile has no exterior extension; use extended()")
            out[:, m4] = self.exterior(a[m4])
        if m5.any():
            top = self.exterior(self.z_ext) if self.exterior is not None else \
                _right_series(self.c, self.z_ext - 1.0)
            out[0, m5] = top[0]
            out[1, m5] = 0.0
        # chi is odd in z; its derivative is even
        out[0] *= np.where(sign < 0, -1.0, 1.0)
        return out

    def __call__(self, z):
        v = self._eval(z)[0]
        return v if np.ndim(z) else float(v[0])

    def derivative(self, z):
        v = self._eval(z)[1]
        return v if np.ndim(z) else float(v[0])

    def extended(self, z_ext: float) -> "SelfSimilarProfile":
        """Return a copy whose exterior solution reaches ``z_ext``."""
        if z_ext <= self.z_ext:
            return self
        ext = _exterior(self.c, self.z_ser, z_ext)
        return replace(self, exterior=ext, z_ext=float(z_ext))

    def samples(self, n_points: int = 401) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(z, chi, chi') on a uniform grid of [0, 1]."""
        z = np.linspace(0.0, 1.0, n_points)
        v = self._eval(z)
        return z, v[0], v[1]


def _exterior(c, z_ser, z_ext):
    z0 = 1.0 + z_ser
    if z_ext <= z0:
        return None
    return _integrate(_profile_rhs, (z0, z_ext), _right_series(c, z_ser)).sol


def _fd_second(fn, z, h):
    # sixth-order central difference of a first derivative
    w = (1.0 / 60.0, -3.0 / 20.0, 3.0 / 4.0)
    acc = np.zeros_like(z)
    for k, wk in enumerate(w):
        s = 3 - k
        acc += wk * (fn(z + s * h) - fn(z - s * h))
    return acc / h


def _fd_points(z, b, z_match):
    # step scaled to the local length; stencils never straddle the match point
    z = z[np.abs(z - z_match) > 1e-6]
    h = 1e-3 * np.minimum(np.minimum(z, 1.0 - z), 1.0 / max(1.0, b))
    return z, np.minimum(h, np.abs(z - z_match) / 3.5)


def residual_norm(profile: SelfSimilarProfile, n_points: int = 2001) -> float:
    """sup |profile equation| on [z_ser, 1 - z_ser], second derivative by differencing."""
    zs = profile.z_ser
    z = np.unique(np.concatenate([np.linspace(zs, 1.0 - zs, n_points),
                                  np.geomspace(zs, 0.5, n_points // 4)]))
    z, h = _fd_points(z, profile.b, profile.z_match)
    d2 = _fd_second(profile.derivative, z, h)
    return float(np.max(np.abs(profile_residual(z, profile(z), profile.derivative(z), d2))))


def count_crossings(profile, z_ser: float = 1e-3, n_points: int = 20001, tol: float = 1e-9) -> int:
    """Number of sign changes of chi - pi/2 strictly inside (0, 1).

    ``profile`` may be a :class:`SelfSimilarProfile`, any callable of z, or a
    pair ``(z, chi)`` of sample arrays.  A near-tangency (|chi - pi/2| below
    ``tol`` at a local minimum with no sign change) raises
    :class:`AmbiguousCrossingError`.
    """
    if isinstance(profile, tuple):
        z, chi = (np.asarray(v, dtype=float) for v in profile)
        keep = (z > 0.0) & (z < 1.0 - z_ser)
        z, chi = z[keep], chi[keep]
    else:
        zs = getattr(profile, "z_ser", z_ser)
        b = getattr(profile, "b", 1.0)
        z = np.unique(np.concatenate([np.linspace(zs, 1.0 - zs, n_points),
                                      np.geomspace(zs / max(1.0, b), 0.5, n_points // 4)]))
        chi = np.asarray(profile(z), dtype=float) * np.ones_like(z)
    d = chi - HALF_PI
    s = np.sign(d)
    nz = s != 0
    crossings = int(np.count_nonzero(s[nz][1:] != s[nz][:-1]))
    a = np.abs(d)
    if a.size >= 3:
        interior = (a[1:-1] <= a[:-2]) & (a[1:-1] <= a[2:]) & (a[1:-1] < tol)
        same_side = s[:-2] == s[2:]
        bad = np.nonzero(interior & same_side)[0]
        if bad.size:
            raise AmbiguousCrossingError(
                f"chi touches pi/2 without crossing near z={z[bad[0] + 1]:.6g}")
    return crossings


def find_shooting_roots(count: int, z_ser: float = 1e-3, b_range=(0.5, 1e5),
                        per_decade: int = 60) -> list[float]:
    """The first ``count`` slopes b at which chi(1^-) = pi/2, in increasing order.

    chi stays in (0, pi) for b > 0, and a regular solution is exactly one
    whose limit at the light cone is pi/2, so the branches are the roots of
    the gap function scanned on a logarithmic grid.
    """
    lo, hi = b_range
    n_pts = max(8, int(per_decade * math.log10(hi / lo)) + 1)
    found: list[float] = []
    bs = np.geomspace(lo, hi, n_pts)
    prev_b, prev_v = bs[0], _shoot_gap(bs[0], z_ser)
    for b in bs[1:]:
        v = _shoot_gap(b, z_ser)
        if np.isfinite(v) and np.isfinite(prev_v) and np.sign(v) != np.sign(prev_v):
            found.append(brentq(_shoot_gap, prev_b, b, args=(z_ser,), xtol=1e-14, rtol=1e-14))
            if len(found) >= count:
                break
        prev_b, prev_v = b, v
    return found


def _match(b, c, z_ser, z_match, dense=False):
    zl = _left_start(b, z_ser)
    L = _integrate(_profile_rhs, (zl, z_match), _left_series(b, zl), dense=dense)
    R = _integrate(_profile_rhs, (1.0 - z_ser, z_match), _right_series(c, -z_ser), dense=dense)
    return L, R


def solve_ab(n: int, z_ser: float = 1e-3, z_match: float = 0.5, res_tol: float = 1e-8,
             z_ext: float | None = None, b_range=(0.5, 1e5)) -> SelfSimilarProfile:
    """Construct AB_n by shooting in b, then double shooting in (b, c).

    Raises :class:`BranchNotFoundError` when fewer than n + 1 branches exist
    in ``b_range``, or when the polished profile has the wrong crossing count
    or a residual above ``res_tol``.
    """
    if n < 0:
        raise ValueError("branch index must be nonnegative")
    roots = find_shooting_roots(n + 1, z_ser, b_range)
    if len(roots) <= n:
        raise BranchNotFoundError(f"only {len(roots)} branches found for b in {b_range}")
    return _polish(n, roots[n], z_ser, z_match, res_tol, z_ext)


def solve_ab_family(n_max: int, z_ser: float = 1e-3, z_match: float = 0.5,
                    res_tol: float = 1e-8, b_range=(0.5, 1e10)) -> list[SelfSimilarProfile]:
    """AB_0 ... AB_n_max from a single scan in b."""
    roots = find_shooting_roots(n_max + 1, z_ser, b_range)
    if len(roots) <= n_max:
        raise BranchNotFoundError(f"only {len(roots)} branches found for b in {b_range}")
    return [_polish(n, roots[n], z_ser, z_match, res_tol, None) for n in range(n_max + 1)]


def _polish(n, b0, z_ser, z_match, res_tol, z_ext):
    zl = _left_start(b0, z_ser)
    near = _integrate(_profile_rhs, (zl, 1.0 - 1e-4), _left_series(b0, zl), dense=False)
    c0 = float(near.y[1, -1])

    def mismatch(p):
        L, R = _match(p[0], p[1], z_ser, z_match)
        scale = np.array([1.0, max(1.0, abs(p[0]) * z_match)])
        return (L.y[:, -1] - R.y[:, -1]) / scale

    sol = root(mismatch, [b0, c0], method="hybr", tol=1e-15)
    b, c = (float(v) for v in sol.x)
    if not np.all(np.abs(mismatch(sol.x)) < 1e-9):
        raise BranchNotFoundError(f"matching failed for n={n}: {sol.message}")
    L, R = _match(b, c, z_ser, z_match, dense=True)
    ext = _exterior(c, z_ser, z_ext) if z_ext is not None else None
    prof = SelfSimilarProfile(n=n, b=b, c=c, z_ser=z_ser, z_match=z_match, left=L.sol,
                              right=R.sol, exterior=ext,
                              z_ext=float(z_ext) if ext is not None else 1.0 + z_ser)
    prof = replace(prof, residual_norm=residual_norm(prof))
    got = count_crossings(prof)
    if got != n:
        raise BranchNotFoundError(f"polished profile has {got} crossings, expected {n}")
    if prof.residual_norm > res_tol:
        raise BranchNotFoundError(
            f"profile residual {prof.residual_norm:.3g} exceeds tolerance {res_tol:.3g}")
    return prof


# ---------------------------------------------------------------------------
# linear spectrum


def _pert_rhs(z, y, lam):
    chi, d, f, g = y
    w = z * z - 1.0
    a = z * z * w
    return [d, -(2.0 * z * w * d + math.sin(2.0 * chi)) / a, g,
            -(2.0 * z * (w - lam * z * z) * g + (2.0 * math.cos(2.0 * chi)
                                                 + (lam * lam - lam) * z * z) * f) / a]


def _mode_left(b, lam, z):
    alpha = (lam * lam - 3.0 * lam + 2.0 - 4.0 * b * b) / 10.0
    return np.array([z + alpha * z ** 3, 1.0 + 3.0 * alpha * z ** 2])


def _mode_right_coeffs(c, lam, order=3):
    """Taylor coefficients of the mode analytic at z = 1 (f(1) = 1)."""
    a = [0.0, 2.0, 5.0, 4.0, 1.0]
    bq = [-2.0 * lam, 4.0 - 6.0 * lam, 6.0 - 6.0 * lam, 2.0 - 2.0 * lam]
    cq = [-2.0 + lam * lam - lam, 2.0 * (lam * lam - lam), 4.0 * c * c + (lam * lam - lam)]
    f = [1.0]
    for k in range(order):
        s = 0.0
        for j in range(2, k + 2):
            s += a[j] * (k - j + 2) * (k - j + 1) * f[k - j + 2]
        for j in range(1, min(k, len(bq) - 1) + 1):
            s += bq[j] * (k - j + 1) * f[k - j + 1]
        for j in range(0, min(k, len(cq) - 1) + 1):
            s += cq[j] * f[k - j]
        f.append(-s / ((k + 1) * (2.0 * k - 2.0 * lam)))
    return f


def _mode_right(c, lam, x):
    f = _mode_right_coeffs(c, lam)
    val = sum(fk * x ** k for k, fk in enumerate(f))
    der = sum(k * fk * x ** (k - 1) for k, fk in enumerate(f) if k)
    return np.array([val, der])


def effective_match(z_match: float, lam: float) -> float:
    """Match point used at a given lambda.

    For lambda << -1 the cone-singular solution grows like |z - 1|^(1 + lambda)
    across z > 1/sqrt|lambda|, so the origin shot must stop before that region.
    """
    return min(z_match, 1.0 / math.sqrt(max(abs(lam), 1.0)))


def _shoot_modes(profile, lam, z_match, dense=False):
    zs = profile.z_ser
    zl = profile.z_left
    zm = effective_match(z_match, lam)
    yl = np.concatenate([_left_series(profile.b, zl), _mode_left(profile.b, lam, zl)])
    yr = np.concatenate([_right_series(profile.c, -zs), _mode_right(profile.c, lam, -zs)])
    L = _integrate(_pert_rhs, (zl, zm), yl, args=(lam,), dense=dense)
    R = _integrate(_pert_rhs, (1.0 - zs, zm), yr, args=(lam,), dense=dense)
    return L, R


def matching_determinant(profile: SelfSimilarProfile, lam: float, z_match: float = 0.5) -> float:
    """Normalized Wronskian (sine of the angle between the two shots) at the match point."""
    L, R = _shoot_modes(profile, lam, z_match)
    fl, gl = L.y[2, -1], L.y[3, -1]
    fr, gr = R.y[2, -1], R.y[3, -1]
    return float((fl * gr - gl * fr) / (math.hypot(fl, gl) * math.hypot(fr, gr)))


def scaled_wronskian(profile: SelfSimilarProfile, lam: float, z_match: float = 0.5) -> float:
    """Wronskian of the shots normalized at their endpoints (f'(0) = 1, f(1) = 1).

    Multiplied by z^2 |1 - z^2|^(-lambda) it is independent of the match
    point, and it is continuous in lambda apart from the poles of the cone
    series at lambda = 0, 1, 2.
    """
    L, R = _shoot_modes(profile, lam, z_match)
    z = float(L.t[-1])
    w = L.y[2, -1] * R.y[3, -1] - L.y[3, -1] * R.y[2, -1]
    return float(w * z * z * (1.0 - z * z) ** (-lam))


@dataclass(frozen=True, eq=False)
class EigenvalueResult:
    """One eigenvalue with its mode normalized to f'(0) = 1."""

    lam: float
    mode: Callable
    classification: str
    residual_norm: float
    determinant: float

    def __call__(self, z):
        return self.mode(z)


class _Mode:
    def __init__(self, profile, lam, L, R, scale):
        self.profile, self.lam, self.L, self.R, self.scale = profile, lam, L, R, scale
        self.z_match = float(L.t[-1])

    def _eval(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        p = self.profile
        out = np.empty((2, z.size))
        zl, zs = p.z_left, p.z_ser
        m0 = z <= zl
        m1 = (z > zl) & (z <= self.z_match)
        m2 = (z > self.z_match) & (z < 1.0 - zs)
        m3 = z >= 1.0 - zs
        if m0.any():
            out[:, m0] = _mode_left(p.b, self.lam, z[m0])
        if m1.any():
            out[:, m1] = self.L.sol(z[m1])[2:]
        if m2.any():
            out[:, m2] = self.scale * self.R.sol(z[m2])[2:]
        if m3.any():
            out[:, m3] = self.scale * _mode_right(p.c, self.lam, z[m3] - 1.0)
        return out

    def __call__(self, z):
        v = self._eval(z)[0]
        return v if np.ndim(z) else float(v[0])

    def derivative(self, z):
        v = self._eval(z)[1]
        return v if np.ndim(z) else float(v[0])


def mode_residual(profile: SelfSimilarProfile, lam: float, mode, n_points: int = 2001) -> float:
    """sup |perturbation equation| / sup |f| on [z_ser, 1 - z_ser]."""
    zs = profile.z_ser
    z = np.unique(np.concatenate([np.linspace(zs, 1.0 - zs, n_points),
                                  np.geomspace(zs, 0.5, n_points // 4)]))
    z, h = _fd_points(z, profile.b, mode.z_match)
    f, g = mode(z), mode.derivative(z)
    d2 = _fd_second(mode.derivative, z, h)
    chi = profile(z)
    res = (z * z * (z * z - 1.0) * d2 + 2.0 * z * (z * z - 1.0 - lam * z * z) * g
           + (2.0 * np.cos(2.0 * chi) + (lam * lam - lam) * z * z) * f)
    return float(np.max(np.abs(res)) / max(np.max(np.abs(f)), 1e-300))


def _scan_points(lo, hi, step):
    # uniform spacing near the origin, geometric (2%) for large |lambda|
    pts = [lo]
    while pts[-1] < hi:
        pts.append(pts[-1] + max(step, 0.02 * abs(pts[-1])))
    pts[-1] = hi
    out = np.array(pts)
    for r in RESONANT_LAMBDAS:
        out[np.abs(out - r) < 1e-9] += 1e-6
    return out


def _classify(lam, gauge_tol):
    if abs(lam + 1.0) <= gauge_tol:
        return "Gauge"
    return "Unstable" if lam < 0 else "Stable"


def lambda_spectrum(profile: SelfSimilarProfile, lambda_range=(-100.0, 5.0),
                    count_limit: int | None = None, z_match: float = 0.5, step: float = 0.25,
                    min_step: float = 1e-6, pole_ratio: float = 1e-6,
                    gauge_tol: float = 1e-3) -> list[EigenvalueResult]:
    """Real eigenvalues in ``lambda_range`` by scanning the scaled Wronskian.

    Each sign change is refined by bisection.  Roots at the poles of the
    cone series (lambda = 0, 1, 2) are discarded, as is any sign change
    through infinity (|W| at the converged point above ``pole_ratio`` times
    its value at the cell ends).  A cell found to hold more
    than one sign change after subdivision is rescanned with a halved step
    down to ``min_step``.
    """
    lo, hi = map(float, lambda_range)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError("lambda_range must be a finite increasing interval")

    def det(lam):
        return scaled_wronskian(profile, lam, z_match)

    def roots_in(a, b, da, db, h):
        if np.sign(da) == np.sign(db):
            return []
        sub = np.linspace(a, b, 5)
        vals = [da] + [det(x) for x in sub[1:-1]] + [db]
        flips = [i for i in range(4) if np.sign(vals[i]) != np.sign(vals[i + 1])]
        if len(flips) > 1:
            if h / 2 < min_step:
                raise BracketError(f"eigenvalues closer than {min_step} near lambda={a:.6g}")
            out = []
            for i in range(4):
                out += roots_in(sub[i], sub[i + 1], vals[i], vals[i + 1], h / 2)
            return out
        i = flips[0]
        x = brentq(det, sub[i], sub[i + 1], xtol=1e-13, rtol=1e-14)
        # a pole leaves |W| large at the converged point
        if abs(det(x)) > pole_ratio * max(abs(vals[i]), abs(vals[i + 1])):
            return []
        return [x]

    lams = _scan_points(lo, hi, step)
    vals = [det(x) for x in lams]
    found = []
    for k in range(len(lams) - 1):
        for x in roots_in(lams[k], lams[k + 1], vals[k], vals[k + 1], lams[k + 1] - lams[k]):
            if any(abs(x - r) < 1e-6 for r in RESONANT_LAMBDAS):
                continue
            found.append(x)
    found.sort()
    if count_limit is not None:
        found = found[:count_limit]

    results = []
    for lam in found:
        L, R = _shoot_modes(profile, lam, z_match, dense=True)
        fr = R.y[2, -1]
        scale = L.y[2, -1] / fr if fr != 0 else 1.0
        mode = _Mode(profile, lam, L, R, scale)
        results.append(EigenvalueResult(lam=float(lam), mode=mode,
                                        classification=_classify(lam, gauge_tol),
                                        residual_norm=mode_residual(profile, lam, mode),
                                        determinant=matching_determinant(profile, lam, z_match)))
    return results


def unstable_count(spectrum: list[EigenvalueResult]) -> int:
    return sum(1 for e in spectrum if e.classification == "Unstable")


# ---------------------------------------------------------------------------
# comparison of evolutions with a profile


@dataclass(frozen=True)
class SelfSimilarComparison:
    """Per-frame deviation of an evolution from a self-similar profile."""

    t_star: float
    taus: np.ndarray
    times: np.ndarray
    deviations: np.ndarray
    z_window: tuple[float, float]
    frames: list = field(default_factory=list)
    orientation: int = 1


def _frame_deviation(state, grid, profile, t_star, z_window, sign=1):
    s = t_star - state.t
    if s <= 0:
        return math.inf, None
    z = grid.radii / s
    keep = (z >= z_window[0]) & (z <= z_window[1])
    if np.count_nonzero(keep) < 5:
        return math.inf, None
    ref = sign * profile(z[keep])
    scale = max(np.max(np.abs(ref)), 1e-300)
    dev = float(np.max(np.abs(state.chi[keep] - ref)) / scale)
    return dev, (grid.radii[keep], state.chi[keep], ref)


def align_collapse_time(state, grid, profile, z_window=(0.0, 1.0), s_bounds=None,
                        sign: int = 1) -> float:
    """Collapse time that best overlays one snapshot on ``sign * profile``."""
    from scipy.optimize import minimize_scalar

    r = grid.radii
    lo, hi = s_bounds if s_bounds is not None else (4.0 * r[0], r[-1])

    def cost(log_s):
        dev, _ = _frame_deviation(state, grid, profile, state.t + math.exp(log_s), z_window, sign)
        return dev

    logs = np.linspace(math.log(lo), math.log(hi), 200)
    costs = np.array([cost(x) for x in logs])
    i = int(np.argmin(costs))
    a, b = logs[max(0, i - 1)], logs[min(len(logs) - 1, i + 1)]
    best = minimize_scalar(cost, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    return state.t + math.exp(best.x)


def ss_compare(record, profile: SelfSimilarProfile, T_star: float | None = None,
               taus=None, n_frames: int = 5, z_window=(0.0, 1.0),
               orientation: int | None = None) -> SelfSimilarComparison:
    """Rescale snapshots to z = r/(T* - t) and measure the deviation from ``profile``.

    Frames are the snapshots nearest to ``taus`` (values of ln(T* - t)).
    Without ``taus``, ``n_frames`` values are spaced evenly between the
    first snapshot and the last one before T* (the aligned T* when it is
    not given).
    When ``T_star`` is omitted it is fixed by overlaying the first frame on
    the profile, and the remaining frames use the same T*.  The field
    equation is odd in chi, so the data may approach ``-profile``;
    ``orientation=None`` picks the sign that fits the first frame better.
    Deviations are sup |chi - chi_profile| over the window divided by
    sup |chi_profile|.
    """
    snaps = list(record.snapshots)
    if not snaps:
        raise InsufficientDataError("record holds no snapshots")
    grid = record.grid
    provisional = None
    if T_star is None:
        # tau is measured against a provisional T* from the diagnostics until
        # the first frame fixes the time origin
        from .criticality import collapse_time

        try:
            provisional = collapse_time(record).t_star
        except EstimationError as exc:
            raise InsufficientDataError(f"no collapse time to anchor the frames: {exc}") from exc
    auto_taus = taus is None
    if taus is None:
        t_ref = T_star if T_star is not None else provisional
        before = [s for s in snaps if s.t < t_ref]
        if len(before) < 2:
            raise InsufficientDataError("fewer than two snapshots before the collapse time")
        t_hi = math.log(t_ref - before[0].t)
        t_lo = math.log(t_ref - before[-1].t)
        taus = np.linspace(t_hi, t_lo, n_frames)
    taus = np.asarray(taus, dtype=float)
    times = np.array([s.t for s in snaps])
    if orientation not in (None, 1, -1):
        raise ValueError("orientation must be None, 1 or -1")

    def pick(tau, t_star):
        target = t_star - math.exp(tau)
        return snaps[int(np.argmin(np.abs(times - target)))]

    if T_star is None:
        first = pick(taus[0], provisional)
        signs = (1, -1) if orientation is None else (orientation,)
        fits = []
        for sg in signs:
            ts = align_collapse_time(first, grid, profile, z_window, sign=sg)
            fits.append((_frame_deviation(first, grid, profile, ts, z_window, sg)[0], sg, ts))
        _, orientation, T_star = min(fits)
        if auto_taus:
            # respace the frames against the aligned collapse time
            last = [s for s in snaps if s.t < T_star]
            if not last or first.t >= T_star:
                raise InsufficientDataError("aligned collapse time precedes the first frame")
            taus = np.linspace(math.log(T_star - first.t), math.log(T_star - last[-1].t),
                               n_frames)
    elif orientation is None:
        first = pick(taus[0], T_star)
        orientation = min((1, -1), key=lambda sg: _frame_deviation(
            first, grid, profile, T_star, z_window, sg)[0])
    frames, devs, ts = [], [], []
    for tau in taus:
        st = pick(tau, T_star)
        if st.t >= T_star:
            raise InsufficientDataError(f"no snapshot before collapse for tau={tau:.3g}")
        dev, data = _frame_deviation(st, grid, profile, T_star, z_window, orientation)
        if data is None:
            raise InsufficientDataError(f"frame at tau={tau:.3g} leaves too few points in window")
        frames.append(data)
        devs.append(dev)
        ts.append(st.t)
    return SelfSimilarComparison(t_star=float(T_star), taus=taus, times=np.array(ts),
                                 deviations=np.array(devs), z_window=tuple(z_window),
                                 frames=frames, orientation=int(orientation))
