"""Initial-data families in first-order (chi, Pi) form.

Every constructor returns a :class:`~wavemap.evolver.FieldState` whose ``meta``
records the family, its parameters and the asymptotic value ``chi_far`` used
by the outgoing boundary condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evolver import FieldState, RadialGrid

KINDS = ("gaussian", "logarithmic", "turok_spergel", "tanh", "perturbed_static",
         "perturbed_self_similar")


def _state(grid, chi, pi, t=0.0, **meta) -> FieldState:
    return FieldState(float(t), np.asarray(chi, dtype=float), np.asarray(pi, dtype=float), meta)


def _pulse(r, amp, r0, width):
    g = amp * np.exp(-((r - r0) / width) ** 2)
    return g, -2.0 * (r - r0) / width ** 2 * g


def gaussian(A: float, R0: float, delta: float, grid: RadialGrid) -> FieldState:
    """chi = A exp(-(r - R0)^2 / delta^2), Pi = chi' (approximately in-going)."""
    if delta <= 0:
        raise ValueError("width delta must be positive")
    chi, dchi = _pulse(grid.radii, A, R0, delta)
    return _state(grid, chi, dchi, family="gaussian", A=A, R0=R0, delta=delta, chi_far=0.0)


def _ramp(r, r_ramp):
    # odd quintic smoothstep: 0 at r=0, 1 with two vanishing derivatives at r_ramp
    x = np.clip(r / r_ramp, 0.0, 1.0)
    s = x * (15.0 - 10.0 * x ** 2 + 3.0 * x ** 4) / 8.0
    ds = np.where(r < r_ramp, 15.0 * (1.0 - x ** 2) ** 2 / (8.0 * r_ramp), 0.0)
    return s, ds


def logarithmic(A: float, R0: float, delta: float, grid: RadialGrid,
                r_ramp: float | None = None) -> FieldState:
    """chi = A ln(r + R0) / (r + delta), Pi = chi'.

    When ``R0 != 1`` the profile has chi(0) = A ln(R0)/delta != 0; it is then
    multiplied by a smooth ramp on [0, r_ramp] (default ten innermost cell
    widths) so that chi(0) = 0, and the ramp is recorded in ``meta``.
    """
    if R0 <= 0:
        raise ValueError("R0 must be positive so that ln(r + R0) is defined on r >= 0")
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = grid.radii
    chi = A * np.log(r + R0) / (r + delta)
    dchi = A * (1.0 / ((r + R0) * (r + delta)) - np.log(r + R0) / (r + delta) ** 2)
    meta = dict(family="logarithmic", A=A, R0=R0, delta=delta, chi_far=0.0, ramp=None)
    if A != 0.0 and R0 != 1.0:
        r_ramp = 10.0 * grid.min_spacing if r_ramp is None else r_ramp
        s, ds = _ramp(r, r_ramp)
        chi, dchi = chi * s, dchi * s + chi * ds
        meta["ramp"] = r_ramp
    return _state(grid, chi, dchi, **meta)


def turok_spergel(eps: float, Delta: float, grid: RadialGrid) -> FieldState:
    """chi = 2 eps arctan(r / Delta), Pi = 2 eps r / (Delta^2 + r^2).

    For eps = 1 this is the t = -Delta slice of the exact self-similar
    solution 2 arctan(r / (Delta - t)), which collapses at t = Delta.
    """
    if Delta <= 0:
        raise ValueError("Delta must be positive")
    r = grid.radii
    chi = 2.0 * eps * np.arctan(r / Delta)
    pi = 2.0 * eps * r / (Delta ** 2 + r ** 2)
    return _state(grid, chi, pi, family="turok_spergel", eps=eps, Delta=Delta,
                  chi_far=eps * math.pi)


def tanh_family(A: float, R0: float, delta: float, grid: RadialGrid) -> FieldState:
    """chi = A [tanh((r - R0)/delta)/2 + 1/2], Pi = chi'."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    u = np.tanh((grid.radii - R0) / delta)
    chi = A * (0.5 * u + 0.5)
    dchi = 0.5 * A * (1.0 - u ** 2) / delta
    return _state(grid, chi, dchi, family="tanh", A=A, R0=R0, delta=delta, chi_far=A)


def perturbed_static(a: float, A_p: float, R0_p: float, delta_p: float, grid: RadialGrid,
                     profile=None) -> FieldState:
    """Static solution chi_s plus a Gaussian pulse.

    Pi = [-(r - R0_p)/delta_p^2] A_p exp(-(r - R0_p)^2/delta_p^2), exactly
    the pulse velocity used for the threshold test (half of the pulse slope).
    ``profile`` may pass a precomputed :class:`~wavemap.static.StaticProfile`.
    """
    from .static import solve_static

    if delta_p <= 0:
        raise ValueError("delta_p must be positive")
    r = grid.radii
    if profile is None:
        profile = solve_static(a, R_ode=max(grid.r_max * 1.01, 1.0))
    chi_s = profile(r)
    g = A_p * np.exp(-((r - R0_p) / delta_p) ** 2)
    pi = -(r - R0_p) / delta_p ** 2 * g
    chi_far = math.copysign(math.pi / 2, a) if a != 0 else 0.0
    return _state(grid, chi_s + g, pi, family="perturbed_static", a=a, A_p=A_p, R0_p=R0_p,
                  delta_p=delta_p, chi_far=chi_far)


def perturbed_self_similar(n: int, t0: float, A_p: float, R0_p: float, delta_p: float,
                           grid: RadialGrid, profile=None) -> FieldState:
    """The AB_n solution on the slice t = t0 < 0 plus an in-going Gaussian pulse.

    chi(r) = chi_n(-r/t0) + pulse and Pi(r) = (r/t0^2) chi_n'(-r/t0) + pulse',
    the exact time derivative of the self-similar solution; the run collapses
    at t = 0 when the pulse vanishes.
    """
    from .self_similar import solve_ab

    if t0 >= 0:
        raise ValueError("t0 must be negative (a pre-collapse slice)")
    r = grid.radii
    z_top = grid.r_max / abs(t0)
    if profile is None:
        profile = solve_ab(n, z_ext=z_top * 1.01)
    elif profile.z_ext < z_top:
        profile = profile.extended(z_top * 1.01)
    z = -r / t0
    chi = profile(z)
    pi = (r / t0 ** 2) * profile.derivative(z)
    g, dg = _pulse(r, A_p, R0_p, delta_p)
    return _state(grid, chi + g, pi + dg, t=t0, family="perturbed_self_similar", n=n, t0=t0,
                  A_p=A_p, R0_p=R0_p, delta_p=delta_p, chi_far=float(profile(z_top)),
                  b=profile.b)


@dataclass
class FamilySpec:
    """A data family with its amplitude parameter, as used by scans and bisection.

    ``amplitude`` is A (or eps, or A_p for the perturbed families), ``r0`` is
    R0 (or Delta), ``width`` is delta.  ``extras`` holds kind-specific values:
    ``a`` for perturbed static data; ``n`` and ``t0`` for perturbed
    self-similar data.  Cached background profiles live in ``extras`` under
    the key ``profile``.
    """

    kind: str
    amplitude: float
    r0: float = 5.0
    width: float = 1.0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}; expected one of {KINDS}")
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.kind == "turok_spergel" and self.r0 <= 0:
            raise ValueError("Delta must be positive")

    def with_amplitude(self, amplitude: float) -> "FamilySpec":
        return FamilySpec(self.kind, float(amplitude), self.r0, self.width, dict(self.extras))

    def build(self, grid: RadialGrid) -> FieldState:
        k, A = self.kind, self.amplitude
        if k == "gaussian":
            return gaussian(A, self.r0, self.width, grid)
        if k == "logarithmic":
            return logarithmic(A, self.r0, self.width, grid, self.extras.get("r_ramp"))
        if k == "turok_spergel":
            return turok_spergel(A, self.r0, grid)
        if k == "tanh":
            return tanh_family(A, self.r0, self.width, grid)
        if k == "perturbed_static":
            return perturbed_static(self.extras.get("a", 1.0), A, self.r0, self.width, grid,
                                    self.extras.get("profile"))
        return perturbed_self_similar(int(self.extras.get("n", 1)), self.extras.get("t0", -1.0),
                                      A, self.r0, self.width, grid, self.extras.get("profile"))

    def describe(self) -> dict:
        out = {"kind": self.kind, "amplitude": self.amplitude, "r0": self.r0, "width": self.width}
        out.update({f"extras.{k}": v for k, v in self.extras.items() if k != "profile"})
        return out
