"""Outcome classification, threshold bisection, collapse times and scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .errors import BracketError, EstimationError
from .evolver import (EvolutionRecord, ModelParams, MonitorSpec, Numerics, RadialGrid, evolve)
from .initial_data import FamilySpec

SINGULAR, DISPERSED, AMBIGUOUS = "Singular", "Dispersed", "Ambiguous"


@dataclass(frozen=True)
class ClassifierSpec:
    """Thresholds for :func:`classify_outcome`.

    ``blow_factor`` and ``window`` define the blow-up trigger (central
    density above blow_factor times its initial value, or times
    ``density_floor`` if larger, and rising over the last ``window`` checks).  Dispersal needs the energy inside the inner
    radius below ``f_disp`` times the initial total energy, with the chi
    range below pi, over the last ``sustained`` fraction of the run.
    """

    blow_factor: float = 1e6
    density_floor: float = 1e-3
    window: int = 10
    f_disp: float = 1e-3
    sustained: float = 0.1
    promote_range_flag: bool = True

    def as_dict(self) -> dict:
        return {"blow_factor": self.blow_factor, "density_floor": self.density_floor,
                "window": self.window, "f_disp": self.f_disp,
                "sustained": self.sustained, "promote_range_flag": self.promote_range_flag}


@dataclass(frozen=True)
class OutcomeLabel:
    verdict: str
    evidence: dict = field(default_factory=dict)

    @property
    def singular(self) -> bool:
        return self.verdict == SINGULAR

    @property
    def dispersed(self) -> bool:
        return self.verdict == DISPERSED


def _rising(values) -> bool:
    v = list(values)
    return len(v) >= 2 and all(b > a for a, b in zip(v, v[1:]))


def classify_outcome(record: EvolutionRecord, spec: ClassifierSpec = ClassifierSpec()) -> OutcomeLabel:
    """Label a run Singular, Dispersed or Ambiguous from its diagnostics."""
    cd0 = record.initial_central_density
    e0 = record.initial_energy
    tail = list(record.density_tail)[-spec.window:]
    rising = _rising(tail) and len(tail) >= min(spec.window, len(record.density_tail))
    peak = float(np.max(record.central_density)) if record.central_density.size else 0.0
    peak = max(peak, max(tail) if tail else 0.0)
    evidence: dict[str, Any] = {
        "halt_reason": record.halt_reason,
        "halt_time": record.halt_time,
        "peak_density": peak,
        "initial_density": cd0,
        "growth_factor": peak / cd0 if cd0 > 0 else (math.inf if peak > 0 else 1.0),
        "max_chi_range": float(np.max(record.chi_range)),
        "range_flag_time": record.range_flag_time,
        "density_rising": rising,
        "thresholds": spec.as_dict(),
    }
    if record.halt_reason == "blowup" or (
            tail and tail[-1] > spec.blow_factor * max(cd0, spec.density_floor) and rising):
        evidence["trigger"] = "blowup"
        return OutcomeLabel(SINGULAR, evidence)
    if record.halt_reason == "step_divergence":
        evidence["divergence_residual"] = record.divergence_residual
        if rising:
            evidence["trigger"] = "step_divergence"
            return OutcomeLabel(SINGULAR, evidence)
        evidence["note"] = "step iteration diverged without rising density"
        return OutcomeLabel(AMBIGUOUS, evidence)
    if record.halt_reason == "poisoned":
        evidence["note"] = "state poisoned"
        if rising:
            evidence["trigger"] = "poisoned_rising"
            return OutcomeLabel(SINGULAR, evidence)
        return OutcomeLabel(AMBIGUOUS, evidence)
    if record.range_flag_time is not None and spec.promote_range_flag:
        evidence["trigger"] = "range_flag"
        return OutcomeLabel(SINGULAR, evidence)

    if e0 == 0.0 and peak == 0.0 and float(np.max(np.abs(record.energy))) == 0.0:
        evidence["trigger"] = "trivial"
        return OutcomeLabel(DISPERSED, evidence)
    if record.halt_reason != "completed":
        return OutcomeLabel(AMBIGUOUS, evidence)
    span = record.t_end - record.t_start
    late = record.times >= record.t_end - spec.sustained * span - 1e-12
    if np.count_nonzero(late) == 0:
        return OutcomeLabel(AMBIGUOUS, evidence)
    frac = record.energy_inner[late] / e0 if e0 > 0 else np.zeros(np.count_nonzero(late))
    evidence["final_inner_fraction"] = float(frac[-1])
    evidence["max_late_inner_fraction"] = float(np.max(frac))
    if np.all(frac < spec.f_disp) and np.all(record.chi_range[late] < math.pi):
        evidence["trigger"] = "dispersal"
        return OutcomeLabel(DISPERSED, evidence)
    return OutcomeLabel(AMBIGUOUS, evidence)


# ---------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class RunSettings:
    """Everything needed to evolve a family member besides its amplitude."""

    grid: RadialGrid
    t_end: float
    params: ModelParams = ModelParams()
    monitors: MonitorSpec = MonitorSpec(n_snapshots=0, on_divergence="record")
    numerics: Numerics = Numerics()
    classifier: ClassifierSpec = ClassifierSpec()

    def longer(self, factor: float = 2.0) -> "RunSettings":
        return replace(self, t_end=self.t_end * factor)


def run_member(family: FamilySpec, settings: RunSettings) -> tuple[OutcomeLabel, EvolutionRecord]:
    """Evolve one family member and classify it."""
    state = family.build(settings.grid)
    t_end = settings.t_end if settings.t_end > state.t else state.t + settings.t_end
    rec = evolve(state, t_end, settings.grid, settings.params, settings.monitors,
                 settings.numerics, classify=False)
    label = classify_outcome(rec, settings.classifier)
    extra = {"turnaround_time": turnaround_time(rec), "t_star": None}
    if label.verdict == SINGULAR:
        try:
            extra["t_star"] = collapse_time(rec).t_star
        except EstimationError:
            pass
    label = OutcomeLabel(label.verdict, dict(label.evidence, **extra))
    return label, replace(rec, outcome=label)


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# bisection


@dataclass
class CriticalSearchResult:
    """Bracket on the threshold amplitude with the full run history.

    ``history`` rows are (amplitude, OutcomeLabel).  ``status`` is
    ``converged``, ``budget_exhausted`` or ``ambiguous``.
    """

    family: FamilySpec
    bracket: tuple[float, float]
    p_star: float
    history: list
    status: str
    tol: float
    last_dispersed: EvolutionRecord | None = None
    last_singular: EvolutionRecord | None = None

    @property
    def relative_width(self) -> float:
        lo, hi = self.bracket
        return (hi - lo) / abs(0.5 * (lo + hi))

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def check_bracket_history(result: CriticalSearchResult) -> None:
    """Assert that every recorded side label is consistent with the final bracket."""
    lo, hi = result.bracket
    for p, label in result.history:
        if label.verdict == DISPERSED:
            assert p <= lo, f"dispersed run at {p} lies above the lower bracket {lo}"
        elif label.verdict == SINGULAR:
            assert p >= hi, f"singular run at {p} lies below the upper bracket {hi}"


def bisect_critical(family: FamilySpec, p_lo: float, p_hi: float, settings: RunSettings,
                    tol: float = 1e-8, budget: int = 80, keep_records: bool = False,
                    progress: Callable | None = None) -> CriticalSearchResult:
    """Bisect the family amplitude between a dispersing and a singular member.

    Both ends are evolved first; a wrong or ambiguous end raises
    :class:`BracketError`.  An ambiguous midpoint is rerun once for twice
    the time; if still ambiguous the search stops with status ``ambiguous``.
    ``tol`` bounds the bracket width relative to its midpoint.
    """
    if not p_lo < p_hi:
        raise BracketError("need p_lo < p_hi")
    history: list = []
    runs = 0
    records: dict[str, EvolutionRecord | None] = {DISPERSED: None, SINGULAR: None}

    def probe(p, s=settings):
        nonlocal runs
        runs += 1
        label, rec = run_member(family.with_amplitude(p), s)
        history.append((p, label))
        if keep_records and label.verdict in records:
            records[label.verdict] = rec
        if progress is not None:
            progress(p, label)
        return label

    lo_label = probe(p_lo)
    if lo_label.verdict != DISPERSED:
        raise BracketError(f"lower end {p_lo} is {lo_label.verdict}, expected Dispersed")
    hi_label = probe(p_hi)
    if hi_label.verdict != SINGULAR:
        raise BracketError(f"upper end {p_hi} is {hi_label.verdict}, expected Singular")
    lo, hi = p_lo, p_hi
    status = "converged"
    while (hi - lo) / abs(0.5 * (lo + hi)) > tol:
        if runs >= budget:
            status = "budget_exhausted"
            break
        mid = 0.5 * (lo + hi)
        label = probe(mid)
        if label.verdict == AMBIGUOUS and runs < budget:
            label = probe(mid, settings.longer())
        if label.verdict == DISPERSED:
            lo = mid
        elif label.verdict == SINGULAR:
            hi = mid
        else:
            status = "ambiguous"
            break
    return CriticalSearchResult(family=family, bracket=(lo, hi), p_star=0.5 * (lo + hi),
                                history=history, status=status, tol=tol,
                                last_dispersed=records[DISPERSED],
                                last_singular=records[SINGULAR])


# ---------------------------------------------------------------------------
# collapse time


@dataclass(frozen=True)
class CollapseEstimate:
    t_star: float
    residual: float
    n_points: int
    t_first: float
    t_last: float


def collapse_time(record: EvolutionRecord, density_span: float = 64.0, resolved_fraction: float = 0.25,
                  min_points: int = 8, require_singular: bool = False) -> CollapseEstimate:
    """Fit central density ~ C (T* - t)^-2 on the growth phase; return T*.

    Uses the per-step density tail joined to the sampled series, keeps the
    monotonically rising stretch that ends at the peak, drops points above
    ``resolved_fraction`` of the peak (the grid no longer resolves the
    collapse there) and fits density^(-1/2) linearly in t over the points
    within a factor ``density_span`` below the highest remaining one.
    """
    label = record.outcome
    if require_singular and (label is None or label.verdict != SINGULAR):
        raise EstimationError("collapse time needs a singular record")
    t = np.concatenate([record.times, record.tail_times])
    d = np.concatenate([record.central_density, record.tail_density])
    order = np.argsort(t, kind="stable")
    t, d = t[order], d[order]
    keep = np.concatenate([[True], np.diff(t) > 0])
    t, d = t[keep], d[keep]
    i_peak = int(np.argmax(d))
    j = i_peak
    while j > 0 and d[j - 1] < d[j]:
        j -= 1
    t, d = t[j:i_peak + 1], d[j:i_peak + 1]
    t, d = t[d <= resolved_fraction * d[-1]], d[d <= resolved_fraction * d[-1]]
    if t.size:
        use = d >= d[-1] / density_span
        t, d = t[use], d[use]
    if t.size < min_points or d[-1] < 4.0 * d[0]:
        raise EstimationError("no monotone density growth to fit")
    y = d ** -0.5
    slope, icpt = np.polyfit(t, y, 1)
    if slope >= 0:
        raise EstimationError("density growth is not of collapse type")
    resid = float(np.sqrt(np.mean((np.polyval([slope, icpt], t) - y) ** 2)) / np.mean(y))
    return CollapseEstimate(t_star=float(-icpt / slope), residual=resid, n_points=int(t.size),
                            t_first=float(t[0]), t_last=float(t[-1]))


# ---------------------------------------------------------------------------
# sign tests


@dataclass(frozen=True)
class SignTestResult:
    verdict: str
    plus: OutcomeLabel
    minus: OutcomeLabel
    amplitude: float
    base: str

    @property
    def split(self) -> bool:
        return self.verdict == "SignSplit"


def _sign_verdict(plus: OutcomeLabel, minus: OutcomeLabel) -> str:
    if AMBIGUOUS in (plus.verdict, minus.verdict):
        return "Indeterminate"
    if plus.verdict == SINGULAR and minus.verdict == DISPERSED:
        return "SignSplit"
    return "NoSplit"


def sign_test(family: FamilySpec, settings: RunSettings, jobs: int = 1,
              keep_records: bool = False):
    """Evolve the family at +amplitude and -amplitude and compare outcomes."""
    A = abs(family.amplitude)
    members = [family.with_amplitude(A), family.with_amplitude(-A)]
    out = _map(_SignRunner(settings), members, jobs)
    (lp, rp), (lm, rm) = out
    res = SignTestResult(verdict=_sign_verdict(lp, lm), plus=lp, minus=lm, amplitude=A,
                         base=family.kind)
    return (res, rp, rm) if keep_records else res


class _SignRunner:
    def __init__(self, settings):
        self.settings = settings

    def __call__(self, fam):
        return run_member(fam, self.settings)


def attractor_sign_test(base: tuple, amplitude: float, r0: float, width: float,
                        settings: RunSettings, jobs: int = 1, t0: float = -1.0,
                        keep_records: bool = False):
    """Sign-split test about a self-similar or static background.

    ``base`` is ``("ab", n)`` or ``("static", a)``.
    """
    kind, value = base
    if kind == "ab":
        from .self_similar import solve_ab

        z_top = settings.grid.r_max / abs(t0)
        prof = solve_ab(int(value), z_ext=z_top * 1.01)
        fam = FamilySpec("perturbed_self_similar", amplitude, r0, width,
                         {"n": int(value), "t0": t0, "profile": prof})
    elif kind == "static":
        from .static import solve_static

        prof = solve_static(float(value), R_ode=settings.grid.r_max * 1.01)
        fam = FamilySpec("perturbed_static", amplitude, r0, width,
                         {"a": float(value), "profile": prof})
    else:
        raise ValueError(f"unknown base {kind!r}; expected 'ab' or 'static'")
    return sign_test(fam, settings, jobs, keep_records)


# ---------------------------------------------------------------------------
# regime scan


@dataclass(frozen=True)
class RegimeRow:
    eps: float
    label: OutcomeLabel
    turnaround_time: float | None
    regime: str
    peak_density: float


def turnaround_time(record: EvolutionRecord, min_rise: float = 0.2,
                    min_drop: float = 0.2) -> float | None:
    """Time at which the energy centroid inside r_in stops moving out and returns.

    Requires the centroid to rise by ``min_rise`` of its initial value and
    then fall by ``min_drop`` of its maximum.
    """
    c = np.asarray(record.centroid)
    if c.size < 3:
        return None
    i = int(np.argmax(c))
    c0 = c[0]
    if c[i] <= (1.0 + min_rise) * max(c0, 1e-300):
        return None
    if np.min(c[i:]) > (1.0 - min_drop) * c[i]:
        return None
    return float(record.times[i])


def regime_of(label: OutcomeLabel, t_turn: float | None) -> str:
    if label.verdict == SINGULAR:
        return "turnaround_collapse" if t_turn is not None else "quick_collapse"
    if label.verdict == DISPERSED:
        return "disperse"
    return "turnaround" if t_turn is not None else "undetermined"


def regime_scan(eps_grid, settings: RunSettings, Delta: float = 1.0, jobs: int = 1,
                keep_records: bool = False):
    """Evolve Turok-Spergel data over ascending eps and label each run."""
    eps_grid = [float(e) for e in eps_grid]
    if any(b <= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps grid must be ascending")
    fams = [FamilySpec("turok_spergel", e, Delta, 1.0) for e in eps_grid]
    out = _map(_SignRunner(settings), fams, jobs)
    rows, recs = [], []
    for e, (label, rec) in zip(eps_grid, out):
        tt = turnaround_time(rec)
        rows.append(RegimeRow(e, label, tt, regime_of(label, tt),
                              float(label.evidence.get("peak_density", math.nan))))
        recs.append(rec)
    return (rows, recs) if keep_records else rows
