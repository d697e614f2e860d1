"""Configuration-driven command line: ``wavemap <command> --config FILE``.

Every run writes its data files, a config echo with all defaults filled in,
a JSON summary (see README for the schema) and a separate metadata file
holding wall-clock information, all prefixed by ``run.id``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as wio
from .errors import ConfigError, DependencyError, WavemapError

COMMANDS = ("evolve", "bisect", "ab-solve", "lambda-spec", "static-solve", "omega-spec",
            "sign-test", "regime-scan", "ss-compare", "convergence", "figure")
FIGURES = ("fig1", "fig2", "fig3", "fig4")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_AMBIGUOUS = 4
EXIT_IO = 5
EXIT_DEPENDENCY = 6

# key -> (type, default); types: float, int, str, bool, floats, ofloat, oint
SCHEMA: dict[str, tuple[str, object]] = {
    "run.id": ("str", ""),
    "output.dir": ("str", "wavemap_out"),
    "family.kind": ("str", "gaussian"),
    "family.amplitude": ("float", 1.0),
    "family.r0": ("float", 5.0),
    "family.width": ("float", 1.0),
    "grid.policy": ("str", "clustered"),
    "grid.r_max": ("float", 50.0),
    "grid.dr_min": ("float", 2e-3),
    "grid.scale": ("float", 5.0),
    "model.m": ("int", 1),
    "numerics.cfl": ("float", 0.5),
    "numerics.iter_tol": ("float", 1e-10),
    "numerics.max_iters": ("int", 50),
    "numerics.dissipation": ("float", 1.0),
    "numerics.origin_stencil": ("str", "regular"),
    "monitors.t_end": ("float", 30.0),
    "monitors.n_samples": ("int", 200),
    "monitors.n_snapshots": ("int", 20),
    "monitors.r_in": ("ofloat", None),
    "monitors.blow_factor": ("float", 1e6),
    "monitors.density_floor": ("float", 1e-3),
    "monitors.blow_window": ("int", 10),
    "monitors.range_flag_halts": ("bool", True),
    "monitors.probe_radii": ("floats", ()),
    "monitors.tail_keep": ("int", 4000),
    "classifier.blow_factor": ("float", 1e6),
    "classifier.density_floor": ("float", 1e-3),
    "classifier.window": ("int", 10),
    "classifier.f_disp": ("float", 1e-3),
    "classifier.sustained": ("float", 0.1),
    "classifier.promote_range_flag": ("bool", True),
    "bisect.p_lo": ("float", 1e-3),
    "bisect.p_hi": ("float", 3.0),
    "bisect.tol": ("float", 1e-8),
    "bisect.budget": ("int", 80),
    "ab.n": ("int", 1),
    "ab.z_ser": ("float", 1e-3),
    "ab.z_match": ("float", 0.5),
    "ab.res_tol": ("float", 1e-8),
    "ab.b_max": ("float", 1e5),
    "ab.n_points": ("int", 1001),
    "lambda.lo": ("float", -100.0),
    "lambda.hi": ("float", 5.0),
    "lambda.count_limit": ("oint", None),
    "lambda.z_match": ("float", 0.5),
    "lambda.step": ("float", 0.25),
    "lambda.n_points": ("int", 401),
    "static.a": ("float", 1.0),
    "static.R_ode": ("float", 1000.0),
    "static.res_tol": ("float", 1e-8),
    "static.n_points": ("int", 2001),
    "omega.lo": ("ofloat", None),
    "omega.hi": ("ofloat", None),
    "omega.n_scan": ("int", 60),
    "omega.n_points": ("int", 2001),
    "sign.base": ("str", "static"),
    "sign.n": ("int", 1),
    "sign.a": ("float", 1.0),
    "sign.amplitude": ("float", 0.05),
    "sign.r0": ("float", 5.0),
    "sign.width": ("float", 1.0),
    "sign.t0": ("float", -1.0),
    "regime.eps": ("floats", (0.01, 0.302, 1.0)),
    "regime.Delta": ("float", 1.0),
    "ss.n": ("int", 1),
    "ss.n_frames": ("int", 4),
    "ss.tau_first": ("ofloat", None),
    "ss.tau_last": ("ofloat", None),
    "ss.T_star": ("ofloat", None),
    "ss.z_lo": ("float", 0.0),
    "ss.z_hi": ("float", 1.0),
    "ss.lookback": ("float", 0.25),
    "ss.n_snapshots": ("int", 301),
    "convergence.t_final": ("float", 2.0),
    "convergence.levels": ("int", 3),
    "convergence.ratio": ("int", 2),
    "figure.which": ("str", "fig1"),
    "figure.n_max": ("int", 8),
    "figure.n_points": ("int", 401),
    "figure.bisect_run": ("str", "bisect"),
    "figure.eps": ("float", 0.302),
    "figure.Delta": ("float", 1.0),
    "figure.t_match": ("ofloat", None),
    "figure.a_lo": ("float", 0.01),
    "figure.a_hi": ("float", 1.0),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(key: str, kind: str, text):
    if not isinstance(text, str):
        return text
    t = text.strip()
    try:
        if kind in ("ofloat", "oint") and t.lower() in ("none", ""):
            return None
        if kind in ("float", "ofloat"):
            return float(t)
        if kind in ("int", "oint"):
            return int(t)
        if kind == "bool":
            if t.lower() in _TRUE:
                return True
            if t.lower() in _FALSE:
                return False
            raise ValueError(t)
        if kind == "floats":
            return tuple(float(x) for x in t.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"config key {key}: cannot read {text!r} as {kind}") from None
    return t


def _extra_value(text):
    if not isinstance(text, str):
        return text
    try:
        v = float(text)
    except ValueError:
        return text
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


@dataclass
class RunConfig:
    """A validated command plus every setting, defaults included."""

    command: str
    values: dict
    extras: dict = field(default_factory=dict)
    deterministic: bool = True

    @classmethod
    def build(cls, command: str, raw: dict) -> "RunConfig":
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
        unknown = sorted(k for k in raw if k not in SCHEMA and not k.startswith("family.extras."))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values = {}
        for key, (kind, default) in SCHEMA.items():
            values[key] = _convert(key, kind, raw[key]) if key in raw else default
        if not values["run.id"]:
            values["run.id"] = command if command != "figure" else values["figure.which"]
        extras = {k[len("family.extras."):]: _extra_value(v) for k, v in raw.items()
                  if k.startswith("family.extras.")}
        cfg = cls(command, values, extras)
        cfg.validate()
        return cfg

    def validate(self):
        v = self.values
        if any(c in v["run.id"] for c in "/\\") or v["run.id"].startswith("."):
            raise ConfigError(f"run.id {v['run.id']!r} must be a plain file prefix")
        if v["grid.policy"] not in ("clustered", "uniform"):
            raise ConfigError("grid.policy must be 'clustered' or 'uniform'")
        if self.command == "figure" and v["figure.which"] not in FIGURES:
            raise ConfigError(f"figure.which must be one of {FIGURES}")
        if not v["ss.lookback"] > 0 or v["ss.n_snapshots"] < 2 or v["ss.n_frames"] < 2:
            raise ConfigError("ss.lookback must be positive; ss.n_snapshots and ss.n_frames at least 2")
        if v["sign.base"] not in ("static", "ab", "family"):
            raise ConfigError("sign.base must be 'static', 'ab' or 'family'")
        try:
            self.family()
            self.grid()
            self.numerics()
            self.monitors()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def __getitem__(self, key):
        return self.values[key]

    @property
    def run_id(self) -> str:
        return self.values["run.id"]

    def echo(self) -> dict:
        out = dict(self.values)
        out.update({f"family.extras.{k}": x for k, x in self.extras.items()})
        out["command"] = self.command
        out["deterministic"] = self.deterministic
        return out

    # builders

    def family(self):
        from .initial_data import FamilySpec

        v = self.values
        return FamilySpec(v["family.kind"], v["family.amplitude"], v["family.r0"],
                          v["family.width"], dict(self.extras))

    def grid(self):
        from .evolver import RadialGrid

        v = self.values
        if v["grid.policy"] == "uniform":
            return RadialGrid.uniform(v["grid.r_max"], v["grid.dr_min"])
        return RadialGrid.clustered(v["grid.r_max"], v["grid.dr_min"], v["grid.scale"])

    def params(self):
        from .evolver import ModelParams

        return ModelParams(self.values["model.m"])

    def numerics(self):
        from .evolver import Numerics

        v = self.values
        return Numerics(cfl=v["numerics.cfl"], iter_tol=v["numerics.iter_tol"],
                        max_iters=v["numerics.max_iters"], dissipation=v["numerics.dissipation"],
                        origin_stencil=v["numerics.origin_stencil"])

    def monitors(self, **overrides):
        from .evolver import MonitorSpec

        v = self.values
        kw = dict(n_samples=v["monitors.n_samples"], n_snapshots=v["monitors.n_snapshots"],
                  probe_radii=tuple(v["monitors.probe_radii"]), r_in=v["monitors.r_in"],
                  blow_factor=v["monitors.blow_factor"],
                  density_floor=v["monitors.density_floor"], blow_window=v["monitors.blow_window"],
                  range_flag_halts=v["monitors.range_flag_halts"], on_divergence="record",
                  tail_keep=v["monitors.tail_keep"])
        kw.update(overrides)
        return MonitorSpec(**kw)

    def classifier(self):
        from .criticality import ClassifierSpec

        v = self.values
        return ClassifierSpec(blow_factor=v["classifier.blow_factor"],
                              density_floor=v["classifier.density_floor"],
                              window=v["classifier.window"], f_disp=v["classifier.f_disp"],
                              sustained=v["classifier.sustained"],
                              promote_range_flag=v["classifier.promote_range_flag"])

    def settings(self, **monitor_overrides):
        from .criticality import RunSettings

        return RunSettings(self.grid(), self.values["monitors.t_end"], self.params(),
                           self.monitors(**monitor_overrides), self.numerics(),
                           self.classifier())


def load_config(command: str, path=None, overrides=()) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw.update(wio.parse_config_text(text, str(path)))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}")
        raw[key.strip()] = value.strip()
    return RunConfig.build(command, raw)


# ---------------------------------------------------------------------------
# outputs


class _Outputs:
    def __init__(self, root: Path, run_id: str):
        self.root = root
        self.run_id = run_id
        self.files: list[Path] = []

    def path(self, suffix: str) -> Path:
        p = self.root / f"{self.run_id}_{suffix}"
        self.files.append(p)
        return p

    def record(self, record, tag: str | None = None):
        rid = self.run_id if tag is None else f"{self.run_id}_{tag}"
        self.files.extend(wio.write_record(self.root, rid, record))

    def names(self) -> list[str]:
        return sorted({p.name for p in self.files})


def _prepare_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".wavemap_write_test"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _label_dict(label) -> dict:
    ev = {k: v for k, v in label.evidence.items() if isinstance(v, (int, float, str, bool))}
    return {"verdict": label.verdict, "evidence": ev}


def _num(x) -> float:
    return math.nan if x is None else float(x)


VERDICT_CODE = {"Dispersed": 0, "Singular": 1, "Ambiguous": -1}


# ---------------------------------------------------------------------------
# workflows; each returns (results dict, status)


def _cmd_evolve(cfg: RunConfig, out: _Outputs, jobs: int):
    from .criticality import run_member

    label, rec = run_member(cfg.family(), cfg.settings())
    out.record(rec)
    e = rec.energy
    res = {"outcome": _label_dict(label), "halt_reason": rec.halt_reason,
           "halt_time": rec.halt_time, "n_snapshots": len(rec.snapshots),
           "initial_energy": rec.initial_energy, "final_energy": float(e[-1]),
           "max_energy_drift": float(np.max(np.abs(e - e[0])) / max(abs(e[0]), 1e-300)),
           "peak_central_density": float(np.max(rec.central_density))}
    return res, "ambiguous" if label.verdict == "Ambiguous" else "ok"


def _cmd_bisect(cfg: RunConfig, out: _Outputs, jobs: int):
    from .criticality import bisect_critical

    res = bisect_critical(cfg.family(), cfg["bisect.p_lo"], cfg["bisect.p_hi"], cfg.settings(),
                          tol=cfg["bisect.tol"], budget=cfg["bisect.budget"])
    ps = [p for p, _ in res.history]
    wio.write_table(out.path("history.csv"), {
        "amplitude": ps,
        "verdict_code": [VERDICT_CODE[l.verdict] for _, l in res.history],
        "peak_density": [float(l.evidence.get("peak_density", math.nan)) for _, l in res.history],
        "t_star": [_num(l.evidence.get("t_star")) for _, l in res.history],
        "turnaround_time": [_num(l.evidence.get("turnaround_time")) for _, l in res.history],
    }, {"verdict_codes": "0=Dispersed,1=Singular,-1=Ambiguous"})
    summary = {"p_star": res.p_star, "bracket": list(res.bracket), "status": res.status,
               "relative_width": res.relative_width, "tol": res.tol, "runs": len(res.history),
               "history": [{"amplitude": p, "verdict": l.verdict} for p, l in res.history]}
    status = {"converged": "ok", "ambiguous": "ambiguous"}.get(res.status, "numerical_failure")
    return summary, status


def _ab_meta(p) -> dict:
    return {"n": p.n, "b": p.b, "c": p.c, "z_ser": p.z_ser, "z_match": p.z_match,
            "residual_norm": p.residual_norm}


def _solve_ab(cfg: RunConfig, n=None):
    from .self_similar import solve_ab

    return solve_ab(cfg["ab.n"] if n is None else n, z_ser=cfg["ab.z_ser"],
                    z_match=cfg["ab.z_match"], res_tol=cfg["ab.res_tol"],
                    b_range=(0.5, cfg["ab.b_max"]))


def _cmd_ab_solve(cfg: RunConfig, out: _Outputs, jobs: int):
    from .self_similar import count_crossings

    prof = _solve_ab(cfg)
    z = np.linspace(0.0, 1.0, cfg["ab.n_points"])
    wio.write_profile(out.path("profile.csv"), "z", z, prof(z), _ab_meta(prof))
    res = dict(_ab_meta(prof), crossings=count_crossings(prof))
    return res, "ok"


def _cmd_lambda_spec(cfg: RunConfig, out: _Outputs, jobs: int):
    from .self_similar import lambda_spectrum, unstable_count

    prof = _solve_ab(cfg)
    spec = lambda_spectrum(prof, (cfg["lambda.lo"], cfg["lambda.hi"]),
                           count_limit=cfg["lambda.count_limit"], z_match=cfg["lambda.z_match"],
                           step=cfg["lambda.step"])
    z = np.linspace(0.0, 1.0, cfg["lambda.n_points"])
    wio.write_table(out.path("spectrum.csv"), {
        "lambda": [e.lam for e in spec], "residual_norm": [e.residual_norm for e in spec]},
        dict(_ab_meta(prof), classes=[e.classification for e in spec]))
    for k, e in enumerate(spec):
        meta = dict(_ab_meta(prof), **{"lambda": e.lam, "classification": e.classification})
        wio.write_profile(out.path(f"mode_{k}.csv"), "z", z, e(z), meta)
    res = {"profile": _ab_meta(prof), "lambda_range": [cfg["lambda.lo"], cfg["lambda.hi"]],
           "eigenvalues": [{"lambda": e.lam, "classification": e.classification,
                            "residual_norm": e.residual_norm} for e in spec],
           "unstable_count": unstable_count(spec),
           "gauge": [e.lam for e in spec if e.classification == "Gauge"]}
    return res, "ok"


def _solve_static(cfg: RunConfig, a=None):
    from .static import solve_static

    return solve_static(cfg["static.a"] if a is None else a, R_ode=cfg["static.R_ode"],
                        res_tol=cfg["static.res_tol"])


def _static_meta(p) -> dict:
    return {"a": p.a, "R_ode": p.R_ode, "residual_norm": p.residual_norm}


def _cmd_static_solve(cfg: RunConfig, out: _Outputs, jobs: int):
    prof = _solve_static(cfg)
    r = np.linspace(0.0, prof.R_ode, cfg["static.n_points"])
    wio.write_profile(out.path("profile.csv"), "r", r, prof(r), _static_meta(prof))
    wio.write_profile(out.path("energy_density.csv"), "r", r, prof.energy_density(r),
                      _static_meta(prof))
    return dict(_static_meta(prof), chi_at_R_ode=float(prof(prof.R_ode))), "ok"


def _cmd_omega_spec(cfg: RunConfig, out: _Outputs, jobs: int):
    from .static import default_omega_range, omega_spectrum

    prof = _solve_static(cfg)
    lo, hi = default_omega_range(prof.R_ode)
    rng = (cfg["omega.lo"] if cfg["omega.lo"] is not None else lo,
           cfg["omega.hi"] if cfg["omega.hi"] is not None else hi)
    modes = omega_spectrum(prof, rng, n_scan=cfg["omega.n_scan"])
    r = np.linspace(0.0, prof.R_ode, cfg["omega.n_points"])
    wio.write_table(out.path("spectrum.csv"), {
        "omega_sq": [m.omega_sq for m in modes], "residual_norm": [m.residual_norm for m in modes],
        "nodes": [m.nodes for m in modes]}, _static_meta(prof))
    for k, m in enumerate(modes):
        wio.write_profile(out.path(f"mode_{k}.csv"), "r", r, m(r),
                          dict(_static_meta(prof), omega_sq=m.omega_sq))
    res = {"profile": _static_meta(prof), "omega_sq_range": list(rng),
           "modes": [{"omega_sq": m.omega_sq, "residual_norm": m.residual_norm,
                      "nodes": m.nodes} for m in modes],
           "unstable_count": sum(1 for m in modes if m.omega_sq < 0)}
    return res, "ok"


def _sign_family(cfg: RunConfig, settings):
    from .initial_data import FamilySpec

    base = cfg["sign.base"]
    amp, r0, w = cfg["sign.amplitude"], cfg["sign.r0"], cfg["sign.width"]
    if base == "family":
        return cfg.family().with_amplitude(amp), {"kind": cfg["family.kind"]}
    if base == "static":
        from .static import solve_static

        prof = solve_static(cfg["sign.a"], R_ode=settings.grid.r_max * 1.01)
        return (FamilySpec("perturbed_static", amp, r0, w, {"a": cfg["sign.a"], "profile": prof}),
                {"kind": "static", "a": cfg["sign.a"]})
    from .self_similar import solve_ab

    t0 = cfg["sign.t0"]
    prof = solve_ab(cfg["sign.n"], z_ext=settings.grid.r_max / abs(t0) * 1.01)
    return (FamilySpec("perturbed_self_similar", amp, r0, w,
                       {"n": cfg["sign.n"], "t0": t0, "profile": prof}),
            {"kind": "ab", "n": cfg["sign.n"], "t0": t0})


def _cmd_sign_test(cfg: RunConfig, out: _Outputs, jobs: int):
    from .criticality import sign_test

    settings = cfg.settings()
    fam, base = _sign_family(cfg, settings)
    res, rp, rm = sign_test(fam, settings, jobs=jobs, keep_records=True)
    out.record(rp, "plus")
    out.record(rm, "minus")
    summary = {"base": base, "amplitude": res.amplitude, "verdict": res.verdict,
               "plus": _label_dict(res.plus), "minus": _label_dict(res.minus)}
    return summary, "ambiguous" if res.verdict == "Indeterminate" else "ok"


def _cmd_regime_scan(cfg: RunConfig, out: _Outputs, jobs: int):
    from .criticality import regime_scan

    rows, recs = regime_scan(cfg["regime.eps"], cfg.settings(), Delta=cfg["regime.Delta"],
                             jobs=jobs, keep_records=True)
    wio.write_table(out.path("regimes.csv"), {
        "eps": [r.eps for r in rows],
        "verdict_code": [VERDICT_CODE[r.label.verdict] for r in rows],
        "turnaround_time": [math.nan if r.turnaround_time is None else r.turnaround_time
                            for r in rows],
        "peak_density": [r.peak_density for r in rows]},
        {"Delta": cfg["regime.Delta"], "regimes": [r.regime for r in rows]})
    for k, rec in enumerate(recs):
        out.record(rec, f"eps{k}")
    res = {"Delta": cfg["regime.Delta"],
           "rows": [{"eps": r.eps, "verdict": r.label.verdict, "regime": r.regime,
                     "turnaround_time": r.turnaround_time, "peak_density": r.peak_density}
                    for r in rows]}
    amb = all(r.label.verdict == "Ambiguous" for r in rows)
    return res, "ambiguous" if amb else "ok"


def near_critical_comparison(cfg: RunConfig, amplitude: float, n: int):
    """Evolve one family member with snapshots up to its density peak and compare to AB_n."""
    from dataclasses import replace

    from .criticality import run_member
    from .self_similar import ss_compare

    fam = cfg.family().with_amplitude(amplitude)
    lookback, n_snap = cfg["ss.lookback"], cfg["ss.n_snapshots"]
    # sample the diagnostics as densely as the snapshots so the density peak
    # and the growth that anchors the provisional collapse time are resolved
    settings = cfg.settings(n_snapshots=0)
    span = settings.t_end - fam.build(settings.grid).t
    n_samples = max(cfg["monitors.n_samples"],
                    int(math.ceil(span * max(n_snap - 1, 1) / lookback)))
    settings = replace(settings, monitors=replace(settings.monitors, n_samples=n_samples))
    _, first = run_member(fam, settings)
    t = np.concatenate([first.times, first.tail_times])
    d = np.concatenate([first.central_density, first.tail_density])
    t_peak = float(t[int(np.argmax(d))])
    t0 = max(first.t_start, t_peak - lookback)
    times = tuple(float(x) for x in np.linspace(t0, t_peak, n_snap))
    settings = replace(settings, monitors=replace(settings.monitors, snapshot_times=times))
    _, rec = run_member(fam, settings)
    prof = _solve_ab(cfg, n)
    taus = None
    if cfg["ss.tau_first"] is not None and cfg["ss.tau_last"] is not None:
        taus = np.linspace(cfg["ss.tau_first"], cfg["ss.tau_last"], cfg["ss.n_frames"])
    cmp = ss_compare(rec, prof, T_star=cfg["ss.T_star"], taus=taus, n_frames=cfg["ss.n_frames"],
                     z_window=(cfg["ss.z_lo"], cfg["ss.z_hi"]))
    return rec, prof, cmp


def _write_frames(out: _Outputs, prefix: str, cmp, prof):
    for k, (r, chi, ref) in enumerate(cmp.frames):
        wio.write_table(out.path(f"{prefix}_{k}.csv"),
                        {"ln_r": np.log(r), "chi": chi, "chi_profile": ref},
                        {"t": cmp.times[k], "tau": cmp.taus[k], "t_star": cmp.t_star,
                         "deviation": cmp.deviations[k], "n": prof.n,
                         "orientation": cmp.orientation})


def _cmp_summary(cmp, prof, amplitude) -> dict:
    return {"amplitude": amplitude, "profile": _ab_meta(prof), "t_star": cmp.t_star,
            "orientation": cmp.orientation, "z_window": list(cmp.z_window),
            "frames": [{"tau": float(a), "t": float(b), "deviation": float(c)}
                       for a, b, c in zip(cmp.taus, cmp.times, cmp.deviations)],
            "max_deviation_after_first": float(np.max(cmp.deviations[1:]))
            if cmp.deviations.size > 1 else None}


def _cmd_ss_compare(cfg: RunConfig, out: _Outputs, jobs: int):
    amp = cfg["family.amplitude"]
    _, prof, cmp = near_critical_comparison(cfg, amp, cfg["ss.n"])
    _write_frames(out, "frame", cmp, prof)
    return _cmp_summary(cmp, prof, amp), "ok"


def _cmd_convergence(cfg: RunConfig, out: _Outputs, jobs: int):
    from .evolver import convergence_order

    res = convergence_order(cfg.family(), cfg.grid(), cfg["convergence.t_final"],
                            levels=cfg["convergence.levels"], ratio=cfg["convergence.ratio"],
                            params=cfg.params(), numerics=cfg.numerics())
    wio.write_table(out.path("differences.csv"), {
        "level": np.arange(len(res.errors)), "rms_difference": res.errors},
        {"resolutions": list(res.resolutions), "t_final": res.t_final})
    return {"order": res.order, "exact": res.exact, "differences": list(res.errors),
            "resolutions": list(res.resolutions), "t_final": res.t_final}, "ok"


# figures


def _fig1(cfg: RunConfig, out: _Outputs, jobs: int):
    from .self_similar import solve_ab_family

    profs = solve_ab_family(cfg["figure.n_max"], z_ser=cfg["ab.z_ser"],
                            z_match=cfg["ab.z_match"], res_tol=cfg["ab.res_tol"])
    z = np.linspace(0.0, 1.0, cfg["figure.n_points"])
    cols = {"z": z}
    cols.update({f"chi_{p.n}": p(z) for p in profs})
    wio.write_table(out.path("profiles.csv"), cols, {"b": [p.b for p in profs]})
    return {"profiles": [_ab_meta(p) for p in profs]}, "ok"


def _fig2(cfg: RunConfig, out: _Outputs, jobs: int):
    src = Path(out.root) / f"{cfg['figure.bisect_run']}_summary.json"
    if not src.exists():
        raise DependencyError(
            f"fig2 needs {src.name}; run 'wavemap bisect' with run.id={cfg['figure.bisect_run']}"
            " into the same output directory first")
    upstream = wio.read_summary(src)
    lo = float(upstream["results"]["bracket"][0])
    _, prof, cmp = near_critical_comparison(cfg, lo, 1)
    _write_frames(out, "frame", cmp, prof)
    return dict(_cmp_summary(cmp, prof, lo), upstream=src.name), "ok"


def _fig3(cfg: RunConfig, out: _Outputs, jobs: int):
    from .criticality import sign_test

    settings = cfg.settings()
    fam, base = _sign_family(cfg, settings)
    res, rp, rm = sign_test(fam, settings, jobs=jobs, keep_records=True)
    out.record(rp, "plus")
    out.record(rm, "minus")
    return {"base": base, "verdict": res.verdict, "plus": _label_dict(res.plus),
            "minus": _label_dict(res.minus)}, "ok"


def _fig4(cfg: RunConfig, out: _Outputs, jobs: int):
    from .criticality import run_member, turnaround_time
    from .evolver import energy_density
    from .initial_data import FamilySpec
    from .static import best_match_parameter, solve_static

    settings = cfg.settings()
    fam = FamilySpec("turok_spergel", cfg["figure.eps"], cfg["figure.Delta"], 1.0)
    label, rec = run_member(fam, settings)
    if not rec.snapshots:
        raise DependencyError("fig4 needs snapshots; set monitors.n_snapshots > 0")
    t_match = cfg["figure.t_match"]
    if t_match is None:
        t_match = turnaround_time(rec)
    if t_match is None:
        t_match = float(rec.times[-1])
    times = np.array([s.t for s in rec.snapshots])
    snap = rec.snapshots[int(np.argmin(np.abs(times - t_match)))]
    r = rec.grid.radii
    rho = energy_density(snap, rec.grid, rec.params)
    a, dev = best_match_parameter(r, rho, (cfg["figure.a_lo"], cfg["figure.a_hi"]))
    stat = solve_static(a, R_ode=max(1.01 * rec.grid.r_max, 1.0))
    for k, s in enumerate(rec.snapshots):
        wio.write_table(out.path(f"frame_{k}.csv"),
                        {"r": r, "rho": energy_density(s, rec.grid, rec.params)}, {"t": s.t})
    wio.write_table(out.path("static_overlay.csv"), {"r": r, "rho_static": stat.energy_density(r)},
                    {"a": a, "t_match": snap.t})
    return {"eps": cfg["figure.eps"], "Delta": cfg["figure.Delta"],
            "Delta_assumed": True, "outcome": _label_dict(label), "t_match": snap.t,
            "best_match_a": a, "relative_rms_deviation": dev}, "ok"


_FIGURES = {"fig1": _fig1, "fig2": _fig2, "fig3": _fig3, "fig4": _fig4}


def _cmd_figure(cfg: RunConfig, out: _Outputs, jobs: int):
    res, status = _FIGURES[cfg["figure.which"]](cfg, out, jobs)
    return dict(res, figure=cfg["figure.which"]), status


_WORKFLOWS = {
    "evolve": _cmd_evolve, "bisect": _cmd_bisect, "ab-solve": _cmd_ab_solve,
    "lambda-spec": _cmd_lambda_spec, "static-solve": _cmd_static_solve,
    "omega-spec": _cmd_omega_spec, "sign-test": _cmd_sign_test,
    "regime-scan": _cmd_regime_scan, "ss-compare": _cmd_ss_compare,
    "convergence": _cmd_convergence, "figure": _cmd_figure,
}

_STATUS_CODE = {"ok": EXIT_OK, "ambiguous": EXIT_AMBIGUOUS, "numerical_failure": EXIT_NUMERICAL}


def output_root(cfg: RunConfig, cli_out: str | None = None) -> Path:
    """``--out`` beats ``WAVEMAP_OUT``, which beats ``output.dir``."""
    if cli_out:
        return Path(cli_out)
    env = os.environ.get("WAVEMAP_OUT")
    return Path(env) if env else Path(cfg["output.dir"])


def run(cfg: RunConfig, out_dir: Path, jobs: int = 1) -> int:
    """Execute one workflow and write its artifacts; returns the exit status."""
    root = _prepare_dir(Path(out_dir))
    out = _Outputs(root, cfg.run_id)
    wall = time.time()
    error = None
    try:
        results, status = _WORKFLOWS[cfg.command](cfg, out, jobs)
    except DependencyError:
        raise
    except WavemapError as exc:
        results, status, error = {}, "numerical_failure", f"{type(exc).__name__}: {exc}"
    config_file = out.path("config.txt")
    config_file.write_text(wio.format_config(cfg.echo()), encoding="utf-8")
    summary_file = out.path("summary.json")
    summary = {"command": cfg.command, "run_id": cfg.run_id, "status": status,
               "results": results, "config": cfg.echo(), "files": out.names()}
    if error is not None:
        summary["error"] = error
    wio.write_summary(summary_file, summary)
    meta = {"started_unix": wall, "wall_seconds": time.time() - wall,
            "python": platform.python_version(), "numpy": np.__version__, "jobs": jobs}
    (root / f"{cfg.run_id}_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    return _STATUS_CODE[status]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavemap", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for fan-out commands")
    p.add_argument("--out", help="output directory (overrides WAVEMAP_OUT and output.dir)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.overrides)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg, output_root(cfg, args.out), args.jobs)
    except DependencyError as exc:
        print(f"missing dependency: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
