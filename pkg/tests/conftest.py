import functools

import numpy as np
import pytest
from hypothesis import settings

from wavemap.self_similar import lambda_spectrum, solve_ab
from wavemap.static import solve_static

settings.register_profile("wavemap", deadline=None, max_examples=25)
settings.load_profile("wavemap")


@functools.lru_cache(maxsize=None)
def ab_profile(n: int):
    return solve_ab(n)


@functools.lru_cache(maxsize=None)
def ab_spectrum(n: int):
    return lambda_spectrum(ab_profile(n))


@functools.lru_cache(maxsize=None)
def static_profile(a: float, R_ode: float = 1e3):
    return solve_static(a, R_ode=R_ode)


@pytest.fixture(scope="session")
def ab():
    return ab_profile


@pytest.fixture(scope="session")
def spectrum():
    return ab_spectrum


@pytest.fixture(scope="session")
def static():
    return static_profile


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# shared evolutions; each is computed at most once per session


def _settings(r_max, dr_min, t_end, r_in=None, **monitors):
    from wavemap.criticality import RunSettings
    from wavemap.evolver import MonitorSpec, RadialGrid

    mon = MonitorSpec(n_snapshots=0, r_in=r_in, on_divergence="record", **monitors)
    return RunSettings(RadialGrid.clustered(r_max, dr_min, 5.0), t_end, monitors=mon)


# pulse placement for the attractor tests: (t0, amplitude, r0, width); the
# AB_2 core is resolved from t0 = -10 with the pulse at the same z as for AB_1
SIGN_CASES = {
    ("ab", 1): dict(settings=(50.0, 2e-3, 40.0, 5.0), pulse=(0.01, 0.5, 0.2), t0=-1.0),
    ("ab", 2): dict(settings=(50.0, 2e-3, 40.0, 5.0), pulse=(0.01, 5.0, 2.0), t0=-10.0),
    ("static", 1.0): dict(settings=(100.0, 2e-3, 100.0, 5.0), pulse=(0.05, 5.0, 1.0), t0=-1.0),
}


@functools.lru_cache(maxsize=None)
def sign_result(base):
    from wavemap.criticality import attractor_sign_test

    case = SIGN_CASES[base]
    return attractor_sign_test(base, *case["pulse"], _settings(*case["settings"]), t0=case["t0"])


@pytest.fixture(scope="session")
def sign_runs():
    return sign_result


REGIME_EPS = (0.01, 0.302, 1.0)
FIG4_TIME = 126.0


@functools.lru_cache(maxsize=None)
def regime_result():
    from wavemap.criticality import regime_scan

    s = _settings(300.0, 4e-3, 150.0, 10.0, snapshot_times=(FIG4_TIME,))
    return regime_scan(REGIME_EPS, s, Delta=1.0, keep_records=True)


@pytest.fixture(scope="session")
def regime():
    return regime_result


@functools.lru_cache(maxsize=None)
def canonical_run(name: str, cfl: float = 0.5, refine: int = 1, range_flag_halts: bool = True):
    """Library of reference runs used by the classifier tests."""
    from dataclasses import replace

    from wavemap.criticality import run_member
    from wavemap.evolver import Numerics
    from wavemap.initial_data import FamilySpec

    family = {
        "zero": FamilySpec("gaussian", 0.0, 5.0, 1.0),
        "small_gaussian": FamilySpec("gaussian", 1e-3, 5.0, 1.0),
        "supercritical_gaussian": FamilySpec("gaussian", 0.34, 5.0, 1.0),
        "ts_1": FamilySpec("turok_spergel", 1.0, 1.0, 1.0),
        "ts_half": FamilySpec("turok_spergel", 0.5, 1.0, 1.0),
    }[name]
    s = _settings(30.0, 4e-3 / refine, 25.0, range_flag_halts=range_flag_halts)
    s = replace(s, numerics=Numerics(cfl=cfl))
    return run_member(family, s)


@pytest.fixture(scope="session")
def canonical():
    return canonical_run


# acceptance report: one line per criterion in the terminal summary

ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def near_critical(tmp_path_factory):
    """Default-configuration bisection followed by the fig2 comparison against AB_1."""
    from wavemap import io as wio
    from wavemap.cli import load_config, run

    out = tmp_path_factory.mktemp("near_critical")
    codes = {"bisect": run(load_config("bisect"), out)}
    codes["fig2"] = run(load_config("figure", overrides=["figure.which=fig2"]), out)
    return {"codes": codes, "dir": out,
            "bisect": wio.read_summary(out / "bisect_summary.json"),
            "fig2": wio.read_summary(out / "fig2_summary.json")}
