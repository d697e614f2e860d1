import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wavemap import io as wio
from wavemap.cli import (EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_IO, EXIT_OK, load_config, main,
                         output_root)
from wavemap.errors import ConfigError
from wavemap.evolver import FieldState, RadialGrid

# data files


@given(st.lists(st.floats(allow_nan=True, allow_infinity=True), min_size=1, max_size=30))
def test_table_round_trip_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("t") / "x.csv"
    wio.write_table(path, {"a": values, "b": values[::-1]}, {"k": 1.5, "name": "x"})
    meta, cols = wio.read_table(path)
    for name, ref in (("a", values), ("b", values[::-1])):
        np.testing.assert_array_equal(cols[name], np.asarray(ref, dtype=float))
    assert meta == {"k": "1.5", "name": "x"}


def test_table_rejects_ragged_columns(tmp_path):
    with pytest.raises(ValueError):
        wio.write_table(tmp_path / "x.csv", {"a": [1.0, 2.0], "b": [1.0]})
    with pytest.raises(ValueError):
        wio.write_table(tmp_path / "x.csv", {"a,b": [1.0]})
    with pytest.raises(ValueError):
        wio.write_table(tmp_path / "x.csv", {"a": [1.0]}, {"k": "two\nlines"})


def test_snapshot_round_trip(tmp_path):
    g = RadialGrid.clustered(10.0, 1e-2, 5.0)
    s = FieldState(0.25, np.sin(g.radii) * 0.1, np.cos(g.radii) * 0.01)
    t, r, chi, pi, rho = wio.read_snapshot(wio.write_snapshot(tmp_path / "s.csv", s, g))
    assert t == 0.25
    np.testing.assert_array_equal(r, g.radii)
    np.testing.assert_array_equal(chi, s.chi)
    np.testing.assert_array_equal(pi, s.pi)
    assert np.all(rho >= 0)


def test_profile_round_trip(tmp_path):
    z = np.linspace(0.0, 1.0, 11)
    wio.write_profile(tmp_path / "p.csv", "z", z, 2 * np.arctan(z), {"n": 0, "b": 2.0})
    meta, coord, x, v = wio.read_profile(tmp_path / "p.csv")
    assert coord == "z" and meta == {"n": "0", "b": "2.0"}
    np.testing.assert_array_equal(x, z)
    np.testing.assert_array_equal(v, 2 * np.arctan(z))


def test_summary_round_trip(tmp_path):
    body = {"a": 1.0, "b": [1, 2], "c": {"d": np.float64(0.5)}, "e": math.inf}
    data = wio.read_summary(wio.write_summary(tmp_path / "s.json", body))
    assert data["a"] == 1.0 and data["b"] == [1, 2] and data["c"] == {"d": 0.5}
    assert data["e"] == "inf"
    assert data["schema_version"] == wio.SUMMARY_SCHEMA_VERSION


def test_summary_version_checked(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"schema_version": 999}\n', encoding="utf-8")
    with pytest.raises(ValueError):
        wio.read_summary(p)


# config


def test_config_text_parsing():
    got = wio.parse_config_text("# comment\na = 1\n\nb=two  # trailing\na = 3\n")
    assert got == {"a": "3", "b": "two"}
    with pytest.raises(ConfigError):
        wio.parse_config_text("no equals sign")


def test_config_echo_round_trip():
    cfg = load_config("evolve", overrides=["family.amplitude=0.25", "monitors.probe_radii=1,2.5",
                                           "family.extras.n=2", "omega.lo=none"])
    echo = cfg.echo()
    raw = wio.parse_config_text(wio.format_config(echo))
    raw.pop("command")
    raw.pop("deterministic")
    again = load_config("evolve", overrides=[f"{k}={v}" for k, v in raw.items()])
    assert again.values == cfg.values
    assert again.extras == cfg.extras == {"n": 2}


def test_every_default_is_echoed():
    from wavemap.cli import SCHEMA

    echo = load_config("evolve").echo()
    assert set(SCHEMA) <= set(echo)


def test_unknown_key_is_named(capsys, tmp_path):
    assert main(["evolve", "--set", "grid.rmax=3", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "grid.rmax" in capsys.readouterr().err


def test_bad_values_are_config_errors(tmp_path):
    for item in ("grid.r_max=abc", "grid.policy=spiral", "family.kind=square",
                 "monitors.range_flag_halts=maybe", "run.id=../x"):
        assert main(["evolve", "--set", item, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["evolve", "--jobs", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["evolve", "--config", str(tmp_path / "absent.cfg")]) == EXIT_CONFIG


def test_config_file_and_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("ab.n = 2\nrun.id = mine\n", encoding="utf-8")
    cfg = load_config("ab-solve", cfg_file, ["ab.n=0"])
    assert cfg["ab.n"] == 0 and cfg.run_id == "mine"


# output location


def test_output_precedence(monkeypatch, tmp_path):
    cfg = load_config("ab-solve", overrides=[f"output.dir={tmp_path / 'cfg'}"])
    monkeypatch.delenv("WAVEMAP_OUT", raising=False)
    assert output_root(cfg) == tmp_path / "cfg"
    monkeypatch.setenv("WAVEMAP_OUT", str(tmp_path / "env"))
    assert output_root(cfg) == tmp_path / "env"
    assert output_root(cfg, str(tmp_path / "cli")) == tmp_path / "cli"


def test_env_output_used_by_main(monkeypatch, tmp_path):
    monkeypatch.setenv("WAVEMAP_OUT", str(tmp_path / "env"))
    assert main(["ab-solve", "--set", "ab.n=0"]) == EXIT_OK
    assert (tmp_path / "env" / "ab-solve_summary.json").exists()


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("", encoding="utf-8")
    assert main(["ab-solve", "--set", "ab.n=0", "--out", str(blocker / "sub")]) == EXIT_IO


# workflows


def _summary(root, run_id):
    return wio.read_summary(root / f"{run_id}_summary.json")


def test_ab_solve_outputs(tmp_path):
    assert main(["ab-solve", "--set", "ab.n=1", "--out", str(tmp_path)]) == EXIT_OK
    s = _summary(tmp_path, "ab-solve")
    assert s["status"] == "ok" and s["command"] == "ab-solve"
    res = s["results"]
    assert res["n"] == 1 and res["crossings"] == 1
    assert res["residual_norm"] <= 1e-8
    meta, coord, z, chi = wio.read_profile(tmp_path / "ab-solve_profile.csv")
    assert coord == "z" and float(meta["b"]) == res["b"]
    assert chi[0] == 0.0 and chi[-1] == pytest.approx(math.pi / 2, abs=1e-12)
    assert sorted(s["files"]) == ["ab-solve_config.txt", "ab-solve_profile.csv",
                                  "ab-solve_summary.json"]


def test_outputs_are_deterministic(tmp_path):
    args = ["lambda-spec", "--set", "ab.n=0", "--set", "lambda.lo=-3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if not p.name.endswith("_meta.json"))
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir()
                           if not p.name.endswith("_meta.json"))
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_lambda_spec_summary(tmp_path):
    assert main(["lambda-spec", "--set", "ab.n=1", "--out", str(tmp_path)]) == EXIT_OK
    res = _summary(tmp_path, "lambda-spec")["results"]
    assert res["gauge"] == [pytest.approx(-1.0, abs=1e-3)]
    unstable = [e["lambda"] for e in res["eigenvalues"] if e["classification"] == "Unstable"]
    assert unstable == [pytest.approx(-6.33, rel=0.02)]
    assert res["unstable_count"] == 1
    _, cols = wio.read_table(tmp_path / "lambda-spec_spectrum.csv")
    np.testing.assert_array_equal(cols["lambda"], [e["lambda"] for e in res["eigenvalues"]])


def test_static_and_omega_summaries(tmp_path):
    assert main(["static-solve", "--out", str(tmp_path)]) == EXIT_OK
    res = _summary(tmp_path, "static-solve")["results"]
    assert res["a"] == 1.0 and res["residual_norm"] <= 1e-8
    assert main(["omega-spec", "--out", str(tmp_path)]) == EXIT_OK
    res = _summary(tmp_path, "omega-spec")["results"]
    assert res["unstable_count"] >= 2
    _, cols = wio.read_table(tmp_path / "omega-spec_spectrum.csv")
    assert np.all(cols["omega_sq"] < 0)


def test_fig1_single_member_is_closed_form(tmp_path):
    args = ["figure", "--set", "figure.which=fig1", "--set", "figure.n_max=0", "--out",
            str(tmp_path)]
    assert main(args) == EXIT_OK
    _, cols = wio.read_table(tmp_path / "fig1_profiles.csv")
    assert sorted(cols) == ["chi_0", "z"]
    assert np.max(np.abs(cols["chi_0"] - 2 * np.arctan(cols["z"]))) <= 1e-6


def test_fig2_needs_bisection(tmp_path, capsys):
    assert main(["figure", "--set", "figure.which=fig2", "--out", str(tmp_path)]) == EXIT_DEPENDENCY
    assert "wavemap bisect" in capsys.readouterr().err


SMALL_GRID = ["--set", "grid.r_max=20", "--set", "grid.dr_min=8e-3"]


def test_evolve_outputs_round_trip(tmp_path):
    args = ["evolve", "--set", "family.amplitude=0.01", "--set", "monitors.t_end=2",
            "--set", "monitors.n_snapshots=3", "--set", "monitors.probe_radii=1,2"]
    code = main(args + SMALL_GRID + ["--out", str(tmp_path)])
    assert code in (EXIT_OK, 4)
    s = _summary(tmp_path, "evolve")
    meta, cols = wio.read_table(tmp_path / "evolve_series.csv")
    assert meta["halt_reason"] == s["results"]["halt_reason"]
    assert {"t", "E", "central_density", "chi_range"} <= set(cols)
    # probes sit on the nearest grid points
    assert len([c for c in cols if c.startswith("chi_at_")]) == 2
    assert cols["E"][0] == s["results"]["initial_energy"]
    snaps = sorted(tmp_path.glob("evolve_snap_*.csv"))
    assert len(snaps) == s["results"]["n_snapshots"] == 3
    t, r, chi, _, _ = wio.read_snapshot(snaps[0])
    assert t == 0.0 and chi.shape == r.shape


def test_convergence_command(tmp_path):
    args = ["convergence", "--set", "family.amplitude=0.1", "--set", "convergence.t_final=2"]
    assert main(args + SMALL_GRID + ["--out", str(tmp_path)]) == EXIT_OK
    res = _summary(tmp_path, "convergence")["results"]
    assert res["order"] == pytest.approx(2.0, abs=0.2)


def test_regime_scan_command(tmp_path):
    args = ["regime-scan", "--set", "regime.eps=1.0", "--set", "monitors.t_end=3"]
    assert main(args + SMALL_GRID + ["--out", str(tmp_path)]) == EXIT_OK
    rows = _summary(tmp_path, "regime-scan")["results"]["rows"]
    assert [r["regime"] for r in rows] == ["quick_collapse"]
    meta, cols = wio.read_table(tmp_path / "regime-scan_regimes.csv")
    assert meta["regimes"] == "quick_collapse" and cols["verdict_code"].tolist() == [1.0]


def test_bisect_logarithmic_family(tmp_path):
    args = ["bisect", "--set", "family.kind=logarithmic", "--set", "family.r0=1",
            "--set", "family.width=1", "--set", "grid.r_max=30", "--set", "grid.dr_min=4e-3",
            "--set", "monitors.t_end=40", "--set", "bisect.p_lo=0.5", "--set", "bisect.p_hi=8",
            "--set", "bisect.tol=0.1", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    res = _summary(tmp_path, "bisect")["results"]
    lo, hi = res["bracket"]
    assert lo < res["p_star"] < hi and res["relative_width"] <= 0.1
    _, cols = wio.read_table(tmp_path / "bisect_history.csv")
    codes, amps = cols["verdict_code"], cols["amplitude"]
    assert np.all(amps[codes == 0] <= lo) and np.all(amps[codes == 1] >= hi)
