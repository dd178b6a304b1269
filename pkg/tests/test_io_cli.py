import json
import os
from math import pi
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heraldtomo import __version__, io
from heraldtomo.cli import main
from heraldtomo.config import ConfigError, loads, preset, preset_text
from heraldtomo.counting import ClickData
from heraldtomo.physics import doppler_time, AtomParams
from heraldtomo.sampler import WORKERS_ENV

finite = st.floats(allow_nan=False, allow_infinity=False)


def run(*argv):
    return main([str(a) for a in argv])


def write_config(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def small_config(tmp_path, populations="[0.1652, 0.82, 0.0148]", samples=2000, traces=50, trials=3000, extra=""):
    return write_config(tmp_path / "small.yaml", f"""\
seed: 99
source:
  populations: {populations}
counts:
  samples: {samples}
  traces: {traces}
  trials: {trials}
{extra}""")


def files_of(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


# --- file formats ----------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=1, max_size=50))
def test_quadratures_round_trip(tmp_path_factory, xs):
    d = tmp_path_factory.mktemp("q")
    (d / "q.csv").write_text(io.format_quadratures(xs))
    back = io.read_quadratures(d / "q.csv")
    assert back.tobytes() == np.asarray(xs, dtype=float).tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 8), st.data())
def test_traces_round_trip(tmp_path_factory, rows, cols, data):
    arr = np.array(data.draw(st.lists(finite, min_size=rows * cols, max_size=rows * cols))).reshape(rows, cols)
    d = tmp_path_factory.mktemp("t")
    (d / "t.csv").write_text(io.format_traces(arr))
    assert io.read_traces(d / "t.csv").tobytes() == arr.tobytes()


def test_clicks_and_table_round_trip(tmp_path):
    data = ClickData([0, 1, 2, 3], [0, 2, 1, 0], [0, 1, 0, 3], [5, 99, 101], [100, 7, 8, 9])
    (tmp_path / "c.csv").write_text(io.format_clicks(data))
    back = io.read_clicks(tmp_path / "c.csv")
    assert list(back) == list(data)
    cols = [np.array([0.1, 1 / 3, -2e-300]), np.array([1e300, np.pi, 0.0])]
    (tmp_path / "t.csv").write_text(io.format_table(["a", "b"], cols))
    back = io.read_table(tmp_path / "t.csv", ["a", "b"])
    assert back["a"].tobytes() == cols[0].tobytes() and back["b"].tobytes() == cols[1].tobytes()


@pytest.mark.parametrize(
    "reader, text, match",
    [
        (io.read_quadratures, "trial_id,x\n0,0.5\n1,abc\n", ":3: malformed"),
        (io.read_quadratures, "trial_id,x\n0,0.5\n5,0.1\n", ":3: malformed"),
        (io.read_quadratures, "x\n0.5\n", ":1: unexpected header"),
        (io.read_quadratures, "", "empty"),
        (io.read_clicks, "trial_id,n2,n3,bins2,bins3\n0,2,0,5,\n", ":2: malformed"),
        (io.read_traces, "trial_id,h0,h1\n0,1.0\n", ":2: malformed"),
    ],
)
def test_malformed_files(tmp_path, reader, text, match):
    (tmp_path / "f.csv").write_text(text)
    with pytest.raises(io.DatasetError, match=match):
        reader(tmp_path / "f.csv")


def test_write_outputs_is_all_or_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(TypeError):
        io.write_outputs(out, {"a.csv": "fine\n", "b.csv": 12345})
    assert list(out.iterdir()) == []
    io.write_outputs(out, {"a.csv": "fine\n"})
    assert (out / "a.csv").read_text() == "fine\n"
    mode = (out / "a.csv").stat().st_mode & 0o777
    umask = os.umask(0)
    os.umask(umask)
    assert mode == 0o666 & ~umask


# --- configuration ---------------------------------------------------------------------


def test_preset_matches_documented_numbers():
    cfg = preset()
    assert cfg.chain.eta_det == pytest.approx(0.695, abs=0.001)
    assert cfg.chain.eta_c == 0.37 and cfg.chain.nu == 0.01
    assert cfg.grid.dt == 4e-9 and cfg.grid.n_samples == 550
    assert cfg.source.mode.intensity_half_width == pytest.approx(40e-9)
    assert cfg.source.state[1] == 0.82
    assert cfg.raw["metadata"]["cavity_linewidth_hz"] == 10e6
    assert cfg.atom.temperature == 50e-6 and cfg.atom.wavelength == 795e-9


def test_metadata_does_not_affect_computation():
    text = preset_text()
    changed = text.replace("cavity_finesse: 120", "cavity_finesse: 9999")
    assert changed != text
    a, b = loads(text), loads(changed)
    assert a.source.state == b.source.state and a.chain == b.chain and a.settings == b.settings


@pytest.mark.parametrize(
    "text, match",
    [
        ("source:\n  populations: [0.5, 0.5]\nchain:\n  eta_q: 1.5\n", r"<t>:4: chain\.eta_q: expected"),
        ("source:\n  populations: [0.5, 0.5]\n  colour: red\n", r"<t>:3: source\.colour: unknown field"),
        ("chain:\n  eta_q: 0.9\n", r"<t>:\d+: source: missing required field 'populations'"),
        ("source:\n  populations: [0.5, -0.5]\n", r"<t>:2: source\.populations"),
        ("source: [1, 2\n", r"<t>:\d+: invalid YAML"),
        ("seed: -4\nsource:\n  populations: [1, 0]\n", r"<t>:1: seed"),
        ("source:\n  populations: [1, 0]\nreconstruction:\n  bootstrap: 5\n", r"<t>:4: reconstruction\.bootstrap"),
    ],
)
def test_config_errors_carry_line_numbers(text, match):
    with pytest.raises(ConfigError, match=match):
        loads(text, "<t>")


def test_config_scientific_notation_parses_as_float():
    cfg = loads("source:\n  populations: [1, 0]\n  herald_rate: 1e-3\n")
    assert cfg.source.herald_rate == 1e-3


# --- simulate -----------------------------------------------------------------------------


def test_simulate_is_byte_identical_and_manifest_complete(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("simulate", "--config", cfg, "--out", tmp_path / "b") == 0
    a, b = files_of(tmp_path / "a"), files_of(tmp_path / "b")
    assert a == b
    assert set(a) == {io.QUADRATURES, io.TRACES, io.CLICKS, io.DECAY, io.MANIFEST}
    man = json.loads(a[io.MANIFEST])
    assert man["version"] == __version__ and man["seed"] == 99 and man["command"] == "simulate"
    for name, entry in man["files"].items():
        assert io.sha256(a[name].decode()) == entry["sha256"]
        assert len(a[name]) == entry["bytes"]
    # the manifest alone regenerates every file
    assert run("simulate", "--config", tmp_path / "a" / io.MANIFEST, "--out", tmp_path / "c") == 0
    assert files_of(tmp_path / "c") == a
    # a different seed gives different data
    assert run("simulate", "--config", cfg, "--seed", 100, "--out", tmp_path / "d") == 0
    assert files_of(tmp_path / "d")[io.QUADRATURES] != a[io.QUADRATURES]


def test_simulate_independent_of_worker_count(tmp_path, monkeypatch):
    cfg = small_config(tmp_path, samples=25_000, traces=20, trials=25_000)
    monkeypatch.setenv(WORKERS_ENV, "1")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "w1") == 0
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "w3") == 0
    assert files_of(tmp_path / "w1") == files_of(tmp_path / "w3")


def test_simulate_heralding_from_write_pulses(tmp_path):
    cfg = small_config(tmp_path, samples=0, traces=0, extra="  write_pulses: 1000000\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "h") == 0
    man = io.read_manifest(tmp_path / "h")
    assert man["write_pulses"] == 1_000_000
    assert 900 <= man["heralded_trials"] <= 1100
    assert len(io.read_clicks(tmp_path / "h" / io.CLICKS)) == man["heralded_trials"]


def test_invalid_config_exits_1_with_line(tmp_path, capsys):
    bad = write_config(tmp_path / "bad.yaml", "seed: 1\nsource:\n  populations: [0.5, 0.5]\n  herald_rate: 2\n")
    assert run("simulate", "--config", bad, "--out", tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert f"{bad}:4: source.herald_rate" in err
    assert not (tmp_path / "o").exists()
    assert run("simulate", "--config", tmp_path / "missing.yaml", "--out", tmp_path / "o") == 1


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("frobnicate") == 1
    assert run("simulate") == 1
    assert run("reconstruct", "--out", tmp_path) == 1
    assert run("simulate", "--samples", -5, "--out", tmp_path / "x") == 1


# --- reconstruct ----------------------------------------------------------------------------


def test_reconstruct_preset_pipeline(tmp_path, capsys):
    cfg = small_config(tmp_path, samples=100_000, traces=0, trials=0)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "ds") == 0
    assert run("reconstruct", tmp_path / "ds", "--out", tmp_path / "rec", "--bootstrap", 20) == 0
    rec = json.loads((tmp_path / "rec" / "reconstruction.json").read_text())
    assert rec["raw"]["populations"][1] == pytest.approx(0.57, abs=0.02)
    assert rec["corrected"]["populations"][1] == pytest.approx(0.82, abs=0.02)
    assert rec["raw"]["wigner_origin"] < 0
    assert rec["corrected"]["eta_assumed"] == pytest.approx(0.82 * 0.965**2 * 0.91)
    assert all(0 < e < 0.05 for e in rec["raw"]["errorbars"][:2])
    w = io.read_table(tmp_path / "rec" / "wigner.csv", ["x", "p", "W_raw", "W_corrected"])
    origin = (w["x"] == 0) & (w["p"] == 0)
    assert w["W_raw"][origin][0] == pytest.approx(rec["raw"]["wigner_origin"], abs=1e-12)
    m = io.read_table(tmp_path / "rec" / "marginals.csv", ["x", "measured", "marginal_raw", "marginal_corrected"])
    assert np.max(np.abs(m["measured"] - m["marginal_raw"])) < 0.03
    assert "p1=" in capsys.readouterr().out


def test_reconstruct_vacuum_dataset(tmp_path):
    cfg = small_config(tmp_path, populations="[1, 0]", samples=100_000, traces=0, trials=0)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "ds") == 0
    assert run("reconstruct", "--dataset", tmp_path / "ds", "--raw", "--bootstrap", 0,
               "--grid=-3:3:7", "--out", tmp_path / "rec") == 0
    rec = json.loads((tmp_path / "rec" / "reconstruction.json").read_text())
    assert "corrected" not in rec
    assert rec["raw"]["populations"][0] >= 0.99
    assert rec["raw"]["wigner_origin"] == pytest.approx(1 / pi, abs=0.01)
    assert rec["wigner_axis"] == {"min": -3.0, "max": 3.0, "points": 7}


def test_reconstruct_corrupted_dataset(tmp_path, capsys):
    cfg = small_config(tmp_path, samples=500, traces=0, trials=0)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "ds") == 0
    q = tmp_path / "ds" / io.QUADRATURES
    q.write_text(q.read_text().replace("\n3,", "\n3,9"))
    out = tmp_path / "rec"
    assert run("reconstruct", tmp_path / "ds", "--out", out) == 2
    assert "checksum mismatch" in capsys.readouterr().err
    assert not out.exists() or list(out.iterdir()) == []
    q.unlink()
    assert run("reconstruct", tmp_path / "ds", "--out", out) == 2
    assert "missing data file" in capsys.readouterr().err


def test_reconstruct_samples_outside_kernel(tmp_path, capsys):
    x = np.r_[np.random.default_rng(0).normal(0, 0.7, 300), 9.5]
    files = {io.QUADRATURES: io.format_quadratures(x)}
    files[io.MANIFEST] = io.format_json(io.manifest("simulate", preset().raw, files))
    io.write_outputs(tmp_path / "ds", files)
    assert run("reconstruct", tmp_path / "ds", "--raw", "--bootstrap", 0, "--out", tmp_path / "rec") == 2
    assert "outside the kernel grid" in capsys.readouterr().err
    assert not (tmp_path / "rec").exists()


def test_reconstruct_bad_grid(tmp_path):
    assert run("reconstruct", tmp_path, "--grid", "1:0:5", "--out", tmp_path / "r") == 1


# --- analyze and report ---------------------------------------------------------------------


@pytest.mark.slow
def test_analyze_full_dataset(tmp_path, capsys):
    """Preset source: g2, arrival histogram, filter scan and decay fit from one dataset."""
    assert run("simulate", "--samples", 0, "--traces", 20_000, "--trials", 1_000_000,
               "--out", tmp_path / "ds") == 0
    assert run("analyze", tmp_path / "ds", "--out", tmp_path / "an") == 0
    s = json.loads((tmp_path / "an" / "summary.json").read_text())
    assert 0.02 <= s["g2_0"] <= 0.06
    assert 0.96 <= s["g2"]["1"] <= 1.04 and 0.96 <= s["g2"]["-1"] <= 1.04
    assert s["sigma_opt_s"] == pytest.approx(56e-9)
    assert s["vacuum_variance"] == pytest.approx(0.5, abs=0.015)
    assert s["arrival_half_width_s"] == pytest.approx(40e-9, abs=2e-9)
    tau = doppler_time(AtomParams())
    assert s["tau_fit_s"] == pytest.approx(tau, rel=0.05)
    assert s["eta0"] == pytest.approx(0.82, abs=0.05)
    g2 = io.read_table(tmp_path / "an" / "g2.csv", ["tau", "g2", "stderr"])
    assert g2["tau"].tolist() == list(range(-5, 6))
    hist = io.read_table(tmp_path / "an" / "arrival_histogram.csv", ["bin_start_s", "spcm2", "spcm3"])
    clicks = io.read_clicks(tmp_path / "ds" / io.CLICKS)
    assert hist["spcm2"].sum() == clicks.n2.sum() and hist["spcm3"].sum() == clicks.n3.sum()
    scan = io.read_table(tmp_path / "an" / "filter_scan.csv", ["width_s", "variance", "stderr"])
    assert int(np.argmax(scan["variance"])) == 2


@pytest.mark.slow
def test_analyze_g2_at_ten_million_trials(tmp_path):
    assert run("simulate", "--samples", 0, "--traces", 0, "--trials", 10_000_000, "--out", tmp_path / "ds") == 0
    assert run("analyze", tmp_path / "ds", "--what", "g2", "--out", tmp_path / "an") == 0
    s = json.loads((tmp_path / "an" / "summary.json").read_text())
    assert s["trials"] == 10_000_000
    assert 0.02 <= s["g2_0"] <= 0.06
    assert 0.96 <= s["g2"]["1"] <= 1.04 and 0.96 <= s["g2"]["-1"] <= 1.04
    assert set(os.listdir(tmp_path / "an")) == {"g2.csv", "summary.json"}


def test_analyze_missing_data(tmp_path, capsys):
    cfg = small_config(tmp_path, samples=200, traces=0, trials=0)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "ds") == 0
    assert run("analyze", tmp_path / "ds", "--what", "g2", "--out", tmp_path / "an") == 2
    assert "clicks.csv" in capsys.readouterr().err
    assert run("analyze", tmp_path / "ds", "--what", "nonsense", "--out", tmp_path / "an") == 1
    assert run("analyze", tmp_path / "ds", "--what", "decay", "--out", tmp_path / "an") == 0
    assert "tau_fit_s" in json.loads((tmp_path / "an" / "summary.json").read_text())


def test_report(tmp_path, capsys):
    assert run("report", "--out", tmp_path / "rep") == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert rep["eta_max"] == 0.9375
    assert rep["efficiency_budget"]["eta_det"] == pytest.approx(0.695, abs=0.001)
    assert rep["doppler_time_s"] == pytest.approx(915e-9, abs=1e-9)
    assert rep["detected_populations"][1] == pytest.approx(0.57, abs=0.01)
    assert rep["source_g2"] == pytest.approx(0.041, abs=1e-3)
    assert "Doppler time" in capsys.readouterr().out
    assert run("report", "--cooperativity", -1) == 1
