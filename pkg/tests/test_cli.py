import json
import subprocess
import sys

import numpy as np
import pytest

from horomix import __version__
from horomix.cli import main
from horomix.config import ConfigError, ExperimentConfig

FAST = ["--tau.normalizer_samples=5000", "--observables.mean_samples=5000"]


def run(tmp_path, *argv, name="out.txt"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out), *FAST])
    text = out.read_text() if out.exists() else ""
    return code, text


def csv_body(text):
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = rows[0].split(",")
    return header, [dict(zip(header, r.split(","))) for r in rows[1:]]


def footer(text):
    body_seen = False
    out = []
    for ln in text.splitlines():
        if not ln.startswith("#"):
            body_seen = True
        elif body_seen:
            out.append(ln[2:])
    return out


# -- config -----------------------------------------------------------------

def test_config_text_round_trip():
    cfg = ExperimentConfig.default().with_overrides("--tau.c=0.1", "--correlate.gaps=5,7")
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.getlist("correlate", "gaps") == [5.0, 7.0]
    assert back.get("tau", "c") == 0.1


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[run]\nseed = 5\n[tau]\nc = 0\n")
    cfg = ExperimentConfig.from_file(path, ["--run.seed=9"])
    assert cfg.seed == 9
    assert cfg.tau().is_constant


@pytest.mark.parametrize("text", [
    "[nosuch]\nx = 1\n",
    "[tau]\nbogus = 1\n",
    "[tau]\nc = 0.9\n",
    "[tau]\nc = abc\n",
    "[tau]\ncenter = 1 1 1 1\n",
    "[correlate]\ngaps =\n",
    "[vdc]\nobservable = wave\n",
    "no section header\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_malformed_override():
    with pytest.raises(ConfigError):
        ExperimentConfig.default().with_overrides("--tau.c")


# -- exit codes ---------------------------------------------------------------

def test_corrupt_config_exits_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[tau]\nc = nonsense\n")
    assert main(["cluster", "--config", str(bad)]) == 2
    assert main(["cluster", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["cluster", "--tau.c=7"]) == 2
    assert main(["nosuch"]) == 2


def test_out_of_regime_cluster_input_exits_2(tmp_path):
    code, _ = run(tmp_path, "cluster", "--cluster.times=0,3,2")
    assert code == 2


def test_resource_exhaustion_exits_3(tmp_path):
    code, _ = run(tmp_path, "shear", "--flow.horizon=50", "--shear.samples=2")
    assert code == 3


def test_bad_thread_count_is_a_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("HOROMIX_THREADS", "zero")
    code, _ = run(tmp_path, "sample")
    assert code == 2


# -- commands -------------------------------------------------------------------

def test_cluster_reproduces_the_worked_example(tmp_path):
    code, text = run(tmp_path, "cluster")
    assert code == 0
    rep = json.loads(text)
    assert rep["cluster"]["stop_step"] == 2
    assert rep["cluster"]["radii"][0] == pytest.approx(1000 ** (1 / 48), rel=1e-14)
    assert rep["stopk_holds"] is True
    assert rep["version"] == __version__
    assert rep["config"]["cluster"]["times"] == "0, 500, 1000"


def test_plan_three_and_k_point(tmp_path):
    code, text = run(tmp_path, "plan")
    assert code == 0 and json.loads(text)["plan"]["case"] == "A"
    code, text = run(tmp_path, "plan", "--plan.times=0,500,1000,2000",
                     "--cluster.zetas=0.5,0.5,0.5", name="k.txt")
    assert code == 0 and json.loads(text)["plan"]["case"] in ("A", "B")


def test_sample_is_seeded(tmp_path):
    _, a = run(tmp_path, "sample", "--seed", "3", name="a.csv")
    _, b = run(tmp_path, "sample", "--seed", "3", name="b.csv")
    _, c = run(tmp_path, "sample", "--seed", "4", name="c.csv")
    assert csv_body(a) == csv_body(b) != csv_body(c)
    header, rows = csv_body(a)
    assert header == ["a", "b", "c", "d", "weight"] and len(rows) == 10
    m = np.array([[float(r[k]) for k in "abcd"] for r in rows])
    assert np.allclose(m[:, 0] * m[:, 3] - m[:, 1] * m[:, 2], 1.0)


def test_csv_outputs_embed_config_and_use_lf(tmp_path):
    code, text = run(tmp_path, "sample")
    raw = (tmp_path / "out.txt").read_bytes()
    assert code == 0 and b"\r" not in raw
    assert text.startswith(f"# horomix {__version__} sample\n")
    assert "# [tau]" in text and "# seed = 20240611" in text


def test_shear_with_unit_tau_is_identically_zero(tmp_path):
    code, text = run(tmp_path, "shear", "--tau.c=0", "--shear.samples=5", "--shear.T=10,30")
    assert code == 0
    header, rows = csv_body(text)
    assert header == ["s", "T", "sample", "abs_A"]
    assert len(rows) == 10
    assert all(float(r["abs_A"]) <= 1e-6 for r in rows)


def test_deviation_columns(tmp_path):
    code, text = run(tmp_path, "deviation", "--shear.samples=3", "--shear.T=10")
    assert code == 0
    header, rows = csv_body(text)
    assert header[:4] == ["s", "T", "sample", "deviation"] and len(rows) == 3


def test_vdc_constant_family_margin(tmp_path):
    code, text = run(tmp_path, "vdc", "--vdc.observable=constant", "--vdc.n=200",
                     "--vdc.N=50", "--vdc.L=5,10")
    assert code == 0
    _, rows = csv_body(text)
    for r in rows:
        L, N = float(r["L"]), float(r["N"])
        assert float(r["margin"]) == pytest.approx(np.sqrt(2) - 1 + 2 * L / N)
        assert r["holds"] == "1"
    assert any("O-constant" in ln for ln in footer(text))


def test_correlate_single_gap_reports_insufficient_data(tmp_path):
    code, text = run(tmp_path, "correlate", "--correlate.gaps=10", "--correlate.n=200",
                     "--correlate.window=10")
    assert code == 0
    header, rows = csv_body(text)
    assert header == ["min_gap", "value", "stderr", "n", "seed", "flag"]
    assert len(rows) == 1
    assert any("insufficient data" in ln for ln in footer(text))


def test_l2avg_small_run(tmp_path):
    code, text = run(tmp_path, "l2avg", "--l2avg.n=200", "--l2avg.windows=5,10",
                     "--tau.c=0")
    assert code == 0
    _, rows = csv_body(text)
    assert len(rows) == 2


def test_flow_check_small_run(tmp_path):
    code, text = run(tmp_path, "flow-check", "--flow_check.additivity_samples=50",
                     "--flow_check.invariance_samples=500", "--shear.T=10,30")
    rep = json.loads(text)
    assert code == 0, rep
    assert rep["renormalization_residual"] <= 1e-10
    assert all(rep["checks"].values())


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "horomix", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and __version__ in res.stdout
