import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cknlab import io as cio
from cknlab.bubbles import kernel_profile, psi_profile
from cknlab.cli import main
from cknlab.cylinder import make_grid


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.delenv("CKNLAB_OUTPUT_DIR", raising=False)
    return tmp_path


def run(capsys, *args):
    code = main([str(a) for a in args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_field_round_trip_exact(out, p32):
    g = make_grid(p32, [0.0], n_t=513, max_mode=3)
    rng = np.random.default_rng(0)
    f = psi_profile(p32, 0.0, g) + 1e-7 * kernel_profile(p32, 0.0, g)
    f = f + type(f)(g, rng.normal(size=f.modes.shape) * 1e-3)
    path = cio.write_field(f, out / "f.json")
    back = cio.read_field(path)
    assert back.grid == g
    assert np.array_equal(back.modes, f.modes)
    doc = json.loads(path.read_text())
    assert set(doc) == {"params", "grid", "modes"}
    assert {"t_min", "t_max", "n_t", "max_mode", "n_phi", "d"} <= set(doc["grid"])
    assert doc["params"]["lambda_fs"] == 1.6


def test_field_file_errors(out, p32):
    (out / "bad.json").write_text('{"params": {"d": 3,\n "p": }')
    with pytest.raises(cio.FieldFileError, match="line 2, column"):
        cio.read_field(out / "bad.json")
    (out / "missing.json").write_text('{"params": {"d": 3, "p": 2}}')
    with pytest.raises(cio.FieldFileError, match="grid"):
        cio.read_field(out / "missing.json")
    g = make_grid(p32, [0.0], n_t=65, max_mode=2)
    doc = cio.field_to_dict(psi_profile(p32, 0.0, g))
    doc["params"]["lambda_fs"] = 1.7
    with pytest.raises(cio.FieldFileError, match="inconsistent"):
        cio.field_from_dict(json.loads(cio.dumps(doc)))
    doc = cio.field_to_dict(psi_profile(p32, 0.0, g))
    doc["modes"] = doc["modes"][:, :10]
    with pytest.raises(cio.FieldFileError, match="shape"):
        cio.field_from_dict(json.loads(cio.dumps(doc)))
    with pytest.raises(cio.FieldFileError):
        cio.read_field(out / "nope.json")


def test_dumps_digits():
    text = cio.dumps({"b": 0.1, "a": [1, 2.5], "c": None, "d": True, "e": "x"})
    assert text.index('"a"') < text.index('"b"')
    assert "1.0000000000000001e-01" in text
    assert json.loads(text) == {"a": [1, 2.5], "b": 0.1, "c": None, "d": True, "e": "x"}


def test_cli_bubble(out, capsys):
    code, stdout, _ = run(capsys, "bubble", "--d", 3, "--p", 2, "--output-dir", out)
    assert code == 0
    rep = json.loads(stdout)
    assert rep["lambda_fs"] == 1.6
    assert rep["residual_rel"] < 1e-6 and rep["nullity_w_rel"] < 1e-6
    assert (out / "psi.json").exists()
    code, stdout2, _ = run(capsys, "bubble", "--d", 3, "--p", 2, "--n-t", 8193,
                           "--output-dir", out / "fine")
    assert abs(json.loads(stdout2)["s_inv"] - rep["s_inv"]) <= 1e-8


def test_cli_bad_p(out, capsys):
    code, _, err = run(capsys, "bubble", "--d", 3, "--p", 0.5, "--output-dir", out)
    assert code == 2 and "p must exceed 1" in err


def test_cli_bad_usage(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "bubble", "--n-t", 100)[0] == 2


def test_cli_decompose(out, capsys, p32):
    g = make_grid(p32, [0.2, 7.3])
    v = (1.03 * psi_profile(p32, 0.2, g) + 0.97 * psi_profile(p32, 7.3, g)
         + 0.04 * kernel_profile(p32, 0.2, g) - 0.02 * kernel_profile(p32, 7.3, g))
    cio.write_field(v, out / "planted.json")
    code, stdout, _ = run(capsys, "decompose", out / "planted.json", "--output-dir", out)
    assert code == 0
    rep = json.loads(stdout)
    assert rep["nu"] == 2 and rep["passed"]
    assert_allclose(rep["alphas"], [1.03, 0.97], atol=1e-7)
    assert_allclose(rep["centers"], [0.2, 7.3], atol=1e-7)
    assert_allclose(rep["betas"], [0.04, -0.02], atol=1e-7)
    assert json.loads((out / "decomposition.json").read_text()) == rep


def test_cli_decompose_psi(out, capsys):
    run(capsys, "bubble", "--output-dir", out)
    code, stdout, _ = run(capsys, "decompose", out / "psi.json", "--output-dir", out)
    assert code == 0 and json.loads(stdout)["dist"] < 1e-10


def test_cli_decompose_corrupt(out, capsys):
    (out / "c.json").write_text('{"params": [1, 2,,]}')
    code, _, err = run(capsys, "decompose", out / "c.json")
    assert code == 3 and "line 1, column" in err


def test_cli_decompose_numeric_failure(out, capsys):
    run(capsys, "bubble", "--output-dir", out)
    code, _, err = run(capsys, "decompose", out / "psi.json", "--nu", 2, "--output-dir", out)
    assert code == 4 and "numerical failure" in err


def test_cli_sweep_empty(out, capsys):
    code, _, err = run(capsys, "sweep", "--preset", "kernel", "--n-beta", 0, "--output-dir", out)
    assert code == 2 and "empty schedule" in err
    code, _, _ = run(capsys, "sweep", "--beta-min", 0.1, "--beta-max", 0.1, "--output-dir", out)
    assert code == 2


def test_cli_sweep_kernel_deterministic(out, capsys, monkeypatch):
    code, stdout, _ = run(capsys, "sweep", "--preset", "kernel", "--n-beta", 5,
                          "--output-dir", out / "a")
    assert code == 0
    fits = json.loads((out / "a" / "fit.json").read_text())["fits"]
    assert abs(fits["kernel_dominated"]["slope"] - 1 / 3) <= 0.04
    header = (out / "a" / "sweep.csv").read_text().splitlines()[0]
    assert header == "beta,R,q_r,f_dual,dist,nu_ok,regime,alpha1,alpha2,s1,s2,beta1,beta2"
    rows = (out / "a" / "f_dual_dist.dat").read_text().splitlines()
    assert len(rows) == 6 and rows[0].startswith("#")
    # config file mirrors flags; the env var overrides the output directory
    (out / "cfg.json").write_text('{"preset": "kernel", "n-beta": 5, "workers": 2, "seed": 4}')
    monkeypatch.setenv("CKNLAB_OUTPUT_DIR", str(out / "b"))
    code, _, _ = run(capsys, "sweep", "--config", out / "cfg.json", "--seed", 0)
    assert code == 0
    for name in ("sweep.csv", "fit.json", "f_dual_dist.dat"):
        assert (out / "a" / name).read_bytes() == (out / "b" / name).read_bytes()


def test_cli_config_errors(out, capsys):
    (out / "cfg.json").write_text('{"colour": 1}')
    assert run(capsys, "bubble", "--config", out / "cfg.json")[0] == 2
    (out / "cfg2.json").write_text('{"d": 3,')
    assert run(capsys, "bubble", "--config", out / "cfg2.json")[0] == 3


def test_cli_interaction_p3(out, capsys):
    code, _, _ = run(capsys, "sweep", "--preset", "interaction", "--d", 2, "--p", 3,
                     "--output-dir", out)
    assert code == 0
    fit = json.loads((out / "fit.json").read_text())["fits"]["all"]
    assert abs(fit["slope"] - 1.0) <= 0.05


def test_cli_sweep_rows_flagged(out, capsys):
    code, _, _ = run(capsys, "sweep", "--r-min", 0.3, "--r-max", 12, "--n-r", 2,
                     "--output-dir", out)
    assert code == 0
    rows = (out / "sweep.csv").read_text().splitlines()[1:]
    assert ",failed," in rows[0] and ",failed," not in rows[1]
    code, _, _ = run(capsys, "sweep", "--r-min", 0.3, "--r-max", 0.3, "--n-r", 1,
                     "--output-dir", out)
    assert code == 4
