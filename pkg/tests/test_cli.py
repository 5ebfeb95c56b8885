import json

import pytest

from mcvorder import cli, oracles

SMALL = """
[scheme]
steps = {steps}
particles = {particles}
seed = 3
truncation = "{truncation}"

{models}

[outputs]
directory = "{out}"
"""


def write_config(tmp_path, models, name="cfg.toml", steps=10, particles=200, truncation="truncated", extra=""):
    out = tmp_path / (name + ".out")
    text = SMALL.format(steps=steps, particles=particles, truncation=truncation, models=models,
                        out=out) + extra
    path = tmp_path / name
    path.write_text(text)
    return path, out


GBM_TRIPLE = """
[models.a]
builtin = "gbm(0.05, 1)"
[models.b]
builtin = "gbm(0.05, 1)"
[models.c]
builtin = "gbm(0.05, 1)"
"""


def test_simulate_zero_model_constant(tmp_path):
    path, out = write_config(tmp_path, '[models.z]\nbuiltin = "zero"\ninitial = 1.5\n', particles=5, steps=3)
    assert cli.main(["simulate", "--config", str(path)]) == 0
    rows = (out / "ensemble_z.csv").read_text().splitlines()
    assert rows[0] == "particle,step,value" and len(rows) == 1 + 5 * 4
    assert {r.split(",")[2] for r in rows[1:]} == {"1.5"}
    assert (out / "marginals_z.csv").read_text().startswith("step,strike,value\n")


def test_truncated_and_regular_agree_under_huge_threshold(tmp_path):
    models = '[models.g]\nbuiltin = "gbm"\ndrift_rate = 0.05\nvol = 0.0001\n'
    p1, o1 = write_config(tmp_path, models, "t.toml")
    p2, o2 = write_config(tmp_path, models, "r.toml", truncation="regular")
    assert cli.main(["simulate", "--config", str(p1)]) == 0
    assert cli.main(["simulate", "--config", str(p2)]) == 0
    assert (o1 / "ensemble_g.csv").read_bytes() == (o2 / "ensemble_g.csv").read_bytes()


def test_manifest(tmp_path):
    path, out = write_config(tmp_path, '[models.g]\nbuiltin = "gbm(0.05, 1)"\n')
    cli.main(["simulate", "--config", str(path), "--seed", "11"])
    manifest = json.loads((out / "run.manifest").read_text())
    assert manifest["seed"] == 11 and manifest["config"]["scheme"]["seed"] == 11
    assert manifest["models"]["g"]["h"] == pytest.approx(0.1)
    assert manifest["models"]["g"]["step_size_ok"] is True
    assert manifest["version"] and manifest["numpy"]


def test_reruns_and_threads_are_byte_identical(tmp_path):
    path, out = write_config(tmp_path, '[models.y]\nbuiltin = "example1_y"\n')
    cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "one")])
    cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "two"), "--threads", "3"])
    for name in ("ensemble_y.csv", "marginals_y.csv", "curve_call_square_y.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    first = (tmp_path / "one" / "run.manifest").read_bytes()
    cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "one")])
    assert (tmp_path / "one" / "run.manifest").read_bytes() == first


def test_bound_check_identical_models(tmp_path):
    extra = '\n[bound_check]\nlower = "a"\nmid = "b"\nupper = "c"\n'
    path, out = write_config(tmp_path, GBM_TRIPLE, extra=extra)
    assert cli.main(["bound-check", "--config", str(path)]) == 0
    curves = [(out / f"curve_call_square_{r}.csv").read_text() for r in ("lower", "mid", "upper")]
    assert curves[0] == curves[1] == curves[2]
    assert (out / "bounds_call_square.svg").read_text().startswith("<svg")
    assert (out / "bounds.csv").exists()


def test_bound_check_violation_exit(tmp_path, capsys):
    models = GBM_TRIPLE.replace('[models.c]\nbuiltin = "gbm(0.05, 1)"', '[models.c]\nbuiltin = "gbm(-0.5, 1)"')
    extra = '\n[bound_check]\nlower = "a"\nmid = "b"\nupper = "c"\n'
    path, _ = write_config(tmp_path, models, particles=2000, extra=extra)
    assert cli.main(["bound-check", "--config", str(path)]) == cli.EXIT_ORDER
    assert "mid<=upper" in capsys.readouterr().err


def test_order_check_identical_models_zero_margin(tmp_path):
    extra = '\n[order]\nlower = "a"\nupper = "b"\n[order_check]\nz = 0\n'
    path, out = write_config(tmp_path, GBM_TRIPLE, extra=extra)
    assert cli.main(["order-check", "--config", str(path)]) == 0
    rows = (out / "verdicts.csv").read_text().splitlines()
    assert rows[0] == "step,t,dominated,worst_margin,worst_strike,tolerance_used"
    assert len(rows) == 12
    assert all(r.split(",")[2] == "true" and float(r.split(",")[3]) == 0.0 for r in rows[1:])


def test_order_check_gbm_pair_both_relations(tmp_path):
    models = '[models.lo]\nbuiltin = "gbm(0.05, 1)"\n[models.hi]\nbuiltin = "gbm(0.15, 1)"\n'
    p1, _ = write_config(tmp_path, models, "ii.toml", particles=5000, extra='\n[order]\nlower = "lo"\nupper = "hi"\n')
    assert cli.main(["order-check", "--config", str(p1)]) == 0
    p2, _ = write_config(tmp_path, models, "iip.toml", particles=5000,
                         extra='\n[order]\nlower = "hi"\nupper = "lo"\nrelation = "assumption_II_prime"\n')
    assert cli.main(["order-check", "--config", str(p2)]) == 0
    p3, _ = write_config(tmp_path, models, "bad.toml", particles=5000,
                         extra='\n[order]\nlower = "hi"\nupper = "lo"\n')
    assert cli.main(["order-check", "--config", str(p3)]) == cli.EXIT_ORDER


def test_oracle_command(tmp_path, capsys):
    assert cli.main(["oracle", "counterexample", "--out", str(tmp_path)]) == 0
    assert "counterexample_sign_change" in capsys.readouterr().out
    assert (tmp_path / "oracle_counterexample.csv").read_text().startswith("check,input,expected,observed,pass")


def test_oracle_failure_exit(tmp_path, monkeypatch):
    def failing(name):
        rep = oracles.OracleReport()
        rep.add("forced", "-", "pass", "fail", False)
        return rep
    monkeypatch.setattr(oracles, "run_suite", failing)
    assert cli.main(["oracle", "all", "--out", str(tmp_path)]) == cli.EXIT_ORACLE


def test_convergence_zero_model(tmp_path):
    extra = '\n[convergence]\nmodel = "z"\nladder = [4, 8, 16]\n'
    path, out = write_config(tmp_path, '[models.z]\nbuiltin = "zero"\n', extra=extra)
    assert cli.main(["convergence", "--config", str(path)]) == 0
    rows = (out / "convergence.csv").read_text().splitlines()
    assert rows[0] == "coarse_steps,fine_steps,h,error,stderr"
    assert all(float(r.split(",")[3]) == 0.0 for r in rows[1:])
    assert not (out / "coincidence.csv").exists()


def test_convergence_gbm_writes_coincidence(tmp_path):
    extra = '\n[convergence]\nmodel = "g"\nladder = [8, 16, 32]\ncoincidence_trials = 1000\n'
    path, out = write_config(tmp_path, '[models.g]\nbuiltin = "gbm(0.05, 1)"\n', extra=extra)
    assert cli.main(["convergence", "--config", str(path)]) == 0
    assert (out / "convergence_fit.csv").read_text().startswith("model,norm_exponent,truncation,slope\ng,1,regular,")
    assert len((out / "coincidence.csv").read_text().splitlines()) == 4


def test_config_error_exit(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[scheme]\nsteps = \n")
    assert cli.main(["simulate", "--config", str(path)]) == cli.EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_step_size_exit_and_override(tmp_path):
    path, _ = write_config(tmp_path, '[models.g]\nbuiltin = "gbm(10, 1)"\n', particles=10)
    assert cli.main(["simulate", "--config", str(path)]) == cli.EXIT_CONFIG
    assert cli.main(["simulate", "--config", str(path), "--allow-large-h"]) == 0


def test_blowup_exit(tmp_path, capsys):
    models = '[models.q]\ndrift = "x*x*x*x"\ndiffusion = "0"\nlip_x_drift = 0.1\nlip_x_diffusion = 0\ninitial = 1e10\n'
    path, _ = write_config(tmp_path, models, steps=50, particles=4)
    assert cli.main(["simulate", "--config", str(path)]) == cli.EXIT_NUMERIC
    assert "step" in capsys.readouterr().err


def test_missing_section_is_config_error(tmp_path):
    path, _ = write_config(tmp_path, GBM_TRIPLE)
    for cmd in ("bound-check", "order-check", "convergence"):
        assert cli.main([cmd, "--config", str(path)]) == cli.EXIT_CONFIG
