import json
import math

import numpy as np
import pytest
import yaml

from uraccess import cli
from uraccess.harness import (ConfigError, ExperimentConfig, dump_config, emit_dat, figure_configs,
                              format_dat, load_config, read_dat, run)
from uraccess.harness import runner


# ------------------------------------------------------------------ data files

def test_dat_format_example():
    text = format_dat([(2, 7.5), (250, 10.25)], "KA/EBNO")
    assert text == "KA EBNO\n2 7.5\n250 10.25\n"
    assert format_dat([(0.1, math.inf)], "eps mu") == "EPS MU\n0.1 inf\n"


def test_dat_round_trip(tmp_path):
    pts = [(6.0, 0.5), (9.0, 0.0123456789), (12.0, 1e-7)]
    f = emit_dat(pts, "EBNO/PUPE", tmp_path / "a" / "x.dat")
    header, data = read_dat(f)
    assert header == ["EBNO", "PUPE"]
    assert np.allclose(data, pts, rtol=1e-6)
    assert b"\r" not in f.read_bytes()


def test_dat_rejects_bad_rows():
    with pytest.raises(ValueError):
        format_dat([(1, 2, 3)], "EBNO/FER")
    with pytest.raises(ValueError):
        format_dat([(1, 2)], "SNR/BER")


# ------------------------------------------------------------------ configs

GENIE = dict(kind="simulate-frame", name="genie", seed=3, trials=200,
             params=dict(n=400, k=20, K_a=6, L=4, T=2, decoder="genie", pe=[0.0, 0.1, 0.3],
                         ebno_db=[0.0, 1.0]))


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict(GENIE)
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    # output location and worker count do not change the numbers
    assert cfg.replace(out="elsewhere", workers=4).config_hash() == cfg.config_hash()
    assert cfg.replace(seed=4).config_hash() != cfg.config_hash()


@pytest.mark.parametrize("bad,key", [
    (dict(GENIE, colour="red"), "colour"),
    (dict(GENIE, params=dict(GENIE["params"], bogus=1)), "params.bogus"),
    (dict(GENIE, params=dict(GENIE["params"], K_a="six")), "params.K_a"),
    (dict(GENIE, params={k: v for k, v in GENIE["params"].items() if k != "n"}), "params.n"),
    (dict(GENIE, kind="simulate-everything"), "kind"),
])
def test_config_errors_name_the_key(bad, key):
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict(bad)
    assert e.value.key == key


# ------------------------------------------------------------------ determinism and SE

def _files(rec):
    return {f: open(f, "rb").read() for f in rec.files}


def test_rerun_is_bit_identical(tmp_path):
    cfg = ExperimentConfig.from_dict(GENIE)
    a = _files(run(cfg.replace(out=str(tmp_path / "a"))))
    b = _files(run(cfg.replace(out=str(tmp_path / "b"))))
    assert list(a.values()) == list(b.values())


SLOT = dict(kind="simulate-slot", name="slot", seed=1, trials=3,
            params=dict(code="ldpc_32_16", r=1, ebno_db=[12.0], mode="known-k", T=1,
                        outer_iters=3, inner_iters=10))


@pytest.mark.parametrize("spec", [GENIE, SLOT], ids=["frame", "slot"])
def test_workers_do_not_change_results(tmp_path, spec):
    cfg = ExperimentConfig.from_dict(spec)
    one = run(cfg.replace(out=str(tmp_path / "w1"), workers=1))
    eight = run(cfg.replace(out=str(tmp_path / "w8"), workers=8))
    assert list(_files(one).values()) == list(_files(eight).values())
    assert [p.y for p in one.points] == [p.y for p in eight.points]


def test_se_shrinks_with_trials(tmp_path):
    spec = dict(GENIE, params=dict(GENIE["params"], ebno_db=[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]))
    cfg = ExperimentConfig.from_dict(spec)
    small = run(cfg.replace(trials=1500, out=str(tmp_path / "s")))
    big = run(cfg.replace(trials=3000, out=str(tmp_path / "b")))
    ratio = np.mean([b.se / a.se for a, b in zip(small.points, big.points)])
    assert abs(ratio / (1 / math.sqrt(2)) - 1) < 0.2


def test_genie_record_carries_bound(tmp_path):
    rec = run(ExperimentConfig.from_dict(GENIE).replace(out=str(tmp_path)))
    meta = json.loads((tmp_path / "genie.json").read_text())
    assert meta["config_hash"] == rec.config_hash and meta["kind"] == "simulate-frame"
    assert all("epsilon_T_genie" in p.extra for p in rec.points)


# ------------------------------------------------------------------ checkpoint

def test_checkpoint_resume(tmp_path, monkeypatch):
    cfg = ExperimentConfig.from_dict(dict(GENIE, trials=40)).replace(out=str(tmp_path / "r"))
    clean = _files(run(cfg.replace(out=str(tmp_path / "clean"))))

    real = runner._frame_trial
    calls = {"n": 0}

    def dying(task):
        calls["n"] += 1
        if calls["n"] > 25:
            raise KeyboardInterrupt
        return real(task)

    monkeypatch.setattr(runner, "CHECKPOINT_SECONDS", 0.0)
    monkeypatch.setattr(runner, "_frame_trial", dying)
    with pytest.raises(KeyboardInterrupt):
        run(cfg)
    assert (tmp_path / "r" / ".genie.ckpt.json").exists()

    def counting(task):
        calls["n"] += 1
        return real(task)

    calls["n"] = 0
    monkeypatch.setattr(runner, "_frame_trial", counting)
    rec = run(cfg)
    assert calls["n"] == 2 * 40 - 25            # only the unfinished trials ran
    assert list(_files(rec).values()) == list(clean.values())
    assert not (tmp_path / "r" / ".genie.ckpt.json").exists()


def test_checkpoint_ignored_for_other_config(tmp_path):
    out = tmp_path / "x"
    out.mkdir()
    (out / ".genie.ckpt.json").write_text(json.dumps({"key": "stale", "stages": {"frame-0": [[9, 9]]}}))
    rec = run(ExperimentConfig.from_dict(GENIE).replace(out=str(out)))
    assert rec.points[0].y <= 1.0


# ------------------------------------------------------------------ kinds

def test_asymptotic_sweep_rows(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(kind="bound-asymptotic", name="asym", out=str(tmp_path),
                                          params=dict(mu=[0.02, 0.05, 0.1], curves=["conv", "conv_iid"])))
    rec = run(cfg)
    for name in ("conv", "conv_iid"):
        header, data = read_dat(tmp_path / f"{name}.dat")
        assert header == ["EPS", "MU"] and data.shape == (3, 2)
        assert np.allclose(data[:, 1], [0.02, 0.05, 0.1])
    assert not rec.infeasible


def test_fbl_analytic_kind(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(kind="bound-fbl-ach", name="an", out=str(tmp_path),
                                          params=dict(n1=128, k=64, r=2, ebno_db=[10.0, 20.0],
                                                      method="analytic")))
    rec = run(cfg)
    ys = [p.y for p in rec.points]
    assert 0 <= ys[1] <= ys[0] <= 1


# ------------------------------------------------------------------ figures

def test_figure_expansion():
    asym = figure_configs("fig_asymp2", "desk")
    assert len(asym) == 1
    p = asym[0].params
    assert len(p["mu"]) == 10 and max(p["mu"]) <= 0.2 and p["eps"] == 0.1
    assert set(p["curves"]) == {"ach", "replica", "conv", "conv_iid"}
    assert figure_configs("fig_asymp1", "full")[0].params["eps"] == 1e-3

    k2 = figure_configs("figK2", "desk")
    assert {c.name for c in k2} == {"blind", "known_k", "known_h_k", "fbl", "converse"}
    assert all(c.params.get("r", 2) == 2 for c in k2 if c.kind == "simulate-slot")

    f1 = {c.name for c in figure_configs("fig1", "desk")}
    assert {"bounds", "aloha1_fbl", "aloha4_fbl"} <= f1
    assert {"aloha1_ldpc_ldpc_200_100", "aloha4_ldpc_ldpc_400_100"} <= f1

    assert {c.name for c in figure_configs("fig_hard_decision", "desk")} == {"gm_full", "gm_simple"}
    assert {c.name for c in figure_configs("fig2", "full")} == {"ka_50", "ka_150", "ka_250"}


def test_figure_errors():
    with pytest.raises(ConfigError):
        figure_configs("fig9")
    with pytest.raises(ConfigError):
        figure_configs("fig1", "huge")
    with pytest.raises(ConfigError) as e:
        figure_configs("figK3", code="no_such_code.alist")
    assert e.value.key == "params.code"


# ------------------------------------------------------------------ CLI

def _write(tmp_path, data, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_cli_success(tmp_path, capsys):
    path = _write(tmp_path, dict(GENIE, out=str(tmp_path / "o")))
    assert cli.main(["simulate-frame", "--config", path, "--trials", "20"]) == 0
    assert capsys.readouterr().out.strip().endswith("genie.dat")


def test_cli_invalid_config(tmp_path, capsys):
    path = _write(tmp_path, dict(GENIE, params=dict(GENIE["params"], bogus=1)))
    assert cli.main(["simulate-frame", "--config", path]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["key"] == "params.bogus"

    assert cli.main(["simulate-frame", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = _write(tmp_path, dict(SLOT, out=str(tmp_path / "o"),
                                params=dict(SLOT["params"], code="nope.alist")), "s.yaml")
    assert cli.main(["simulate-slot", "--config", bad]) == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["key"] == "params.code"


def test_cli_kind_mismatch(tmp_path, capsys):
    path = _write(tmp_path, GENIE)
    assert cli.main(["simulate-slot", "--config", path]) == 2
    assert json.loads(capsys.readouterr().err)["key"] == "kind"


def test_cli_infeasible(tmp_path):
    path = _write(tmp_path, dict(kind="bound-converse", name="tin", out=str(tmp_path / "o"),
                                 params=dict(n=3000, k=100, K_a=[10], curves=["tin"], samples=1000)))
    assert cli.main(["bound-converse", "--config", path]) == 3
