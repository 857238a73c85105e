"""Figure recipes: each figure expands into a list of experiment configs.

``desk`` scale shrinks trial counts and grids and uses the small shipped
codes where the original setting would take hours; ``full`` scale uses
n = 30000, k = 100 and large trial budgets and is long-running.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .datfile import emit_dat, read_dat
from .runner import ResultRecord, load_code, run

FIGURES = ("fig1", "fig2", "figK2", "figK3", "figK4", "fig_asymp1", "fig_asymp2",
           "fig_hard_decision")
LONG_RUNNING = {"full"}

N, K = 30000, 100

# multi-component and single-component fading posteriors
GM_FULL = dict(gm_max_components=500, gm_merge_distance=1.0, gm_prune_cum_weight=1e-3,
               gm_sample_count=20)
GM_SIMPLE = dict(gm_max_components=1, gm_merge_distance=None, gm_prune_cum_weight=0.0,
                 gm_sample_count=20)


def _cfg(kind, name, params, trials=1, seed=0):
    return ExperimentConfig.from_dict(dict(kind=kind, name=name, params=params, trials=trials,
                                           seed=seed))


def _fig1(desk: bool, seed: int, code):
    Ka = [25, 100, 175, 250] if desk else [2, 10, 25, 50, 75, 100, 125, 150, 175, 200, 225, 250]
    base = dict(n=N, k=K, eps=0.1)
    out = [_cfg("bound-converse", "bounds", dict(base, K_a=Ka, samples=10_000 if desk else 100_000,
                                                 curves=["converse", "tin", "shamai-bettesh"]),
                seed=seed)]
    for T in (1, 4):
        out.append(_cfg("optimize-aloha", f"aloha{T}_fbl",
                        dict(base, K_a=Ka, T=T, model="fbl", samples=300 if desk else 2000),
                        seed=seed))
        for c in (code,) if code else ("ldpc_200_100", "ldpc_400_100"):
            out.append(_cfg("optimize-aloha", f"aloha{T}_ldpc_{Path(c).stem}",
                            dict(base, K_a=Ka, T=T, model="ldpc", code=c, mode="blind",
                                 table_ebno_db=[6.0, 10.0, 14.0, 18.0, 22.0], patience=4,
                                 **GM_FULL),
                            trials=8 if desk else 1000, seed=seed))
    return out


def _fig1_merge(out: Path):
    """Best code per K_a, as in the LDPC ALOHA curves."""
    for T in (1, 4):
        files = sorted(out.glob(f"aloha{T}_ldpc_*.dat"))
        if not files:
            continue
        data = [read_dat(f)[1] for f in files]
        best = np.min(np.stack([d[:, 1] for d in data]), axis=0)
        emit_dat(list(zip(data[0][:, 0], best)), "KA/EBNO", out / f"aloha{T}_ldpc.dat")


def _fig2(desk: bool, seed: int, code):
    if desk:
        # 10 slots of the [128, 64] code, loads matching 50/150/250 users over 75 slots
        code = code or "ldpc_128_64"
        n1 = load_code(code).n
        geo = dict(n=10 * n1, k=n1 - load_code(code).m, L=10)
        loads, ebno, trials = [7, 20, 33], [10.0, 15.0, 20.0], 4
    else:
        code = code or "ldpc_400_100"
        geo = dict(n=N, k=K, L=N // load_code(code).n)
        loads, ebno, trials = [50, 150, 250], list(np.arange(6.0, 22.1, 2.0)), 1000
    return [_cfg("simulate-frame", f"ka_{Ka}",
                 dict(geo, K_a=Ka, decoder="ldpc", code=code, mode="blind", T=4, patience=4,
                      ebno_db=ebno, decode_empty_slots=not desk, **GM_FULL),
                 trials=trials, seed=seed) for Ka in loads]


def _figK(r: int, desk: bool, seed: int, code):
    code = code or ("ldpc_128_64" if desk else "ldpc_400_100")
    pcm = load_code(code)
    n1, k = pcm.n, pcm.n - pcm.m
    ebno = [6.0, 9.0, 12.0, 15.0, 18.0] if desk else list(np.arange(4.0, 20.1, 1.0))
    trials = 50 if desk else 1000
    dec = dict(code=code, r=r, T=4, ebno_db=ebno, schema="EBNO/FER", patience=4, **GM_FULL)
    names = {"blind": "blind", "known-k": "known_k", "known-h": "known_h_k"}
    out = [_cfg("simulate-slot", names[m], dict(dec, mode=m), trials=trials, seed=seed)
           for m in names]
    out.append(_cfg("bound-fbl-ach", "fbl", dict(n1=n1, k=k, r=r, ebno_db=ebno, schema="EBNO/FER",
                                                 samples=500 if desk else 2000), seed=seed))
    out.append(_cfg("bound-converse", "converse", dict(n=n1, k=k, K_a=[r], ebno_db=ebno,
                                                       samples=10_000 if desk else 100_000),
                    seed=seed))
    return out


def _fig_asymp(eps: float, desk: bool, seed: int):
    mu = np.linspace(0.02, 0.2, 10) if desk else np.linspace(0.005, 0.2, 40)
    return [_cfg("bound-asymptotic", "asymptotic",
                 dict(k=float(K), eps=eps, mu=[float(m) for m in mu]), seed=seed)]


def _fig_hard(desk: bool, seed: int, code):
    code = code or ("ldpc_128_64" if desk else "ldpc_400_100")
    ebno = [10.0, 14.0, 18.0, 22.0] if desk else list(np.arange(8.0, 25.1, 1.0))
    base = dict(code=code, r=4, T=4, mode="blind", ebno_db=ebno, schema="EBNO/FER", patience=4)
    trials = 30 if desk else 1000
    return [_cfg("simulate-slot", "gm_full", dict(base, **GM_FULL), trials=trials, seed=seed),
            _cfg("simulate-slot", "gm_simple", dict(base, **GM_SIMPLE), trials=trials, seed=seed)]


def figure_configs(name: str, scale: str = "desk", seed: int = 0,
                   code: str | None = None) -> list[ExperimentConfig]:
    """Expand a figure name into its experiment configs (``code`` overrides the LDPC code)."""
    if name not in FIGURES:
        raise ConfigError("figure", f"unknown figure {name!r}; expected one of {FIGURES}")
    if scale not in ("desk", "full"):
        raise ConfigError("scale", f"expected desk or full, got {scale!r}")
    desk = scale == "desk"
    if code is not None:
        load_code(code)
    if name == "fig1":
        return _fig1(desk, seed, code)
    if name == "fig2":
        return _fig2(desk, seed, code)
    if name.startswith("figK"):
        return _figK(int(name[4:]), desk, seed, code)
    if name == "fig_asymp1":
        return _fig_asymp(1e-3, desk, seed)
    if name == "fig_asymp2":
        return _fig_asymp(0.1, desk, seed)
    return _fig_hard(desk, seed, code)


def reproduce_figure(name: str, scale: str = "desk", out="figures", workers: int = 1,
                     seed: int = 0, code: str | None = None,
                     trials: int | None = None) -> list[ResultRecord]:
    """Run every config of a figure; data files land in ``out/<name>/``."""
    target = Path(out) / name
    cfgs = figure_configs(name, scale, seed, code)
    recs = []
    for c in cfgs:
        kw = dict(out=str(target), workers=workers)
        if trials is not None:
            kw["trials"] = trials
        recs.append(run(c.replace(**kw)))
    if name == "fig1":
        _fig1_merge(target)
    return recs
