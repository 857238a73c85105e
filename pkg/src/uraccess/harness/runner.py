"""Run an experiment: deterministic parallel Monte-Carlo, checkpoints, data files.

Every trial draws from its own substream ``rng_stream(seed, (point, trial))``,
and per-trial results are reduced in trial order, so the numbers do not
depend on the number of workers.
"""
from __future__ import annotations

import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import aloha, asymptotic, fbl
from ..channel import db2lin, rng_stream
from ..gm import GmConfig
from ..joint_decoder import JointDecoderConfig
from ..ldpc import ParityCheckMatrix, load_parity_matrix, shipped_code, shipped_code_names
from .config import ConfigError, ExperimentConfig
from .datfile import emit_dat

CHECKPOINT_SECONDS = 60.0
BATCHES = 30


class Infeasible(RuntimeError):
    """A requested bound has no feasible operating point."""


@dataclass
class Point:
    curve: str
    x: float
    y: float
    se: float | str                # standard error, or "exact" for deterministic values
    extra: dict = field(default_factory=dict)


@dataclass
class ResultRecord:
    config_hash: str
    revision: str
    kind: str
    seed: int
    points: list[Point]
    files: list[str]
    wall_time_s: float
    infeasible: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)


# ------------------------------------------------------------------ utilities

def source_revision() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from importlib.metadata import PackageNotFoundError, version
    try:
        return "artifact-" + version("artifact")
    except PackageNotFoundError:
        return "unknown"


def batch_means_se(x, batches: int = BATCHES) -> float:
    """Standard error of the mean of ``x`` from contiguous batch means."""
    x = np.asarray(x, float)
    if len(x) < 2:
        return math.nan
    b = min(batches, len(x))
    means = np.array([g.mean() for g in np.array_split(x, b)])
    return float(means.std(ddof=1) / math.sqrt(b))


def load_code(name: str) -> ParityCheckMatrix:
    if name in shipped_code_names():
        return shipped_code(name)
    if os.path.exists(name):
        return load_parity_matrix(name)
    raise ConfigError("params.code", f"no shipped code or file named {name!r}")


def decoder_config(p: dict, T: int | None = None) -> JointDecoderConfig:
    gm = GmConfig(max_components=p["gm_max_components"], merge_distance=p["gm_merge_distance"],
                  prune_cum_weight=p["gm_prune_cum_weight"], sample_count=p["gm_sample_count"])
    return JointDecoderConfig(T=p["T"] if T is None else T, outer_iters=p["outer_iters"],
                              inner_iters=p["inner_iters"], attempts=p["attempts"], gm=gm,
                              subset_size=p["subset_size"], bp_variant=p["bp_variant"],
                              patience=p["patience"])


class _Checkpoint:
    """Single-writer store of finished trial results, flushed every CHECKPOINT_SECONDS."""

    def __init__(self, path: Path | None, key: str):
        self.path, self.key = path, key
        self.data: dict[str, list] = {}
        self.last = time.monotonic()
        if path is not None and path.exists():
            try:
                saved = json.loads(path.read_text())
                if saved.get("key") == key:
                    self.data = saved["stages"]
            except (ValueError, KeyError):
                self.data = {}

    def done(self, stage: str) -> list:
        return self.data.get(stage, [])

    def update(self, stage: str, results: list, force: bool = False):
        self.data[stage] = results
        if self.path is None:
            return
        if force or time.monotonic() - self.last >= CHECKPOINT_SECONDS:
            tmp = self.path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"key": self.key, "stages": self.data}))
            os.replace(tmp, self.path)
            self.last = time.monotonic()


def _pmap(fn, tasks: list, workers: int, ckpt: _Checkpoint, stage: str) -> list:
    """Ordered map with resume from and periodic writes to the checkpoint."""
    results = list(ckpt.done(stage))
    todo = tasks[len(results):]
    if not todo:
        return results
    if workers <= 1:
        for t in todo:
            results.append(fn(t))
            ckpt.update(stage, results)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for r in ex.map(fn, todo, chunksize=max(1, len(todo) // (8 * workers))):
                results.append(r)
                ckpt.update(stage, results)
    ckpt.update(stage, results, force=True)
    return results


# ------------------------------------------------------------------ trial kernels (picklable)

def _freeze(p: dict) -> tuple:
    return tuple(sorted((k, tuple(v) if isinstance(v, list) else v) for k, v in p.items()))


@lru_cache(maxsize=16)
def _slot_decoder(frozen: tuple, mode: str, T: int | None):
    p = dict(frozen)
    pcm = load_code(p["code"])
    k = pcm.n - pcm.m
    return aloha.LdpcSlotDecoder(pcm, k, decoder_config(p, T), mode), pcm, k


def _slot_trial(task):
    frozen, seed, i, t, ebno, r, mode = task
    dec, pcm, k = _slot_decoder(frozen, mode, None)
    rng = rng_stream(seed, (*i, t) if isinstance(i, tuple) else (i, t))
    P = float(db2lin(ebno)) * k / pcm.n
    msgs = aloha.draw_messages(r, k, rng)
    cws, res = dec.simulate(msgs, P, rng)
    hits = sum(res.contains(c) for c in cws)
    return [r - hits, res.estimated_user_count - hits, int(res.estimated_user_count > r)]


def _frame_trial(task):
    frozen, seed, i, t, ebno = task
    p = dict(frozen)
    P = float(db2lin(ebno)) * p["k"] / p["n"]
    fc = aloha.FrameConfig(n=p["n"], L=p["L"], K_a=p["K_a"], T=p["T"], k=p["k"], P=P)
    if p["decoder"] == "genie":
        dec = aloha.GenieTableDecoder(list(p["pe"]), p["T"])
    elif p["decoder"] == "perfect":
        dec = aloha.PerfectDecoder()
    else:
        dec, pcm, _ = _slot_decoder(frozen, p["mode"], None)
        dec.decodes_empty_slots = p["decode_empty_slots"]
    res = aloha.run_frame(fc, dec, rng_stream(seed, (i, t)))
    return [res.pupe, sum(s.false_alarms for s in res.tallies)]


def _fbl_point(task):
    n1, k, r, ebno, samples, method, ratio, seed, i = task
    P = float(db2lin(ebno)) * k / n1
    rng = rng_stream(seed, i)
    if method == "mc":
        return fbl.slot_pe_mc(n1, k, r, P, samples, rng)
    return fbl.slot_pe_analytic(n1, k, r, P, ratio, 100_000, rng)


def _converse_point(task):
    curve, n, k, Ka, eps, samples, seed = task
    if curve == "converse":
        return fbl.converse_min_ebno_db(n, k, Ka, eps, samples, seed)
    if curve == "tin":
        return fbl.tin_min_ebno_db(n, k, Ka, eps, samples, seed)
    return fbl.shamai_bettesh(Ka, n, k, eps)


def _converse_eps_point(task):
    n, k, Ka, ebno, samples, seed = task
    return fbl.converse_min_eps(n, k, Ka, float(db2lin(ebno)) * k / n, samples, seed)


def _asym_point(task):
    curve, mu, k, eps = task
    p = asymptotic.AsymptoticParams(mu, k, eps)
    fn = {"ach": asymptotic.ach_projection, "replica": asymptotic.replica_optimal,
          "conv": asymptotic.conv, "conv_iid": asymptotic.conv_iid}[curve]
    return float(fn(p).ebno_db)


def _aloha_kwargs(p: dict) -> dict:
    return dict(L_grid=p["L_grid"], ebno_range_db=(p["ebno_min_db"], p["ebno_max_db"]),
                step_db=p["step_db"], genie=p["genie"])


def _aloha_point(task):
    frozen, Ka, seed = task
    p = dict(frozen)
    normal = aloha.NormalApproxModel(p["k"], seed=seed)
    if p["model"] == "normal":
        op = aloha.optimize_operating_point(p["n"], p["k"], Ka, p["T"], p["eps"], normal,
                                            **_aloha_kwargs(p))
    else:
        op = aloha.optimize_two_stage(p["n"], p["k"], Ka, p["T"], p["eps"], normal,
                                      aloha.FblSlotModel(p["k"], p["samples"], seed),
                                      **_aloha_kwargs(p))
    return [op.ebno_db if op.feasible else math.inf, op.L or 0]


# ------------------------------------------------------------------ experiment kinds

def _slot(cfg, ckpt, out):
    p = cfg.params
    load_code(p["code"])
    frozen = _freeze(p)
    pts, rows = [], []
    for i, eb in enumerate(p["ebno_db"]):
        tasks = [(frozen, cfg.seed, i, t, eb, p["r"], p["mode"]) for t in range(cfg.trials)]
        res = np.array(_pmap(_slot_trial, tasks, cfg.workers, ckpt, f"slot-{i}"), float)
        miss, fa, over = res[:, 0], res[:, 1], res[:, 2]
        r = p["r"]
        pupe = float(miss.sum() / (r * cfg.trials)) if r else 0.0
        se = batch_means_se(miss / r) if r else math.nan
        pts.append(Point(cfg.name, eb, pupe, se, {
            "slot_failure": float(np.mean(miss > 0)), "false_alarms": int(fa.sum()),
            "list_overflow": int(over.sum()), "trials": cfg.trials}))
        rows.append((eb, pupe))
    return pts, [emit_dat(rows, p.get("schema", "EBNO/PUPE"), out / f"{cfg.name}.dat")]


def _frame(cfg, ckpt, out):
    p = cfg.params
    if p["decoder"] == "genie" and p["pe"] is None:
        raise ConfigError("params.pe", "genie decoder needs a per-r error table")
    if p["decoder"] == "ldpc":
        if p["code"] is None:
            raise ConfigError("params.code", "ldpc decoder needs a code")
        if load_code(p["code"]).n != p["n"] // p["L"]:
            raise ConfigError("params.L", "n // L must equal the code length")
    frozen = _freeze(p)
    pts, rows = [], []
    for i, eb in enumerate(p["ebno_db"]):
        tasks = [(frozen, cfg.seed, i, t, eb) for t in range(cfg.trials)]
        res = np.array(_pmap(_frame_trial, tasks, cfg.workers, ckpt, f"frame-{i}"), float)
        pupe = float(res[:, 0].mean())
        extra = {"false_alarms": int(res[:, 1].sum()), "trials": cfg.trials}
        if p["decoder"] == "genie":
            extra["epsilon_T_genie"] = aloha.epsilon_T_genie(p["K_a"], p["L"], p["T"], 2 ** p["k"], p["pe"])
        pts.append(Point(cfg.name, eb, pupe, batch_means_se(res[:, 0]), extra))
        rows.append((eb, pupe))
    return pts, [emit_dat(rows, "EBNO/PUPE", out / f"{cfg.name}.dat")]


def _fbl_ach(cfg, ckpt, out):
    p = cfg.params
    tasks = [(p["n1"], p["k"], p["r"], eb, p["samples"], p["method"], p["design_power_ratio"],
              cfg.seed, i) for i, eb in enumerate(p["ebno_db"])]
    vals = _pmap(_fbl_point, tasks, cfg.workers, ckpt, "fbl")
    pts = [Point(cfg.name, eb, v, "exact") for eb, v in zip(p["ebno_db"], vals)]
    rows = list(zip(p["ebno_db"], vals))
    return pts, [emit_dat(rows, p.get("schema", "EBNO/PUPE"), out / f"{cfg.name}.dat")]


def _converse(cfg, ckpt, out):
    p = cfg.params
    pts, files = [], []
    if p.get("ebno_db"):
        # error-probability curve over Eb/N0 for each K_a
        for Ka in p["K_a"]:
            tasks = [(p["n"], p["k"], Ka, eb, p["samples"], cfg.seed) for eb in p["ebno_db"]]
            vals = _pmap(_converse_eps_point, tasks, cfg.workers, ckpt, f"conv-eps-{Ka}")
            pts += [Point(f"converse_K{Ka}", eb, v, "exact") for eb, v in zip(p["ebno_db"], vals)]
            name = cfg.name if len(p["K_a"]) == 1 else f"{cfg.name}_K{Ka}"
            files.append(emit_dat(list(zip(p["ebno_db"], vals)), "EBNO/FER", out / f"{name}.dat"))
        return pts, files
    for curve in p["curves"]:
        tasks = [(curve, p["n"], p["k"], Ka, p["eps"], p["samples"], cfg.seed) for Ka in p["K_a"]]
        vals = _pmap(_converse_point, tasks, cfg.workers, ckpt, f"conv-{curve}")
        pts += [Point(curve, Ka, v, "exact") for Ka, v in zip(p["K_a"], vals)]
        files.append(emit_dat(list(zip(p["K_a"], vals)), "KA/EBNO",
                              out / f"{curve.replace('-', '_')}.dat"))
    return pts, files


def _asym(cfg, ckpt, out):
    p = cfg.params
    pts, files = [], []
    for curve in p["curves"]:
        tasks = [(curve, mu, p["k"], p["eps"]) for mu in p["mu"]]
        vals = _pmap(_asym_point, tasks, cfg.workers, ckpt, f"asym-{curve}")
        pts += [Point(curve, mu, v, "exact") for mu, v in zip(p["mu"], vals)]
        files.append(emit_dat([(v, mu) for mu, v in zip(p["mu"], vals)], "EPS/MU",
                              out / f"{curve}.dat"))
    return pts, files


def _ldpc_table(cfg, ckpt, pcm) -> aloha.TableModel:
    """Measured slot error curves for r = 0..T at the table's slot Eb/N0 values."""
    p = cfg.params
    frozen = _freeze(p)
    grid = p["table_ebno_db"]
    pe, qe = {}, {}
    rs = range(0 if p["mode"] == "blind" and not p["genie"] else 1, p["T"] + 1)
    for r in rs:
        pe_r, qe_r = [], []
        for i, eb in enumerate(grid):
            tasks = [(frozen, cfg.seed, (r, i), t, eb, r, p["mode"]) for t in range(cfg.trials)]
            res = np.array(_pmap(_slot_trial, tasks, cfg.workers, ckpt, f"table-{r}-{i}"), float)
            pe_r.append(res[:, 0].sum() / (r * cfg.trials) if r else 0.0)
            qe_r.append(res[:, 2].mean())
        pe[r], qe[r] = np.array(pe_r), np.array(qe_r)
    return aloha.TableModel(pcm.n, pcm.n - pcm.m, np.asarray(grid, float), pe, qe)


def _optimize(cfg, ckpt, out):
    p = cfg.params
    if p["model"] == "ldpc":
        if p["code"] is None or p["table_ebno_db"] is None:
            raise ConfigError("params.code", "ldpc model needs a code and table_ebno_db")
        pcm = load_code(p["code"])
        if pcm.n - pcm.m != p["k"]:
            raise ConfigError("params.k", f"code {p['code']} carries {pcm.n - pcm.m} bits")
        L = p["n"] // pcm.n
        if L < 1 or p["n"] // L != pcm.n:
            raise ConfigError("params.n", f"no slot count gives slots of length {pcm.n}")
        table = _ldpc_table(cfg, ckpt, pcm)
        vals = []
        for Ka in p["K_a"]:
            kw = _aloha_kwargs(p)
            kw["L_grid"] = [L]
            op = aloha.optimize_operating_point(p["n"], p["k"], Ka, p["T"], p["eps"], table, **kw)
            vals.append([op.ebno_db if op.feasible else math.inf, op.L or 0])
    else:
        tasks = [(_freeze(p), Ka, cfg.seed) for Ka in p["K_a"]]
        vals = _pmap(_aloha_point, tasks, cfg.workers, ckpt, "aloha")
    pts = [Point(cfg.name, Ka, v[0], "exact", {"L": int(v[1])}) for Ka, v in zip(p["K_a"], vals)]
    rows = [(Ka, v[0]) for Ka, v in zip(p["K_a"], vals)]
    return pts, [emit_dat(rows, "KA/EBNO", out / f"{cfg.name}.dat")]


KIND_RUNNERS = {
    "simulate-slot": _slot,
    "simulate-frame": _frame,
    "bound-fbl-ach": _fbl_ach,
    "bound-converse": _converse,
    "bound-asymptotic": _asym,
    "optimize-aloha": _optimize,
}


def run(cfg: ExperimentConfig, checkpoint: bool = True) -> ResultRecord:
    """Execute ``cfg``; writes data files and ``<name>.json`` under ``cfg.out``."""
    t0 = time.monotonic()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    ckpt = _Checkpoint(out / f".{cfg.name}.ckpt.json" if checkpoint else None, h)
    pts, files = KIND_RUNNERS[cfg.kind](cfg, ckpt, out)
    infeasible = cfg.kind.startswith(("bound", "optimize")) and any(
        not math.isfinite(q.y) for q in pts)
    rec = ResultRecord(h, source_revision(), cfg.kind, cfg.seed, pts, [str(f) for f in files],
                       time.monotonic() - t0, infeasible)
    (out / f"{cfg.name}.json").write_text(rec.to_json())
    if ckpt.path is not None and ckpt.path.exists():
        ckpt.path.unlink()
    return rec
