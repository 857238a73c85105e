"""Experiment configuration: YAML in, validated dataclass out, lossless round trip.

Keys carrying physical quantities name their unit (``ebno_db``, ``power_lin``).
Unknown keys anywhere are rejected with the offending key in the error.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable

import yaml

KINDS = ("simulate-frame", "simulate-slot", "bound-fbl-ach", "bound-converse",
         "bound-asymptotic", "optimize-aloha")


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


# ------------------------------------------------------------------ validators

def _int(lo=None):
    def check(key, v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(key, f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            raise ConfigError(key, f"must be >= {lo}")
        return v
    return check


def _num(lo=None, hi=None, open_lo=False):
    def check(key, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(key, f"expected a number, got {v!r}")
        v = float(v)
        if lo is not None and (v < lo or (open_lo and v == lo)):
            raise ConfigError(key, f"must be {'>' if open_lo else '>='} {lo}")
        if hi is not None and v > hi:
            raise ConfigError(key, f"must be <= {hi}")
        return v
    return check


def _opt(inner):
    return lambda key, v: None if v is None else inner(key, v)


def _list(inner, nonempty=True):
    def check(key, v):
        if not isinstance(v, list) or (nonempty and not v):
            raise ConfigError(key, "expected a nonempty list")
        return [inner(f"{key}[{i}]", x) for i, x in enumerate(v)]
    return check


def _choice(*opts):
    def check(key, v):
        if v not in opts:
            raise ConfigError(key, f"expected one of {opts}, got {v!r}")
        return v
    return check


def _str(key, v):
    if not isinstance(v, str):
        raise ConfigError(key, "expected a string")
    return v


def _bool(key, v):
    if not isinstance(v, bool):
        raise ConfigError(key, "expected true/false")
    return v


Spec = dict[str, tuple[Callable[[str, Any], Any], Any]]
REQUIRED = object()

_DECODER: Spec = {
    "code": (_str, REQUIRED),
    "T": (_int(1), 4),
    "outer_iters": (_int(1), 25),
    "inner_iters": (_int(1), 50),
    "attempts": (_int(1), 1),
    "patience": (_opt(_int(1)), None),
    "subset_size": (_opt(_int(1)), None),
    "bp_variant": (_choice("sum-product", "min-sum"), "sum-product"),
    "gm_max_components": (_int(1), 500),
    "gm_merge_distance": (_opt(_num(0)), 1.0),
    "gm_prune_cum_weight": (_num(0, 0.999), 1e-3),
    "gm_sample_count": (_int(1), 20),
}

SCHEMAS: dict[str, Spec] = {
    "simulate-slot": {
        **_DECODER,
        "r": (_int(0), REQUIRED),
        "mode": (_choice("blind", "known-k", "known-h"), "blind"),
        "ebno_db": (_list(_num()), REQUIRED),
        "schema": (_choice("EBNO/PUPE", "EBNO/FER"), "EBNO/PUPE"),
    },
    "simulate-frame": {
        **{k: v for k, v in _DECODER.items() if k != "code"},
        "code": (_opt(_str), None),
        "n": (_int(1), REQUIRED),
        "k": (_int(1), REQUIRED),
        "K_a": (_int(1), REQUIRED),
        "L": (_int(1), REQUIRED),
        "decoder": (_choice("genie", "ldpc", "perfect"), "genie"),
        # empty slots never change PUPE; skipping them only hides false alarms
        "decode_empty_slots": (_bool, True),
        "pe": (_opt(_list(_num(0, 1))), None),
        "mode": (_choice("blind", "known-k", "known-h"), "blind"),
        "ebno_db": (_list(_num()), [0.0]),
    },
    "bound-fbl-ach": {
        "n1": (_int(2), REQUIRED),
        "k": (_int(1), REQUIRED),
        "r": (_int(1), REQUIRED),
        "ebno_db": (_list(_num()), REQUIRED),
        "samples": (_int(10), 2000),
        "method": (_choice("mc", "analytic"), "mc"),
        # P'/P for the analytic form; unset means minimize over a grid
        "design_power_ratio": (_opt(_num(0, 1, open_lo=True)), None),
        "schema": (_choice("EBNO/PUPE", "EBNO/FER"), "EBNO/PUPE"),
    },
    "bound-converse": {
        "n": (_int(2), REQUIRED),
        "k": (_int(1), REQUIRED),
        "K_a": (_list(_int(1)), REQUIRED),
        "eps": (_num(0, 1, open_lo=True), 0.1),
        "samples": (_int(100), 100_000),
        "curves": (_list(_choice("converse", "tin", "shamai-bettesh")), ["converse"]),
        # when given, emit the minimum-error curve over these Eb/N0 values instead
        "ebno_db": (_opt(_list(_num())), None),
    },
    "bound-asymptotic": {
        "k": (_num(1, open_lo=True), 100.0),
        "eps": (_num(0, 1, open_lo=True), 0.1),
        "mu": (_list(_num(0, 1, open_lo=True)), REQUIRED),
        "curves": (_list(_choice("ach", "replica", "conv", "conv_iid")),
                   ["ach", "replica", "conv", "conv_iid"]),
    },
    "optimize-aloha": {
        **{k: v for k, v in _DECODER.items() if k != "code"},
        "code": (_opt(_str), None),
        "mode": (_choice("blind", "known-k", "known-h"), "blind"),
        "table_ebno_db": (_opt(_list(_num())), None),
        "genie": (_bool, True),
        "n": (_int(2), REQUIRED),
        "k": (_int(1), REQUIRED),
        "K_a": (_list(_int(1)), REQUIRED),
        "T": (_int(1), 4),
        "eps": (_num(0, 1, open_lo=True), 0.1),
        "model": (_choice("normal", "fbl", "ldpc"), "normal"),
        "samples": (_int(10), 2000),
        "L_grid": (_opt(_list(_int(1))), None),
        "ebno_min_db": (_num(), -5.0),
        "ebno_max_db": (_num(), 40.0),
        "step_db": (_num(0, open_lo=True), 0.1),
    },
}

TOP: Spec = {
    "kind": (_choice(*KINDS), REQUIRED),
    "seed": (_int(0), 0),
    "trials": (_int(1), 100),
    "out": (_str, "results"),
    "workers": (_int(1), 1),
    "name": (_str, "run"),
    "params": (lambda k, v: v, {}),
}


def _apply(spec: Spec, data: dict, where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(where or "<root>", "expected a mapping")
    out = {}
    for key in data:
        if key not in spec:
            raise ConfigError(f"{where}{key}", "unknown key")
    for key, (check, default) in spec.items():
        if key in data:
            out[key] = check(f"{where}{key}", data[key])
        elif default is REQUIRED:
            raise ConfigError(f"{where}{key}", "missing required key")
        else:
            out[key] = default
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    trials: int = 100
    out: str = "results"
    workers: int = 1
    name: str = "run"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        top = _apply(TOP, data, "")
        params = _apply(SCHEMAS[top["kind"]], top.pop("params") or {}, "params.")
        return cls(params=params, **top)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "seed": self.seed, "trials": self.trials,
                "out": self.out, "workers": self.workers, "params": dict(self.params)}

    def replace(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig.from_dict(d)

    def config_hash(self) -> str:
        """Hash of everything that determines the numbers (not the output path or workers)."""
        d = self.to_dict()
        d.pop("out"), d.pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
