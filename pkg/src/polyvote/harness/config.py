"""Experiment configuration: defaults, JSON files and dotted overrides.

A config is a JSON object with top-level keys ``experiment``, ``protocol``,
``market``, ``policies``, ``mc`` and ``output``. Missing fields take the
defaults below; ``experiment`` and ``protocol`` defaults depend on the
experiment kind.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from ..chain import InvalidStateError, ProtocolParams
from ..trading import BidderPolicy, MarketParams, NoiseSpec, StopRule, Strategy
from .streams import env_seed

KINDS = ("simulate", "tails", "roots", "phase", "trade", "fluid", "oracle-check")

BASE_DEFAULTS = {
    "experiment": {},
    "protocol": {"alpha": 1.0, "stakes": [5.0]},
    "market": {
        "r_free": 0.05,
        "r_cryp": 0.05,
        "p0": 1.0,
        "price_model": "calibrated",
        "noise": {"kind": "lognormal", "sigma": 0.05},
    },
    "policies": [
        {"strategy": {"kind": "non-participation"}},
        {"strategy": {"kind": "no-trading"}},
        {"strategy": {"kind": "proportional-sell", "rate": 0.1}},
        {"strategy": {"kind": "periodic-buy", "amount": 1.0, "period": 3}},
        {"strategy": {"kind": "random-feasible", "intensity": 0.5}},
    ],
    "mc": {"reps": 1000, "seed": 20240601, "threads": 1},
    "output": {"csv": None, "json": None, "timing": False},
}

KIND_DEFAULTS = {
    "simulate": {"experiment": {"horizon": 8000, "times": None, "stride": None, "bins": 40}},
    "tails": {
        "experiment": {
            "times": [1000, 2000, 4000, 8000],
            "lambdas": [0.5, 1.0, 1.2, 1.6, 1.8, 2.2 ** 0.5, 3.0],
            "epsilon": 0.1,
        },
    },
    "roots": {"experiment": {}},
    "phase": {
        "experiment": {
            "alphas": [0.0, 1.0],
            "ladder": [200, 800, 3200],
            "horizon_factor": 50.0,
            "epsilon": 0.1,
            "classes": {"large_fraction": 0.1, "medium_stake": 2.0, "small_exponent": 0.5},
            "doubling_check": False,
        },
    },
    "trade": {
        "experiment": {"terminal_time": 20, "delta_ratio": 1.0, "focal": 0},
        "protocol": {"stakes": [10.0, 90.0]},
    },
    "fluid": {
        "experiment": {"alphas": [0.5, 1.0, 2.0], "ladder": [100, 1000, 10000], "refine": 8},
        "protocol": {"stakes": [1.0]},
        "mc": {"reps": 200},
    },
    "oracle-check": {
        "experiment": {"horizon": 20, "tv_tol": 0.01},
        "protocol": {"stakes": [1.0]},
        "mc": {"reps": 100000},
    },
}


class ConfigError(ValueError):
    """Malformed, missing or inconsistent configuration."""


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def defaults_for(kind: str) -> dict:
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    return deep_merge(BASE_DEFAULTS, KIND_DEFAULTS[kind])


def load_file(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def parse_value(text: str):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(cfg: dict, path: str, value) -> None:
    keys = path.split(".")
    if keys[0] not in BASE_DEFAULTS:
        raise ConfigError(f"unknown config section {keys[0]!r} in override {path!r}")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


@dataclass
class ExperimentConfig:
    """Validated view of a raw config dict; ``raw`` is echoed into reports."""

    kind: str
    raw: dict
    protocol: ProtocolParams
    market: MarketParams
    policies: list[BidderPolicy]
    reps: int
    seed: int
    threads: int

    @property
    def experiment(self) -> dict:
        return self.raw["experiment"]

    @property
    def output(self) -> dict:
        return self.raw["output"]

    def echo(self) -> dict:
        """Config echo for reports, minus fields that cannot change results."""
        out = copy.deepcopy(self.raw)
        out.pop("output", None)
        out["mc"].pop("threads", None)
        return out


def _policy(spec: dict, exp: dict, market: MarketParams) -> BidderPolicy:
    if not isinstance(spec, dict):
        raise ConfigError(f"policy entries must be objects, got {spec!r}")
    strat = Strategy(**spec.get("strategy", {}))
    stop = StopRule(**spec.get("stop", {}))
    if "delta" in spec:
        delta = float(spec["delta"])
    else:
        ratio = float(spec.get("delta_ratio", exp.get("delta_ratio", 1.0)))
        delta = ratio / (1.0 + market.r_cryp)
    T = int(spec.get("terminal_time", exp.get("terminal_time", 20)))
    return BidderPolicy(delta, T, strat, stop, spec.get("name"))


def build(kind: str, user: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge defaults, file contents and overrides, then validate.

    ``POLYVOTE_SEED`` replaces the file's seed; an explicit override wins
    over both.
    """
    cfg = defaults_for(kind)
    for layer in (user or {}, overrides or {}):
        for section in layer:
            if section not in BASE_DEFAULTS:
                raise ConfigError(f"unknown config section {section!r}")
        cfg = deep_merge(cfg, layer)
    file_kind = cfg["experiment"].get("kind")
    if file_kind not in (None, kind):
        raise ConfigError(f"config is for experiment {file_kind!r}, not {kind!r}")
    cfg["experiment"]["kind"] = kind
    try:
        explicit = "seed" in (overrides or {}).get("mc", {})
        seed = cfg["mc"]["seed"] if explicit else env_seed(cfg["mc"]["seed"])
        cfg["mc"]["seed"] = seed
        reps, threads = int(cfg["mc"]["reps"]), int(cfg["mc"]["threads"])
        if reps < 1:
            raise ConfigError("mc.reps must be >= 1")
        if threads < 1:
            raise ConfigError("mc.threads must be >= 1")
        if int(seed) < 0:
            raise ConfigError("mc.seed must be >= 0")
        proto = cfg["protocol"]
        params = ProtocolParams(proto["alpha"], proto["stakes"])
        m = cfg["market"]
        market = MarketParams(
            float(m["r_free"]), float(m["r_cryp"]), float(m["p0"]), m["price_model"], NoiseSpec(**m["noise"])
        )
        policies = [_policy(p, cfg["experiment"], market) for p in cfg["policies"]]
    except ConfigError:
        raise
    except (InvalidStateError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return ExperimentConfig(kind, cfg, params, market, policies, reps, int(seed), threads)
