"""Run configuration: an INI file describing field, corpus, training, and
evaluation settings for the command-line pipeline.

Unknown sections or keys are rejected so typos fail fast; every value is
type-checked with a message naming the offending entry.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

from .training import TrainConfig

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class NetworkSpec:
    kind: str          # fon | fixed | variable | flowhon
    order: int
    trained: bool      # one transition-optimization pass (or full training)

    @property
    def slug(self) -> str:
        base = self.kind if self.kind == "fon" else f"{self.kind}{self.order}"
        if self.trained and self.kind != "flowhon":
            base += "+"
        return base


@dataclass
class RunConfig:
    # field
    field_kind: str = "abc"
    coefficients: tuple = (math.sqrt(3.0), math.sqrt(2.0), 1.0)
    bounds: tuple = ((0.0, 0.0, 0.0), (TWO_PI, TWO_PI, TWO_PI))
    value: tuple = (1.0, 0.0, 0.0)
    grid_dims: tuple = (64, 64, 64)
    grid_file: str = ""
    # blocks
    nblocks: tuple = (6, 6, 6)
    # corpus
    n_train: int = 10000
    n_validation: int = 5000
    n_test: int = 15000
    step: float | None = None
    max_steps: int = 1000
    zero_tol: float | None = None
    seed: int = 7
    # training
    train: TrainConfig = field(default_factory=TrainConfig)
    # networks
    networks: list = field(default_factory=lambda: [
        NetworkSpec("fon", 1, False), NetworkSpec("fon", 1, True),
        NetworkSpec("fixed", 3, False), NetworkSpec("variable", 3, False),
        NetworkSpec("flowhon", 3, True)])
    start_mode: str = "approximate"
    # evaluation
    eval_horizon: int = 8
    eval_epsilon: float = 1e-8
    # sweep
    sweep_lo: float = 0.5
    sweep_hi: float = 3.5
    sweep_step: float = 0.1
    teleport: float = 0.15
    # export
    export_streamlines: int = 100
    export_max_points: int = 500
    export_min_probability: float = 1e-6
    export_markov_time: float | None = None


_FIELD_KINDS = ("abc", "swirl", "constant", "grid")
_NETWORK_KINDS = ("fon", "fixed", "variable", "flowhon")

_SCHEMA: dict[str, tuple[str, ...]] = {
    "field": ("kind", "coefficients", "bounds", "value", "grid_dims", "grid_file"),
    "blocks": ("nblocks",),
    "corpus": ("train", "validation", "test", "step", "max_steps", "zero_tol", "seed"),
    "train": ("horizon", "iterations", "learning_rate", "decay", "decay_every",
              "epsilon", "patience_assign", "patience_val", "max_outer",
              "cluster_threshold"),
    "networks": ("kinds", "start_mode"),
    "eval": ("horizon", "epsilon"),
    "sweep": ("lo", "hi", "step", "teleport"),
    "export": ("streamlines", "max_points", "min_probability", "markov_time"),
}


def _floats(raw: str, n: int, where: str) -> tuple:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != n:
        raise ConfigError(f"{where}: expected {n} comma-separated values, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e


def _ints(raw: str, n: int, where: str) -> tuple:
    vals = _floats(raw, n, where)
    out = tuple(int(v) for v in vals)
    if any(o != v for o, v in zip(out, vals)):
        raise ConfigError(f"{where}: expected integers")
    return out


def _get(parser, section, key, cast, where, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    if raw == "":
        return default
    try:
        return cast(raw)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from e


def parse_network_spec(token: str) -> NetworkSpec:
    token = token.strip()
    if not token:
        raise ConfigError("empty network spec")
    trained = False
    kind, _, order_s = token.partition(":")
    if kind.endswith("+"):
        trained = True
        kind = kind[:-1]
    if kind not in _NETWORK_KINDS:
        raise ConfigError(f"unknown network kind {kind!r} (choose from {_NETWORK_KINDS})")
    if kind == "fon":
        if order_s:
            raise ConfigError("fon takes no order (it is first-order by definition)")
        order = 1
    else:
        if not order_s:
            raise ConfigError(f"{kind} needs an order, e.g. {kind}:3")
        try:
            order = int(order_s)
        except ValueError as e:
            raise ConfigError(f"bad order in network spec {token!r}") from e
        if not 1 <= order <= 4:
            raise ConfigError(f"network order must be in 1..4, got {order}")
    if kind == "flowhon":
        trained = True
    return NetworkSpec(kind, order, trained)


def parse_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}] "
                              f"(valid: {', '.join(sorted(_SCHEMA))})")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}] "
                                  f"(valid: {', '.join(_SCHEMA[section])})")

    cfg = RunConfig()

    cfg.field_kind = _get(parser, "field", "kind", str, "", cfg.field_kind)
    if cfg.field_kind not in _FIELD_KINDS:
        raise ConfigError(f"[field] kind: unknown kind {cfg.field_kind!r} "
                          f"(choose from {_FIELD_KINDS})")
    cfg.coefficients = _get(parser, "field", "coefficients",
                            lambda r: _floats(r, 3, "[field] coefficients"), "",
                            cfg.coefficients)
    if parser.has_option("field", "bounds"):
        v = _floats(parser.get("field", "bounds"), 6, "[field] bounds")
        lo, hi = v[:3], v[3:]
        if any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError("[field] bounds: upper bound must exceed lower bound")
        cfg.bounds = (lo, hi)
    elif cfg.field_kind in ("swirl", "constant"):
        cfg.bounds = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    cfg.value = _get(parser, "field", "value",
                     lambda r: _floats(r, 3, "[field] value"), "", cfg.value)
    cfg.grid_dims = _get(parser, "field", "grid_dims",
                         lambda r: _ints(r, 3, "[field] grid_dims"), "", cfg.grid_dims)
    cfg.grid_file = _get(parser, "field", "grid_file", str, "", cfg.grid_file)
    if cfg.field_kind == "grid" and not cfg.grid_file:
        raise ConfigError("[field] grid_file is required when kind = grid")
    if cfg.field_kind == "grid" and cfg.grid_file and not os.path.isabs(cfg.grid_file):
        cfg.grid_file = os.path.join(os.path.dirname(os.path.abspath(path)),
                                     cfg.grid_file)

    cfg.nblocks = _get(parser, "blocks", "nblocks",
                       lambda r: _ints(r, 3, "[blocks] nblocks"), "", cfg.nblocks)
    if any(n < 1 for n in cfg.nblocks):
        raise ConfigError("[blocks] nblocks: each axis needs at least one block")

    cfg.n_train = _get(parser, "corpus", "train", int, "", cfg.n_train)
    cfg.n_validation = _get(parser, "corpus", "validation", int, "", cfg.n_validation)
    cfg.n_test = _get(parser, "corpus", "test", int, "", cfg.n_test)
    cfg.step = _get(parser, "corpus", "step", float, "", cfg.step)
    cfg.max_steps = _get(parser, "corpus", "max_steps", int, "", cfg.max_steps)
    cfg.zero_tol = _get(parser, "corpus", "zero_tol", float, "", cfg.zero_tol)
    cfg.seed = _get(parser, "corpus", "seed", int, "", cfg.seed)
    for name, v in (("train", cfg.n_train), ("validation", cfg.n_validation),
                    ("test", cfg.n_test)):
        if v < 1:
            raise ConfigError(f"[corpus] {name}: needs at least one particle")
    if cfg.max_steps < 1:
        raise ConfigError("[corpus] max_steps must be positive")

    t = cfg.train
    t.horizon = _get(parser, "train", "horizon", int, "", t.horizon)
    t.iterations = _get(parser, "train", "iterations", int, "", t.iterations)
    t.learning_rate = _get(parser, "train", "learning_rate", float, "", t.learning_rate)
    t.decay = _get(parser, "train", "decay", float, "", t.decay)
    t.decay_every = _get(parser, "train", "decay_every", int, "", t.decay_every)
    t.epsilon = _get(parser, "train", "epsilon", float, "", t.epsilon)
    t.patience_assign = _get(parser, "train", "patience_assign", int, "", t.patience_assign)
    t.patience_val = _get(parser, "train", "patience_val", int, "", t.patience_val)
    t.max_outer = _get(parser, "train", "max_outer", int, "", t.max_outer)
    t.cluster_threshold = _get(parser, "train", "cluster_threshold", float, "",
                               t.cluster_threshold)

    if parser.has_option("networks", "kinds"):
        tokens = [tok for tok in parser.get("networks", "kinds").split(",") if tok.strip()]
        if not tokens:
            raise ConfigError("[networks] kinds: no network specified")
        cfg.networks = [parse_network_spec(tok) for tok in tokens]
    cfg.start_mode = _get(parser, "networks", "start_mode", str, "", cfg.start_mode)
    if cfg.start_mode not in ("approximate", "exact"):
        raise ConfigError("[networks] start_mode must be approximate or exact")

    cfg.eval_horizon = _get(parser, "eval", "horizon", int, "", cfg.eval_horizon)
    cfg.eval_epsilon = _get(parser, "eval", "epsilon", float, "", cfg.eval_epsilon)

    cfg.sweep_lo = _get(parser, "sweep", "lo", float, "", cfg.sweep_lo)
    cfg.sweep_hi = _get(parser, "sweep", "hi", float, "", cfg.sweep_hi)
    cfg.sweep_step = _get(parser, "sweep", "step", float, "", cfg.sweep_step)
    cfg.teleport = _get(parser, "sweep", "teleport", float, "", cfg.teleport)
    if cfg.sweep_step <= 0 or cfg.sweep_hi < cfg.sweep_lo:
        raise ConfigError("[sweep] needs step > 0 and hi >= lo")

    cfg.export_streamlines = _get(parser, "export", "streamlines", int, "",
                                  cfg.export_streamlines)
    cfg.export_max_points = _get(parser, "export", "max_points", int, "",
                                 cfg.export_max_points)
    cfg.export_min_probability = _get(parser, "export", "min_probability", float, "",
                                      cfg.export_min_probability)
    cfg.export_markov_time = _get(parser, "export", "markov_time", float, "",
                                  cfg.export_markov_time)
    return cfg
