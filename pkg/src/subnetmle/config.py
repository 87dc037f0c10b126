"""Experiment configuration: a single JSON document with a schema_version field.

Edges are listed as {"from": vertex, "to": system, "sign": +-1} with 1-based
indices; "from" is the emitting system for coupling edges and the exogenous
signal index for input edges.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .network import ArmaxParams, NetworkModel, Partition, Topology, validate

SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    name: str
    network: NetworkModel
    partition: Partition
    observed: tuple[str, ...]
    orders: tuple[tuple[int, int, int], ...]
    samples: int
    seeds: dict[str, int]
    input_law: dict
    lambda_modes: tuple[str, str, str] = ("shared", "shared", "free")
    estimation: dict = field(default_factory=dict)
    monte_carlo: dict = field(default_factory=dict)
    export_noise: bool = False
    raw: dict = field(default_factory=dict)

    @property
    def sha256(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _edges_to_matrix(edges, rows: int, cols: int, name: str) -> np.ndarray:
    mat = np.zeros((rows, cols))
    seen = set()
    for edge in edges:
        try:
            src, dst, sign = int(edge["from"]), int(edge["to"]), int(edge.get("sign", 1))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed {name} edge {edge!r}") from exc
        if not (1 <= src <= cols and 1 <= dst <= rows):
            raise ConfigError(f"{name} edge {edge!r} out of range")
        if sign not in (-1, 1):
            raise ConfigError(f"{name} edge {edge!r} must have sign +-1")
        if (src, dst) in seen:
            raise ConfigError(f"duplicate {name} edge {edge!r}")
        seen.add((src, dst))
        mat[dst - 1, src - 1] = sign
    return mat


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {raw.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    try:
        net = raw["network"]
        m = len(net["systems"])
        q = int(net["q"])
        upsilon = _edges_to_matrix(net.get("upsilon_edges", []), m, m, "coupling")
        omega = _edges_to_matrix(net.get("omega_edges", []), m, q, "input")
        topology = Topology(m=m, q=q, upsilon=upsilon, omega=omega)
        validate(topology)
        systems = tuple(
            ArmaxParams(
                a=np.asarray(s.get("a", []), dtype=float),
                b=np.asarray(s.get("b", []), dtype=float),
                c=np.asarray(s.get("c", []), dtype=float),
                noise_var=float(s.get("noise_var", 1.0)),
            )
            for s in net["systems"]
        )
        network = NetworkModel(topology=topology, systems=systems)
        part = raw["partition"]
        partition = Partition(
            set_a=tuple(part["set_a"]),
            set_b=tuple(part.get("set_b", [])),
            set_c=tuple(part.get("set_c", [])),
        )
        partition.validate_cover(m)
        observed = tuple(raw["observed"])
        orders = tuple(tuple(o) for o in raw["orders"])
        if len(orders) != len(partition.set_a):
            raise ConfigError("one (n_a, n_b, n_c) order triple per target system required")
        samples = int(raw["samples"])
        seeds = {k: int(v) for k, v in raw["seeds"].items()}
        if "estimation" not in seeds:
            raise ConfigError("seeds must include an 'estimation' entry")
        input_law = dict(raw.get("input_law", {"kind": "rademacher"}))
        est = dict(raw.get("estimation", {}))
        modes = tuple(est.get("lambda_modes", ("shared", "shared", "free")))
    except KeyError as exc:
        raise ConfigError(f"missing configuration key {exc}") from exc
    return ExperimentConfig(
        name=str(raw.get("name", path.stem)),
        network=network,
        partition=partition,
        observed=observed,
        orders=orders,
        samples=samples,
        seeds=seeds,
        input_law=input_law,
        lambda_modes=modes,
        estimation=est,
        monte_carlo=dict(raw.get("monte_carlo", {})),
        export_noise=bool(raw.get("export_noise", False)),
        raw=raw,
    )
