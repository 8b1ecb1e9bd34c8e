"""Run configuration: parsing, validation and turning a config into a runnable experiment.

Configs are YAML files mirroring :class:`RunSpec`. ``RunSpec.from_dict`` and
``RunSpec.to_dict`` round-trip field for field.
"""

from __future__ import annotations

import copy
import itertools
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .analysis import TheoremInputs, TheoremOutputs, default_D, estimate_sigma, theorem1_params
from .compression import CompressorSpec
from .engine import RoundConfig, initial_model
from .numerics import Domain
from .problems import (FederatedProblem, build_np_classification, build_synthetic_linear_ball,
                       load_csv, make_np_synthetic)
from .switching import SwitchMode


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


PROBLEM_KINDS = ("np_csv", "np_synthetic", "linear_ball")


@dataclass
class ProblemSpec:
    kind: str = "np_synthetic"
    # np_csv
    path: str | None = None
    # np_synthetic
    rows: int = 400
    d_feat: int = 30
    class_balance: float = 0.5
    separation: float = 2.0
    data_seed: int = 0
    # np_*
    partition_seed: int = 0
    heterogeneous: bool = False
    batch_size: int | None = None
    domain: dict | None = None
    # linear_ball
    d: int = 2
    c: list | None = None
    r: float = 1.0
    half_width: float = 2.0
    heterogeneity: float = 0.5
    problem_seed: int = 0


@dataclass
class RoundSpec:
    T: int = 500
    E: int = 5
    n: int = 20
    m: int | None = None
    participation: float | None = None
    seed: int = 0
    workers: int = 1


@dataclass
class SwitchSpec:
    mode: str = "hard"
    beta: float | None = None


@dataclass
class LinkSpec:
    kind: str = "identity"
    k: int | None = None
    ratio: float | None = None
    bits: int | None = None
    q: float | None = None


@dataclass
class CompressionSpec:
    enabled: bool = False
    uplink: LinkSpec = field(default_factory=LinkSpec)
    downlink: LinkSpec = field(default_factory=LinkSpec)


@dataclass
class ParamSpec:
    mode: str = "manual"
    eta: float | None = None
    epsilon: float | None = None
    D: float | None = None
    G: float | None = None
    q: float | None = None
    q0: float | None = None
    sigma: Any = None
    delta: float | None = None
    regime: str | None = None


@dataclass
class RunSpec:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    rounds: RoundSpec = field(default_factory=RoundSpec)
    switch: SwitchSpec = field(default_factory=SwitchSpec)
    compression: CompressionSpec = field(default_factory=CompressionSpec)
    params: ParamSpec = field(default_factory=ParamSpec)
    sweep: dict | None = None
    output_dir: str = "runs/default"
    snapshot_cadence: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "RunSpec":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        spec = _build(cls, raw, "")
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "RunSpec":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"{path} is not valid YAML: {exc}") from None
        return cls.from_dict(raw or {})

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def validate(self) -> None:
        p, r, s, c, prm = self.problem, self.rounds, self.switch, self.compression, self.params
        if p.kind not in PROBLEM_KINDS:
            raise ConfigError("problem.kind", f"must be one of {PROBLEM_KINDS}, got {p.kind!r}")
        if p.kind == "np_csv" and not p.path:
            raise ConfigError("problem.path", "np_csv needs a dataset path")
        if p.kind == "linear_ball" and p.c is not None and len(p.c) != p.d:
            raise ConfigError("problem.c", f"expected {p.d} entries, got {len(p.c)}")
        if r.T < 0:
            raise ConfigError("rounds.T", "must be >= 0")
        if r.E < 1:
            raise ConfigError("rounds.E", "must be >= 1")
        if r.n < 1:
            raise ConfigError("rounds.n", "must be >= 1")
        if r.m is not None and r.participation is not None:
            raise ConfigError("rounds.m", "give either m or participation, not both")
        if r.participation is not None and not 0 < r.participation <= 1:
            raise ConfigError("rounds.participation", "must lie in (0, 1]")
        if not 1 <= self.m <= r.n:
            raise ConfigError("rounds.m", f"need 1 <= m <= n (m={self.m}, n={r.n})")
        if r.seed < 0:
            raise ConfigError("rounds.seed", "must be non-negative")
        if s.mode not in ("hard", "soft"):
            raise ConfigError("switch.mode", f"must be 'hard' or 'soft', got {s.mode!r}")
        if s.beta is not None and not s.beta > 0:
            raise ConfigError("switch.beta", "must be > 0")
        if s.mode == "soft" and s.beta is None and prm.mode == "manual":
            raise ConfigError("switch.beta", "soft switching with manual parameters needs beta")
        for name in ("uplink", "downlink"):
            link = getattr(c, name)
            if link.kind not in ("identity", "top_k", "rand_k", "uniform_quant"):
                raise ConfigError(f"compression.{name}.kind", f"unknown compressor {link.kind!r}")
            if link.kind in ("top_k", "rand_k") and (link.k is None) == (link.ratio is None):
                raise ConfigError(f"compression.{name}", "give exactly one of k or ratio")
            if link.kind == "uniform_quant" and link.bits is None:
                raise ConfigError(f"compression.{name}.bits", "uniform_quant needs bits")
        if prm.mode == "manual":
            if prm.eta is None or not prm.eta > 0:
                raise ConfigError("params.eta", "manual mode needs eta > 0")
            if prm.epsilon is None or prm.epsilon < 0:
                raise ConfigError("params.epsilon", "manual mode needs epsilon >= 0")
        elif prm.mode == "theorem":
            if prm.eta is not None:
                raise ConfigError("params.eta", "theorem mode computes eta; remove the manual value")
            if prm.epsilon is not None:
                raise ConfigError("params.epsilon", "theorem mode computes epsilon; remove the manual value")
            if isinstance(prm.sigma, str) and prm.sigma != "estimate":
                raise ConfigError("params.sigma", "must be a number or 'estimate'")
        else:
            raise ConfigError("params.mode", f"must be 'manual' or 'theorem', got {prm.mode!r}")
        if self.snapshot_cadence < 1:
            raise ConfigError("snapshot_cadence", "must be >= 1")
        if self.sweep is not None:
            if not isinstance(self.sweep, dict) or not self.sweep:
                raise ConfigError("sweep", "must be a non-empty mapping of field path -> list of values")
            for key, values in self.sweep.items():
                if not isinstance(values, list) or not values:
                    raise ConfigError(f"sweep.{key}", "must be a non-empty list")
                for path in key.split("+"):
                    _check_path(self.to_dict(), path, f"sweep.{key}")

    @property
    def m(self) -> int:
        r = self.rounds
        if r.m is not None:
            return r.m
        if r.participation is not None:
            return max(1, int(round(r.participation * r.n)))
        return r.n

    def with_override(self, path: str, value) -> "RunSpec":
        raw = copy.deepcopy(self.to_dict())
        for sub in path.split("+"):
            _set_path(raw, sub, value)
        if path.startswith("rounds.participation"):
            raw["rounds"]["m"] = None
        elif path.startswith("rounds.m"):
            raw["rounds"]["participation"] = None
        raw["sweep"] = None
        return RunSpec.from_dict(raw)

    def sweep_cells(self) -> list[tuple[dict, "RunSpec"]]:
        if not self.sweep:
            raise ConfigError("sweep", "no sweep defined")
        keys = list(self.sweep)
        cells = []
        for combo in itertools.product(*(self.sweep[k] for k in keys)):
            spec = self
            for key, value in zip(keys, combo):
                spec = spec.with_override(key, value)
            cells.append((dict(zip(keys, combo)), spec))
        return cells


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{prefix}{key}", "unknown field")
    kwargs = {}
    for name, value in raw.items():
        nested = _NESTED.get((cls, name))
        if nested is not None and value is not None:
            kwargs[name] = _build(nested, value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(prefix.rstrip(".") or "<root>", str(exc)) from None


_NESTED = {
    (RunSpec, "problem"): ProblemSpec,
    (RunSpec, "rounds"): RoundSpec,
    (RunSpec, "switch"): SwitchSpec,
    (RunSpec, "compression"): CompressionSpec,
    (RunSpec, "params"): ParamSpec,
    (CompressionSpec, "uplink"): LinkSpec,
    (CompressionSpec, "downlink"): LinkSpec,
}


def _check_path(raw: dict, path: str, where: str) -> None:
    node = raw
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(where, f"{path!r} is not a config field")
        node = node[part]


def _set_path(raw: dict, path: str, value) -> None:
    parts = path.split(".")
    node = raw
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value


# ----------------------------------------------------------------------------
# config -> experiment

def build_domain(raw: dict | None, d: int) -> Domain:
    if raw is None:
        return Domain.unbounded()
    kind = raw.get("kind")
    try:
        if kind == "ball":
            return Domain.ball(raw.get("center", np.zeros(d)), raw["radius"])
        if kind == "box":
            if "half_width" in raw:
                return Domain.cube(d, raw["half_width"])
            return Domain.box(raw["lower"], raw["upper"])
        if kind == "unbounded":
            return Domain.unbounded()
    except (KeyError, ValueError) as exc:
        raise ConfigError("problem.domain", str(exc)) from None
    raise ConfigError("problem.domain.kind", f"unknown domain kind {kind!r}")


def build_problem(spec: RunSpec, base_dir: Path | None = None) -> FederatedProblem:
    p, n = spec.problem, spec.rounds.n
    if p.kind == "linear_ball":
        c = p.c if p.c is not None else [1.0] * p.d
        return build_synthetic_linear_ball(p.d, c, p.r, n=n, half_width=p.half_width,
                                           heterogeneity=p.heterogeneity, seed=p.problem_seed)
    if p.kind == "np_csv":
        path = Path(p.path)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        data = load_csv(path)
    else:
        data = make_np_synthetic(p.rows, p.d_feat, p.class_balance, p.data_seed, p.separation)
    return build_np_classification(data, n, p.partition_seed, build_domain(p.domain, data.d_feat),
                                   p.heterogeneous, p.batch_size)


def build_link(link: LinkSpec, d: int) -> CompressorSpec:
    if link.kind == "identity":
        return CompressorSpec.identity(d)
    if link.kind in ("top_k", "rand_k"):
        k = link.k if link.k is not None else max(1, int(round(link.ratio * d)))
        return CompressorSpec(link.kind, d, k=min(k, d))
    return CompressorSpec.uniform_quant(d, link.bits, link.q)


@dataclass
class Experiment:
    spec: RunSpec
    problem: FederatedProblem
    config: RoundConfig
    epsilon: float
    eta: float
    theorem: TheoremOutputs | None = None
    notes: dict = field(default_factory=dict)


def prepare(spec: RunSpec, base_dir: Path | None = None) -> Experiment:
    problem = build_problem(spec, base_dir)
    d = problem.dim
    comp = spec.compression
    uplink = downlink = None
    if comp.enabled:
        uplink, downlink = build_link(comp.uplink, d), build_link(comp.downlink, d)
    notes: dict = {}
    theorem = None
    prm = spec.params
    if prm.mode == "manual":
        eta, eps = float(prm.eta), float(prm.epsilon)
    else:
        theorem, notes = _theorem_params(spec, problem, uplink, downlink)
        eta, eps = theorem.eta, theorem.epsilon
    beta = spec.switch.beta
    if spec.switch.mode == "soft" and beta is None:
        beta = 2.0 / eps
        notes["beta"] = "set to 2/epsilon"
    switch = SwitchMode.hard(eps) if spec.switch.mode == "hard" else SwitchMode.soft(eps, beta)
    config = RoundConfig(T=spec.rounds.T, E=spec.rounds.E, n=spec.rounds.n, m=spec.m, eta=eta,
                         switch=switch, uplink=uplink, downlink=downlink, compression=comp.enabled,
                         seed=spec.rounds.seed, workers=spec.rounds.workers,
                         snapshot_cadence=spec.snapshot_cadence)
    return Experiment(spec, problem, config, eps, eta, theorem, notes)


def _theorem_params(spec, problem, uplink, downlink):
    prm, notes = spec.params, {}
    w0 = initial_model(problem)
    if prm.D is not None:
        D = float(prm.D)
    else:
        if not problem.domain.compact:
            raise ConfigError("params.D", "unbounded domain: supply D explicitly")
        D = default_D(problem.domain)
        notes["D"] = "domain diameter"
    G = float(prm.G) if prm.G is not None else problem.lipschitz_G
    q = prm.q if prm.q is not None else _link_q(uplink, "params.q")
    q0 = prm.q0 if prm.q0 is not None else _link_q(downlink, "params.q0")
    m, n = spec.m, spec.rounds.n
    sigma = prm.sigma
    if m < n:
        if prm.delta is None:
            raise ConfigError("params.delta", "partial participation needs a confidence delta")
        if sigma is None:
            raise ConfigError("params.sigma", "partial participation needs sigma (a number or 'estimate')")
    if sigma == "estimate":
        sigma = estimate_sigma(problem, w0)
        notes["sigma"] = "ESTIMATED from per-client g_j(w0) spread, not an assumed bound"
    try:
        inputs = TheoremInputs(D=D, G=G, E=spec.rounds.E, T=max(spec.rounds.T, 1), n=n, m=m,
                               q=float(q), q0=float(q0), sigma=float(sigma or 0.0), delta=prm.delta,
                               regime_override=prm.regime)
        return theorem1_params(inputs), notes
    except ValueError as exc:
        raise ConfigError("params", str(exc)) from None


def _link_q(spec: CompressorSpec | None, where: str) -> float:
    if spec is None:
        return 1.0
    if spec.kind == "uniform_quant":
        raise ConfigError(where, "quantized links need a user-supplied q for the theorem formulas")
    return spec.contraction_q
