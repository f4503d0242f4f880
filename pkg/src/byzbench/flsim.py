"""Single-machine federated training simulator.

Each round: honest clients compute one minibatch gradient at the current
parameters, compromised clients substitute attack payloads, the server builds
its aggregate (optionally through the segment filter) and takes one SGD step.
Every random draw comes from a keyed substream of the run seed, so reruns are
bitwise identical and independent of execution order.

Ground truth about which clients are compromised lives only in this module
and the records it emits; aggregation and filtering code never sees it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import data as datamod
from .aggregators import AggregatorSpec, aggregate
from .attacks import AttackSpec, byzantine_payloads
from .core import ByzantineMask, select_byzantine_set, substream, weighted_average
from .errors import (
    ConfigError,
    DivergenceDetected,
    InsufficientClients,
    InvalidSelectionSize,
    MissingReference,
)
from .filtering import FilterParams, FilterResult, ReferenceSpec, build_reference, filter_and_aggregate
from .models import ModelSpec, build_model


def ceil_ratio(ratio: float, count: int) -> int:
    """ceil(ratio * count) robust to float fuzz on grid values like 0.55 * 100."""
    return math.ceil(ratio * count - 1e-9)


@dataclass(frozen=True)
class LRSchedule:
    """Decaying step size eta_t = eta0 / (decay * t + 1)."""

    eta0: float = 0.2
    decay: float = 0.006

    def __post_init__(self):
        if self.eta0 <= 0.0 or self.decay < 0.0:
            raise ValueError("need eta0 > 0 and decay >= 0")

    def rate(self, round_index: int) -> float:
        return self.eta0 / (self.decay * round_index + 1.0)


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic Gaussian clusters or an IDX file pair per split."""

    kind: str = "synthetic"
    n: int = 5000
    dim: int = 20
    classes: int = 10
    separation: float = 4.0
    test_fraction: float = 0.2
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "idx"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "synthetic":
            if self.n < 1 or self.dim < 1 or self.classes < 2 or self.separation <= 0:
                raise ValueError("synthetic dataset needs n, dim >= 1, classes >= 2, separation > 0")
            if not 0.0 < self.test_fraction < 1.0:
                raise ValueError("test_fraction must lie in (0, 1)")
        else:
            missing = [
                name
                for name in ("train_images", "train_labels", "test_images", "test_labels")
                if getattr(self, name) is None
            ]
            if missing:
                raise ValueError(f"idx dataset needs paths: {', '.join(missing)}")


@dataclass(frozen=True)
class CleanSpec:
    """Clean-data regime: a server-held shard or a trusted client set."""

    kind: str
    fraction: float = 0.02
    clients: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("server", "trusted"):
            raise ValueError(f"unknown clean kind {self.kind!r}")
        if self.kind == "server" and not 0.0 < self.fraction < 1.0:
            raise ValueError("server shard fraction must lie in (0, 1)")
        if self.kind == "trusted" and not self.clients:
            raise ValueError("trusted clean spec needs at least one client id")


@dataclass(frozen=True)
class MethodSpec:
    """An aggregation method: a bare baseline or the filter over a reference.

    filtered=False runs `base` directly. filtered=True scores uploads against
    a reference drawn from `reference`: "aggregator" (run `base` over all
    uploads), "server_clean" (gradient on the server shard), or "trusted"
    (average of trusted clients' uploads).
    """

    filtered: bool = False
    base: AggregatorSpec | None = None
    reference: str = "aggregator"

    def __post_init__(self):
        if self.reference not in ("aggregator", "server_clean", "trusted"):
            raise ValueError(f"unknown reference {self.reference!r}")
        if not self.filtered and self.base is None:
            raise ValueError("bare method needs a base aggregator")
        if self.filtered and self.reference == "aggregator" and self.base is None:
            raise ValueError("filtered aggregator reference needs a base aggregator")

    @property
    def label(self) -> str:
        if not self.filtered:
            return self.base.label
        if self.reference == "aggregator":
            return f"H+{self.base.label}"
        return "H+Clean data"


@dataclass(frozen=True)
class RunConfig:
    """Full declarative description of one training run."""

    dataset: DatasetSpec = DatasetSpec()
    model: ModelSpec = ModelSpec()
    clients: int = 20
    batch_size: int = 32
    rounds: int = 100
    beta: float = 0.6
    requested_ratio: float = 0.0
    attack: AttackSpec | None = None
    method: MethodSpec = MethodSpec(base=AggregatorSpec("mean"))
    filter_params: FilterParams = FilterParams()
    lr: LRSchedule = LRSchedule()
    clean: CleanSpec | None = None
    seed: int = 0
    eval_interval: int = 1
    min_client_size: int | None = None

    def __post_init__(self):
        if self.clients < 1 or self.batch_size < 1 or self.rounds < 0:
            raise ValueError("need clients >= 1, batch_size >= 1, rounds >= 0")
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.requested_ratio < 1.0:
            raise ValueError("requested_ratio must lie in [0, 1)")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.requested_ratio > 0.0 and self.attack is None:
            raise ValueError("requested_ratio > 0 needs an attack")


@dataclass
class RoundRecord:
    """Everything observable about one round."""

    round_index: int
    train_loss: float
    test_accuracy: Optional[float]
    selected: tuple[int, ...]
    empty_intersection: bool
    filter_precision: float
    filter_recall: float
    realized_ratio: float
    aggregate_norm: float
    pass_segments: tuple[tuple[int, int], ...]
    wall: dict = field(default_factory=dict)

    @property
    def n_selected(self) -> int:
        return len(self.selected)

    @property
    def wall_ms(self) -> float:
        return 1000.0 * self.wall.get("total", 0.0)


@dataclass
class ExperimentResult:
    records: list[RoundRecord]
    initial_accuracy: float
    max_accuracy: float
    final_accuracy: float
    diverged: bool
    byzantine: ByzantineMask
    method_label: str
    attack_label: str


class Simulation:
    """Materialized state for one run of `run_experiment`."""

    def __init__(self, config: RunConfig):
        self.config = config
        seed = config.seed
        m_clients = config.clients

        if config.dataset.kind == "synthetic":
            full = datamod.synth_classification(
                config.dataset.n,
                config.dataset.dim,
                config.dataset.classes,
                config.dataset.separation,
                substream(seed, "data"),
            )
            train_idx, test_idx = datamod.stratified_holdout(
                full, config.dataset.test_fraction, substream(seed, "split")
            )
            self.train = datamod.take(full, train_idx)
            self.test = datamod.take(full, test_idx)
        else:
            self.train = datamod.load_idx(config.dataset.train_images, config.dataset.train_labels)
            self.test = datamod.load_idx(config.dataset.test_images, config.dataset.test_labels)
            if self.test.n_classes > self.train.n_classes:
                raise ConfigError("dataset", "test split contains unseen classes")

        self.shard: np.ndarray | None = None
        trusted: tuple[int, ...] = ()
        if config.clean is not None:
            if config.clean.kind == "server":
                carved = datamod.carve_clean_shard(
                    self.train, fraction=config.clean.fraction, rng=substream(seed, "shard")
                )
                self.shard = carved.indices
            else:
                trusted = tuple(sorted(set(config.clean.clients)))
                if any(c < 0 or c >= m_clients for c in trusted):
                    raise ConfigError("clean.clients", f"ids must lie in [0, {m_clients})")
        self.trusted = trusted

        min_size = config.min_client_size
        if min_size is None:
            min_size = 2 * config.batch_size
        self.partitions = datamod.dirichlet_partition(
            self.train,
            m_clients,
            config.beta,
            min_size,
            substream(seed, "partition"),
            exclude=self.shard,
        )
        sizes = np.array([part.size for part in self.partitions], dtype=np.float64)
        self.alpha = sizes / sizes.sum()
        shard_size = 0 if self.shard is None else self.shard.size
        selection_weights = sizes / (sizes.sum() + shard_size)

        self.mask = select_byzantine_set(
            selection_weights,
            config.requested_ratio,
            substream(seed, "byzantine"),
            exclude=frozenset(trusted),
        )
        self.honest = tuple(m for m in range(m_clients) if m not in self.mask.members)
        if config.attack is not None and not self.honest:
            raise InsufficientClients("attack requires at least one honest client")

        self.model = build_model(config.model, self.train.dim, self.train.n_classes)
        self.params = self.model.init_params(substream(seed, "init"))
        self.prev_aggregate = np.zeros(self.model.n_params)

        self.method = self._resolve_method(config.method)
        self.attack = self._resolve_attack(config.attack)
        self.filter_params = self._resolve_filter(config.filter_params)
        self._needs_clean_gradient = (
            self.method.filtered and self.method.reference == "server_clean"
        ) or (not self.method.filtered and self.method.base.kind == "fltrust")
        if self._needs_clean_gradient and self.shard is None:
            raise MissingReference("method needs a server clean shard; set clean.kind = server")
        if self.method.filtered and self.method.reference == "trusted" and not trusted:
            raise MissingReference("trusted reference needs clean.kind = trusted")

    def _resolve_method(self, method: MethodSpec) -> MethodSpec:
        base = method.base
        if base is not None and base.kind == "krum" and base.assumed_byzantine is None:
            f = ceil_ratio(self.config.requested_ratio, self.config.clients)
            base = AggregatorSpec(
                kind="krum",
                assumed_byzantine=f,
                tolerance=base.tolerance,
                max_iter=base.max_iter,
                clip_radius=base.clip_radius,
                clip_iters=base.clip_iters,
            )
        if base is not None and base.kind == "krum" and self.config.clients < base.assumed_byzantine + 3:
            raise InsufficientClients(
                f"krum needs clients >= f + 3 = {base.assumed_byzantine + 3}, got {self.config.clients}"
            )
        return MethodSpec(filtered=method.filtered, base=base, reference=method.reference)

    def _resolve_attack(self, attack: AttackSpec | None) -> AttackSpec | None:
        if attack is None or attack.kind != "foe" or attack.foe_scale is not None:
            return attack
        base = self.method.base
        victim_is_correntropy = base is not None and base.kind == "mca"
        scale = -3.0 * (self.config.clients - self.mask.count) if victim_is_correntropy else -0.1
        return AttackSpec(
            kind="foe", variance=attack.variance, lie_offset=attack.lie_offset, foe_scale=scale
        )

    def _resolve_filter(self, params: FilterParams) -> FilterParams:
        keep = params.keep
        if keep is None:
            keep = self.config.clients - ceil_ratio(self.config.requested_ratio, self.config.clients)
        if not 1 <= keep <= self.config.clients:
            raise InvalidSelectionSize(f"keep={keep} outside [1, {self.config.clients}]")
        return FilterParams(
            passes=params.passes,
            segment_len=params.segment_len,
            keep=keep,
            penalty_weight=params.penalty_weight,
            norm_pivot=params.norm_pivot,
        )

    # ------------------------------------------------------------------ round

    def _client_batch(self, round_index: int, client: int) -> np.ndarray:
        part = self.partitions[client]
        rng = substream(self.config.seed, "batch", round_index, client)
        size = min(self.config.batch_size, part.size)
        return rng.choice(part.indices, size=size, replace=False)

    def _clean_gradient(self, round_index: int) -> np.ndarray:
        rng = substream(self.config.seed, "server_batch", round_index)
        size = min(self.config.batch_size, self.shard.size)
        batch = rng.choice(self.shard, size=size, replace=False)
        _, grad = self.model.loss_and_gradient(
            self.params, self.train.features[batch], self.train.labels[batch]
        )
        return grad

    def run_round(self, round_index: int) -> RoundRecord:
        cfg = self.config
        t_start = time.perf_counter()
        wall: dict[str, float] = {}

        losses = np.empty(len(self.honest))
        honest_stack = np.empty((len(self.honest), self.model.n_params))
        uploads = np.empty((cfg.clients, self.model.n_params))
        for row, m in enumerate(self.honest):
            batch = self._client_batch(round_index, m)
            loss, grad = self.model.loss_and_gradient(
                self.params, self.train.features[batch], self.train.labels[batch]
            )
            losses[row] = loss
            honest_stack[row] = grad
            uploads[m] = grad
        honest_alpha = self.alpha[list(self.honest)]
        train_loss = float((honest_alpha / honest_alpha.sum()) @ losses)
        wall["gradients"] = time.perf_counter() - t_start

        t_mark = time.perf_counter()
        if self.attack is not None and self.mask.count:
            payloads = byzantine_payloads(
                self.attack,
                honest_stack,
                self.mask.members,
                cfg.clients,
                lambda m: substream(cfg.seed, "attack", round_index, m),
            )
            for m, payload in payloads.items():
                uploads[m] = payload
        if not np.isfinite(uploads).all():
            raise _divergence(f"non-finite client upload in round {round_index}")
        wall["attack"] = time.perf_counter() - t_mark

        clean_grad = self._clean_gradient(round_index) if self._needs_clean_gradient else None

        selected: tuple[int, ...]
        if self.method.filtered:
            t_mark = time.perf_counter()
            if self.method.reference == "server_clean":
                reference = clean_grad
            else:
                ref_spec = (
                    ReferenceSpec("trusted", trusted=self.trusted)
                    if self.method.reference == "trusted"
                    else ReferenceSpec("aggregator", base=self.method.base)
                )
                reference = build_reference(
                    ref_spec, self.alpha, uploads, center=self.prev_aggregate
                )
            wall["reference"] = time.perf_counter() - t_mark
            result: FilterResult = filter_and_aggregate(
                reference,
                uploads,
                self.alpha,
                self.filter_params,
                substream(cfg.seed, "segments", round_index),
            )
            agg = result.aggregate
            selected = tuple(sorted(result.selected))
            empty_intersection = result.empty_intersection
            segments = tuple((p.segment.start, p.segment.length) for p in result.passes)
            wall["filter"] = result.select_seconds
        else:
            t_mark = time.perf_counter()
            agg = aggregate(
                self.method.base,
                self.alpha,
                uploads,
                center=self.prev_aggregate,
                reference=clean_grad,
            )
            selected = tuple(range(cfg.clients))
            empty_intersection = False
            segments = ()
            wall["aggregate"] = time.perf_counter() - t_mark

        honest_selected = sum(1 for m in selected if m not in self.mask.members)
        precision = honest_selected / len(selected) if selected else 1.0
        recall = honest_selected / len(self.honest)

        self.params = self.params - self.lr_rate(round_index) * agg
        self.prev_aggregate = agg
        if not np.isfinite(self.params).all():
            raise _divergence(f"parameters diverged in round {round_index}")

        test_accuracy = None
        if (round_index + 1) % cfg.eval_interval == 0 or round_index == cfg.rounds - 1:
            t_mark = time.perf_counter()
            test_accuracy = self.model.accuracy(self.params, self.test.features, self.test.labels)
            wall["eval"] = time.perf_counter() - t_mark

        wall["total"] = time.perf_counter() - t_start
        return RoundRecord(
            round_index=round_index,
            train_loss=train_loss,
            test_accuracy=test_accuracy,
            selected=selected,
            empty_intersection=empty_intersection,
            filter_precision=precision,
            filter_recall=recall,
            realized_ratio=self.mask.realized_ratio,
            aggregate_norm=float(np.linalg.norm(agg)),
            pass_segments=segments,
            wall=wall,
        )

    def lr_rate(self, round_index: int) -> float:
        return self.config.lr.rate(round_index)


def _divergence(message: str) -> DivergenceDetected:
    return DivergenceDetected(message)


def run_experiment(config: RunConfig) -> ExperimentResult:
    """Run all rounds; raises DivergenceDetected carrying the partial result."""
    sim = Simulation(config)
    initial = sim.model.accuracy(sim.params, sim.test.features, sim.test.labels)
    records: list[RoundRecord] = []

    def finish(diverged: bool) -> ExperimentResult:
        accs = [r.test_accuracy for r in records if r.test_accuracy is not None]
        return ExperimentResult(
            records=records,
            initial_accuracy=initial,
            max_accuracy=max([initial, *accs]),
            final_accuracy=accs[-1] if accs else initial,
            diverged=diverged,
            byzantine=sim.mask,
            method_label=sim.method.label,
            attack_label=sim.attack.label if sim.attack is not None else "None",
        )

    for t in range(config.rounds):
        try:
            records.append(sim.run_round(t))
        except DivergenceDetected as exc:
            exc.result = finish(True)
            raise
    return finish(False)


def run_to_result(config: RunConfig) -> ExperimentResult:
    """Like run_experiment but returns the partial result on divergence."""
    try:
        return run_experiment(config)
    except DivergenceDetected as exc:
        return exc.result
