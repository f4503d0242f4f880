"""Segmented similarity filter over client updates.

The filter compares every upload against a reference gradient on K random
contiguous coordinate windows. Per window each client gets a score: a
coordinate-wise similarity ratio in [0, 1] minus a penalty on the window norm.
The top N clients per window survive, and only clients surviving every window
are aggregated. The scoring cost is O(K * M * r) and does not touch the full
parameter dimension, so it stays flat as models grow.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .aggregators import AggregatorSpec, aggregate
from .core import as_matrix, weighted_average
from .errors import (
    DimensionMismatch,
    EmptySelection,
    InvalidSelectionSize,
    MissingReference,
)


def similarity_check(x, y) -> float:
    """Coordinate-wise agreement ratio between reference x and candidate y.

    Returns the mean over coordinates of |x_i| / (|y_i - x_i| + |x_i|), with
    0/0 terms counted as 1 (both sides agree the coordinate is zero). Always
    lies in [0, 1]; equals 1 iff y == x.
    """
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise DimensionMismatch(f"similarity_check got shapes {xv.shape} and {yv.shape}")
    return float(_similarity_rows(xv, yv[None, :])[0])


def _similarity_rows(ref_seg: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Vectorized similarity of each row of `rows` against ref_seg."""
    num = np.abs(ref_seg)
    den = np.abs(rows - ref_seg) + num
    zero = den == 0.0
    ratio = num / np.where(zero, 1.0, den)
    if zero.any():
        ratio = np.where(zero, 1.0, ratio)
    return ratio.mean(axis=1)


@dataclass(frozen=True)
class Segment:
    """A contiguous coordinate window [start, start + length)."""

    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


def sample_segments(dim: int, segment_len: int, passes: int, rng: np.random.Generator) -> list[Segment]:
    """Draw one window per pass, uniform over valid start offsets.

    The effective length is min(segment_len, dim), so short models degrade to
    whole-vector comparison. Windows may overlap; all clients in a round are
    scored on the same windows.
    """
    if dim < 1 or segment_len < 1 or passes < 1:
        raise InvalidSelectionSize("dim, segment_len and passes must all be >= 1")
    eff = min(segment_len, dim)
    starts = rng.integers(0, dim - eff + 1, size=passes)
    return [Segment(int(s), eff) for s in starts]


def anomaly_scores(
    reference: np.ndarray,
    uploads: np.ndarray,
    segment: Segment,
    penalty_weight: float,
    norm_pivot: float,
) -> np.ndarray:
    """Per-client score on one window: similarity minus a norm penalty.

    score_m = H(ref_w, g_m_w) - penalty_weight * max(||g_m_w||, norm_pivot / ||g_m_w||).
    The penalty punishes both oversized and vanishing windows; a client whose
    window is exactly zero scores -inf.
    """
    ref_seg = reference[segment.start : segment.stop]
    seg = uploads[:, segment.start : segment.stop]
    sim = _similarity_rows(ref_seg, seg)
    norms = np.sqrt(np.einsum("ij,ij->i", seg, seg))
    with np.errstate(divide="ignore", invalid="ignore"):
        penalty = np.maximum(norms, norm_pivot / norms)
        scores = sim - penalty_weight * penalty
    return np.where(norms == 0.0, -np.inf, scores)


@dataclass(frozen=True)
class PassResult:
    """Outcome of one filtering pass: the window, all scores, survivors."""

    segment: Segment
    scores: np.ndarray
    selected: tuple[int, ...]


def score_pass(
    reference: np.ndarray,
    uploads: np.ndarray,
    segment: Segment,
    keep: int,
    penalty_weight: float,
    norm_pivot: float,
) -> PassResult:
    """Score one window and keep the top `keep` clients (ties to lower ids)."""
    n_clients = uploads.shape[0]
    if not 1 <= keep <= n_clients:
        raise InvalidSelectionSize(f"keep={keep} outside [1, {n_clients}]")
    scores = anomaly_scores(reference, uploads, segment, penalty_weight, norm_pivot)
    order = np.lexsort((np.arange(n_clients), -scores))
    selected = tuple(sorted(int(i) for i in order[:keep]))
    return PassResult(segment, scores, selected)


def intersect_passes(passes: list[PassResult]) -> frozenset[int]:
    """Clients surviving every pass."""
    if not passes:
        raise EmptySelection("no passes to intersect")
    survivors = set(passes[0].selected)
    for result in passes[1:]:
        survivors &= set(result.selected)
    return frozenset(survivors)


@dataclass(frozen=True)
class ReferenceSpec:
    """Where the filter's reference gradient comes from.

    kind "aggregator": run a baseline rule over all uploads.
    kind "server_clean": a gradient computed on a server-held clean shard.
    kind "trusted": weighted average of the uploads of known-honest clients.
    """

    kind: str
    base: AggregatorSpec | None = None
    trusted: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("aggregator", "server_clean", "trusted"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "aggregator" and self.base is None:
            raise ValueError("aggregator reference needs a base AggregatorSpec")
        if self.kind == "trusted" and not self.trusted:
            raise ValueError("trusted reference needs a non-empty client tuple")


def build_reference(
    spec: ReferenceSpec,
    weights,
    uploads,
    *,
    clean_gradient=None,
    center=None,
) -> np.ndarray:
    """Materialize the reference gradient for one round."""
    if spec.kind == "server_clean":
        if clean_gradient is None:
            raise MissingReference("server_clean reference requires a clean gradient")
        return np.asarray(clean_gradient, dtype=np.float64)
    mat = as_matrix(uploads)
    w = np.asarray(weights, dtype=np.float64)
    if spec.kind == "trusted":
        ids = list(spec.trusted)
        return weighted_average(w[ids], mat[ids])
    return aggregate(spec.base, w, mat, center=center, reference=clean_gradient)


@dataclass(frozen=True)
class FilterParams:
    """Filter hyperparameters.

    passes: number of windows (K). segment_len: window width (r). keep: clients
    kept per window (N); None lets the simulator default it to M - ceil(C * M).
    penalty_weight and norm_pivot shape the norm penalty (rho, tau).
    """

    passes: int = 3
    segment_len: int = 50
    keep: int | None = None
    penalty_weight: float = 10.0
    norm_pivot: float = 0.1

    def __post_init__(self):
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.segment_len < 1:
            raise ValueError("segment_len must be >= 1")
        if self.keep is not None and self.keep < 1:
            raise InvalidSelectionSize(f"keep={self.keep} must be >= 1")
        if self.penalty_weight < 0.0:
            raise ValueError("penalty_weight must be >= 0")
        if self.norm_pivot <= 0.0:
            raise ValueError("norm_pivot must be > 0")


def select_clients(
    reference: np.ndarray,
    uploads: np.ndarray,
    params: FilterParams,
    rng: np.random.Generator,
) -> tuple[frozenset[int], list[PassResult]]:
    """Run all passes and intersect the survivors. O(passes * M * segment_len)."""
    if params.keep is None:
        raise InvalidSelectionSize("FilterParams.keep must be resolved before filtering")
    segments = sample_segments(uploads.shape[1], params.segment_len, params.passes, rng)
    passes = [
        score_pass(reference, uploads, seg, params.keep, params.penalty_weight, params.norm_pivot)
        for seg in segments
    ]
    return intersect_passes(passes), passes


@dataclass(frozen=True)
class FilterResult:
    selected: frozenset[int]
    aggregate: np.ndarray
    passes: list[PassResult]
    empty_intersection: bool
    select_seconds: float


def filter_and_aggregate(
    reference,
    uploads,
    weights,
    params: FilterParams,
    rng: np.random.Generator,
) -> FilterResult:
    """Filter the uploads and aggregate the survivors.

    Survivors are combined by renormalized weighted average. An empty
    intersection falls back to the reference itself and is flagged so callers
    can record the event. select_seconds times only the scoring/selection
    phase (the part whose cost is independent of the model dimension).
    """
    ref = np.asarray(reference, dtype=np.float64)
    mat = as_matrix(uploads)
    if ref.shape != mat.shape[1:]:
        raise DimensionMismatch(f"reference shape {ref.shape} vs uploads {mat.shape[1:]}")
    w = np.asarray(weights, dtype=np.float64)
    t0 = time.perf_counter()
    selected, passes = select_clients(ref, mat, params, rng)
    select_seconds = time.perf_counter() - t0
    if not selected:
        return FilterResult(selected, ref.copy(), passes, True, select_seconds)
    ids = sorted(selected)
    agg = weighted_average(w[ids], mat[ids])
    return FilterResult(selected, agg, passes, False, select_seconds)
