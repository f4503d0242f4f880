"""Sweep orchestration: expand a config into cells, run them, persist rows.

Every cell (attack x method x ratio x beta x seed) gets a content fingerprint:
the sha256 of its canonical-JSON resolved description. The fingerprint names
the cell's output files, keys resume, and seeds the run, so reruns are bitwise
reproducible and key order / whitespace in the source config cannot matter.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass

from ..attacks import AttackSpec
from ..flsim import MethodSpec, RoundRecord, RunConfig, run_to_result
from .config import ExperimentConfig, _attack_dict, _method_dict
from .reporting import read_summary_rows, write_round_csv, write_summary_json

_SEED_SPACE = 2**31 - 1


@dataclass(frozen=True)
class SummaryRow:
    """One sweep cell's outcome; the unit of summary.json."""

    fingerprint: str
    attack: str
    method: str
    requested_ratio: float
    beta: float
    seed: int
    max_accuracy: float | None
    final_accuracy: float | None
    empty_intersections: int | None
    mean_precision: float | None
    mean_recall: float | None
    wall_ms: float | None
    status: str = "ok"
    error: str | None = None

    def __post_init__(self):
        if self.status not in ("ok", "diverged", "failed"):
            raise ValueError(f"unknown status {self.status!r}")
        for value in (self.mean_precision, self.mean_recall):
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError("precision/recall must lie in [0, 1]")


@dataclass(frozen=True)
class Cell:
    """One resolved point of the sweep's Cartesian product."""

    fingerprint: str
    attack: AttackSpec | None
    method: MethodSpec
    requested_ratio: float
    beta: float
    seed: int
    run_config: RunConfig

    @property
    def attack_label(self) -> str:
        return self.attack.label if self.attack is not None else "None"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _cell_description(config: ExperimentConfig, attack, method, ratio, beta, seed) -> dict:
    """Everything that semantically determines the cell's result."""
    return {
        "dataset": {
            "kind": config.dataset.kind,
            "n": config.dataset.n,
            "dim": config.dataset.dim,
            "classes": config.dataset.classes,
            "separation": config.dataset.separation,
            "test_fraction": config.dataset.test_fraction,
            "train_images": config.dataset.train_images,
            "train_labels": config.dataset.train_labels,
            "test_images": config.dataset.test_images,
            "test_labels": config.dataset.test_labels,
        },
        "model": {"kind": config.model.kind, "hidden": config.model.hidden},
        "clients": config.clients,
        "batch_size": config.batch_size,
        "rounds": config.rounds,
        "beta": beta,
        "ratio": ratio,
        "attack": _attack_dict(attack),
        "method": _method_dict(method),
        "hplus": {
            "K": config.hplus.passes,
            "r": config.hplus.segment_len,
            "N": config.hplus.keep,
            "rho": config.hplus.penalty_weight,
            "tau": config.hplus.norm_pivot,
        },
        "lr": {"eta0": config.lr.eta0, "decay": config.lr.decay},
        "clean": (
            None
            if config.clean is None
            else {
                "kind": config.clean.kind,
                "fraction": config.clean.fraction,
                "clients": list(config.clean.clients),
            }
        ),
        "eval_interval": config.eval_interval,
        "min_client_size": config.min_client_size,
        "seed": seed,
    }


def cell_fingerprint(description: dict) -> str:
    return hashlib.sha256(_canonical(description).encode()).hexdigest()


def _cell_seed(master_seed: int, fingerprint: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{fingerprint}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % _SEED_SPACE


def expand_cells(config: ExperimentConfig) -> list[Cell]:
    """Cartesian product over the sweep axes, deduplicated by fingerprint.

    A "none" attack is a control cell: its requested ratio is forced to 0, so
    controls collapse to one cell per (method, beta, seed) no matter how many
    ratios are swept.
    """
    cells: dict[str, Cell] = {}
    for attack in config.attacks:
        for method in config.methods:
            for ratio in config.ratios:
                for beta in config.betas:
                    for seed in config.seeds:
                        requested = ratio if attack is not None else 0.0
                        description = _cell_description(
                            config, attack, method, requested, beta, seed
                        )
                        fingerprint = cell_fingerprint(description)
                        if fingerprint in cells:
                            continue
                        run_config = RunConfig(
                            dataset=config.dataset,
                            model=config.model,
                            clients=config.clients,
                            batch_size=config.batch_size,
                            rounds=config.rounds,
                            beta=beta,
                            requested_ratio=requested,
                            attack=attack,
                            method=method,
                            filter_params=config.hplus,
                            lr=config.lr,
                            clean=config.clean,
                            seed=_cell_seed(seed, fingerprint),
                            eval_interval=config.eval_interval,
                            min_client_size=config.min_client_size,
                        )
                        cells[fingerprint] = Cell(
                            fingerprint=fingerprint,
                            attack=attack,
                            method=method,
                            requested_ratio=requested,
                            beta=beta,
                            seed=seed,
                            run_config=run_config,
                        )
    return list(cells.values())


# ------------------------------------------------------------------ execution


def _summarize(cell: Cell, records: list[RoundRecord], status: str, wall_ms: float,
               method_label: str, error: str | None = None) -> SummaryRow:
    evaluated = [r.test_accuracy for r in records if r.test_accuracy is not None]
    return SummaryRow(
        fingerprint=cell.fingerprint,
        attack=cell.attack_label,
        method=method_label,
        requested_ratio=cell.requested_ratio,
        beta=cell.beta,
        seed=cell.seed,
        max_accuracy=max(evaluated) if evaluated else None,
        final_accuracy=evaluated[-1] if evaluated else None,
        empty_intersections=sum(1 for r in records if r.empty_intersection),
        mean_precision=(
            sum(r.filter_precision for r in records) / len(records) if records else None
        ),
        mean_recall=(sum(r.filter_recall for r in records) / len(records) if records else None),
        wall_ms=wall_ms,
        status=status,
        error=error,
    )


def run_cell(cell: Cell) -> tuple[SummaryRow, list[RoundRecord]]:
    """Execute one cell; never raises, failures land in the row's status."""
    start = time.perf_counter()
    try:
        result = run_to_result(cell.run_config)
    except Exception as exc:  # noqa: BLE001 - cell failures must not kill the sweep
        wall_ms = 1000.0 * (time.perf_counter() - start)
        row = SummaryRow(
            fingerprint=cell.fingerprint,
            attack=cell.attack_label,
            method=cell.method.label,
            requested_ratio=cell.requested_ratio,
            beta=cell.beta,
            seed=cell.seed,
            max_accuracy=None,
            final_accuracy=None,
            empty_intersections=None,
            mean_precision=None,
            mean_recall=None,
            wall_ms=wall_ms,
            status="failed",
            error=f"{type(exc).__name__}: {exc}",
        )
        return row, []
    wall_ms = 1000.0 * (time.perf_counter() - start)
    status = "diverged" if result.diverged else "ok"
    row = _summarize(cell, result.records, status, wall_ms, result.method_label)
    return row, result.records


def _row_path(out_dir: str, fingerprint: str) -> str:
    return os.path.join(out_dir, "cells", f"{fingerprint}.json")


def _rounds_path(out_dir: str, fingerprint: str) -> str:
    return os.path.join(out_dir, "rounds", f"{fingerprint}.csv")


def _load_finished(out_dir: str, cells: list[Cell]) -> dict[str, SummaryRow]:
    """Rows whose outputs already exist on disk, keyed by fingerprint."""
    finished: dict[str, SummaryRow] = {}
    for cell in cells:
        row_path = _row_path(out_dir, cell.fingerprint)
        if not (os.path.exists(row_path) and os.path.exists(_rounds_path(out_dir, cell.fingerprint))):
            continue
        try:
            rows = read_summary_rows(row_path)
        except Exception:  # noqa: BLE001 - a corrupt row file means "recompute"
            continue
        if len(rows) == 1 and rows[0].fingerprint == cell.fingerprint:
            finished[cell.fingerprint] = rows[0]
    return finished


def _persist(out_dir: str, row: SummaryRow, records: list[RoundRecord]):
    write_round_csv(records, _rounds_path(out_dir, row.fingerprint))
    write_summary_json([row], _row_path(out_dir, row.fingerprint))


def row_sort_key(row: SummaryRow):
    return (row.attack, row.method, row.requested_ratio, row.beta, row.seed, row.fingerprint)


def run_sweep(
    config: ExperimentConfig,
    out_dir: str,
    parallelism: int = 1,
    resume: bool = False,
    progress=None,
) -> list[SummaryRow]:
    """Run every cell, persist per-cell outputs incrementally, return all rows.

    All file writes happen here in the calling process; workers only compute.
    Rows come back sorted on a canonical key, so sequential and parallel runs
    of the same config produce identical summary files.
    """
    cells = expand_cells(config)
    os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "rounds"), exist_ok=True)

    rows: dict[str, SummaryRow] = {}
    if resume:
        rows.update(_load_finished(out_dir, cells))
    pending = [cell for cell in cells if cell.fingerprint not in rows]

    def record(row: SummaryRow, records: list[RoundRecord]):
        _persist(out_dir, row, records)
        rows[row.fingerprint] = row
        if progress is not None:
            progress(row)

    if parallelism <= 1 or len(pending) <= 1:
        for cell in pending:
            record(*run_cell(cell))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = {pool.submit(run_cell, cell) for cell in pending}
            while futures:
                done, futures = wait(futures, return_when=FIRST_COMPLETED)
                for future in done:
                    record(*future.result())

    ordered = sorted(rows.values(), key=row_sort_key)
    write_summary_json(ordered, os.path.join(out_dir, "summary.json"))
    return ordered
