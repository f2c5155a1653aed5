"""Benchmark harness: cohort selection, per-image attacks, reports, curves.

Every examined image gets one line in ``results.jsonl`` (including images
the model already misclassifies, which are filtered out of the cohort), so
interrupted runs can resume and query accounting stays exact: each line cost
one filter query plus, for attacked images, its recorded ``queries_used``.
All outputs are free of timestamps so identical runs are bit-for-bit
identical.
"""

from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import clone

from .attack import BayesOptAttack
from .data import LabeledImage
from .exceptions import TransportError
from .models import QueryCounter, TargetModel


def derive_seed(master_seed: int, image_id: str) -> int:
    """Stable per-image seed from the master seed and the image id."""
    digest = hashlib.sha256(f"{master_seed}:{image_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class ExperimentSpec:
    """Everything a benchmark run needs, resolved to live objects."""

    model: TargetModel
    dataset: Sequence[LabeledImage]
    attack: BayesOptAttack
    n_images: int
    master_seed: int = 0
    out_dir: Path | None = None
    resume: bool = False


@dataclass
class AggregateReport:
    """Summary of one benchmark run."""

    attacked_images: int
    successes: int
    success_rate: float
    avg_queries_success: float | None
    median_queries_success: float | None
    filter_queries: int
    attack_queries: int
    total_model_queries: int
    budget: int
    empty_cohort: bool
    partial: bool
    config: dict
    curve: list[tuple[int, float]] = field(repr=False)
    records: list[dict] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "attacked_images": self.attacked_images,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "avg_queries_success": self.avg_queries_success,
            "median_queries_success": self.median_queries_success,
            "filter_queries": self.filter_queries,
            "attack_queries": self.attack_queries,
            "total_model_queries": self.total_model_queries,
            "budget": self.budget,
            "empty_cohort": self.empty_cohort,
            "partial": self.partial,
            "config": self.config,
        }


def _load_existing_records(path: Path) -> dict[str, dict]:
    existing: dict[str, dict] = {}
    if not path.exists():
        return existing
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                break  # torn final line from an interrupted run
            existing[record["id"]] = record
    return existing


def _aggregate(records: list[dict], spec: ExperimentSpec, partial: bool) -> AggregateReport:
    attacked = [r for r in records if not r["filtered_out"]]
    successes = [r for r in attacked if r["success"]]
    queries = [r["queries_used"] for r in successes]
    budget = int(spec.attack.budget)
    n_attacked = len(attacked)
    rate = len(successes) / n_attacked if n_attacked else 0.0
    curve = []
    for b in range(1, budget + 1):
        won = sum(1 for q in queries if q <= b)
        curve.append((b, won / n_attacked if n_attacked else 0.0))
    attack_queries = sum(r["queries_used"] for r in attacked)
    config = {
        "epsilon": float(spec.attack.epsilon),
        "budget": budget,
        "n_init": int(spec.attack.n_init),
        "latent_shape": [int(s) for s in spec.attack.latent_shape],
        "upsampling": str(spec.attack.upsampling),
        "master_seed": int(spec.master_seed),
        "n_images": int(spec.n_images),
    }
    return AggregateReport(
        attacked_images=n_attacked,
        successes=len(successes),
        success_rate=rate,
        avg_queries_success=float(np.mean(queries)) if queries else None,
        median_queries_success=float(statistics.median(queries)) if queries else None,
        filter_queries=len(records),
        attack_queries=attack_queries,
        total_model_queries=len(records) + attack_queries,
        budget=budget,
        empty_cohort=n_attacked == 0,
        partial=partial,
        config=config,
        curve=curve,
        records=records,
    )


def _write_outputs(report: AggregateReport, out_dir: Path) -> None:
    with open(out_dir / "aggregate.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    with open(out_dir / "curve.csv", "w", encoding="utf-8") as fh:
        fh.write("budget,success_rate\n")
        for b, rate in report.curve:
            fh.write(f"{b},{rate:.6f}\n")


def run_experiment(spec: ExperimentSpec) -> AggregateReport:
    """Attack up to ``n_images`` correctly classified images and report.

    Each cohort image is attacked with a seed derived from the master seed
    and its id, so runs are reproducible image-by-image.  A transport
    failure against a remote model stops the run but still writes outputs,
    marked ``"partial": true``.
    """
    if spec.n_images < 1:
        raise ValueError("n_images must be at least 1")
    out_dir = Path(spec.out_dir) if spec.out_dir is not None else None
    results_path = None
    existing: dict[str, dict] = {}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        results_path = out_dir / "results.jsonl"
        if spec.resume:
            existing = _load_existing_records(results_path)
        elif results_path.exists():
            results_path.unlink()

    counter = QueryCounter(spec.model)
    records: list[dict] = []
    new_filter_queries = 0
    new_attack_queries = 0
    attacked_so_far = 0
    partial = False
    sink = open(results_path, "a", encoding="utf-8") if results_path is not None else None
    try:
        for item in spec.dataset:
            if attacked_so_far >= spec.n_images:
                break
            if item.id in existing:
                record = existing[item.id]
                records.append(record)
                if not record["filtered_out"]:
                    attacked_so_far += 1
                continue
            try:
                initial_label = int(np.argmax(counter.query(item.image)))
                new_filter_queries += 1
                if initial_label != item.label:
                    record = {
                        "id": item.id,
                        "label": int(item.label),
                        "initial_label": initial_label,
                        "filtered_out": True,
                    }
                else:
                    seed = derive_seed(spec.master_seed, item.id)
                    attack = clone(spec.attack)
                    attack.set_params(random_state=seed)
                    outcome = attack.run(counter, item.image, item.label)
                    new_attack_queries += outcome.queries_used
                    record = {
                        "id": item.id,
                        "label": int(item.label),
                        "initial_label": initial_label,
                        "filtered_out": False,
                        "seed": seed,
                        "success": outcome.success,
                        "queries_used": outcome.queries_used,
                        "adv_label": outcome.adv_label,
                        "best_value": max(r.value for r in outcome.trace),
                        "final_latent": [float(v) for v in outcome.final_latent],
                    }
                    attacked_so_far += 1
            except TransportError:
                partial = True
                break
            records.append(record)
            if sink is not None:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
    finally:
        if sink is not None:
            sink.close()

    # Runtime audit: every query this run is a filter check or an attack
    # query.  An aborted attack leaves queries outside any record, so the
    # identity only holds for complete runs.
    if not partial and counter.count != new_filter_queries + new_attack_queries:
        raise AssertionError(
            f"query accounting broke: counted {counter.count}, "
            f"expected {new_filter_queries} + {new_attack_queries}"
        )

    report = _aggregate(records, spec, partial)
    if out_dir is not None:
        _write_outputs(report, out_dir)
    return report


def report_table(report: AggregateReport) -> str:
    """Human-readable summary: success rate, average/median queries."""
    if report.successes:
        avg = f"{report.avg_queries_success:.2f}"
        med = f"{report.median_queries_success:g}"
    else:
        avg = med = "—"
    lines = [
        f"attacked images: {report.attacked_images}"
        + (" (empty cohort)" if report.empty_cohort else ""),
        f"successes: {report.successes}",
        "",
        f"{'Success Rate':>14}  {'Avg Queries':>12}  {'Median Queries':>15}",
        f"{report.success_rate * 100.0:>13.2f}%  {avg:>12}  {med:>15}",
    ]
    if report.partial:
        lines.append("")
        lines.append("WARNING: run aborted early (transport failure); results are partial.")
    return "\n".join(lines)
