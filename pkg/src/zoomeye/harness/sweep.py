"""Accuracy-versus-search-budget curves."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from zoomeye.errors import ContractError
from zoomeye.harness.bench import BackendFactory, run_bench
from zoomeye.oracle.cache import MemoStore
from zoomeye.search import SearchConfig

log = logging.getLogger(__name__)


@dataclass
class SweepPoint:
    setting: str
    value: float
    mean_steps: float
    accuracy: float
    zoom_success_rate: float | None
    mean_backend_calls: float


def scaling_sweep(
    dataset: str | Path,
    config: SearchConfig,
    factory: BackendFactory,
    budgets: Sequence[int] | None = None,
    taus: Sequence[float] | None = None,
    out_dir: str | Path | None = None,
    cache_path: str | Path | None = None,
    parallel: int = 1,
) -> list[SweepPoint]:
    """Bench once per step budget (or answering threshold) and collect the curve.

    All settings share one on-disk confidence cache, so a view scored in
    one setting is not re-queried in the next.
    """
    if (budgets is None) == (taus is None):
        raise ContractError("give exactly one of budgets or taus")
    values = list(budgets if budgets is not None else taus)
    if len(values) < 2:
        raise ContractError("a sweep needs at least two settings")
    setting = "max_steps" if budgets is not None else "tau"

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if cache_path is None and out is not None:
        cache_path = out / "confidence_cache.sqlite"
    store = MemoStore(cache_path) if cache_path is not None else None

    points: list[SweepPoint] = []
    try:
        for v in values:
            cfg = config.replace(**{setting: int(v) if setting == "max_steps" else float(v)})
            sub = out / f"{setting}_{v}" if out is not None else None
            run = run_bench(dataset, cfg, factory, sub, parallel=parallel, store=store)
            r = run.report
            points.append(
                SweepPoint(setting, float(v), r.mean_steps, r.accuracy, r.zoom_success_rate, r.mean_backend_calls)
            )
            log.info("%s=%s: %s", setting, v, r.summary())
    finally:
        if store is not None:
            store.close()

    if out is not None:
        (out / "curve.json").write_text(json.dumps([asdict(p) for p in points], indent=2) + "\n")
        plot_curve(points, out / "curve.png")
    return points


def plot_curve(points: Sequence[SweepPoint], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=120)
    xs = [p.mean_steps for p in points]
    ys = [p.accuracy for p in points]
    ax.plot(xs, ys, marker="o")
    for p in points:
        ax.annotate(f"{p.setting}={p.value:g}", (p.mean_steps, p.accuracy), fontsize=7, xytext=(3, -10), textcoords="offset points")
    ax.set_xlabel("mean search steps")
    ax.set_ylabel("accuracy (%)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
