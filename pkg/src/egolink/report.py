"""Render an evaluation report: rank-k/mAP table and a CMC plot."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ParseError  # noqa: E402

TABLE_RANKS = (1, 5, 10)


def load_report(path) -> dict:
    """Read and sanity-check a report.json written by ``evaluate``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=path) from None
    return validate_report(data, path)


def validate_report(data, path=None) -> dict:
    if not isinstance(data, dict):
        raise ParseError("report must be a JSON object", path=path)
    for key in ("cmc", "map", "per_query"):
        if key not in data:
            raise ParseError(f"report lacks {key!r}", path=path)
    if not data["per_query"]:
        raise ParseError("report has no evaluated queries", path=path)
    cmc = data["cmc"]
    if not isinstance(cmc, list) or not cmc:
        raise ParseError("cmc must be a non-empty list", path=path)
    if any(not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0 for v in cmc):
        raise ParseError("cmc values must lie in [0, 1]", path=path)
    if any(b < a for a, b in zip(cmc, cmc[1:])):
        raise ParseError("cmc must be non-decreasing", path=path)
    if not isinstance(data["map"], (int, float)) or not 0.0 <= data["map"] <= 1.0:
        raise ParseError("map must lie in [0, 1]", path=path)
    return data


def _rank(cmc: list[float], k: int) -> float:
    return cmc[min(k, len(cmc)) - 1]


def metric_table(report: dict) -> str:
    cmc = report["cmc"]
    rows = [("protocol", str(report.get("protocol", "-")))]
    rows += [(f"rank-{k}", f"{100 * _rank(cmc, k):.2f}") for k in TABLE_RANKS]
    rows.append(("mAP", f"{100 * report['map']:.2f}"))
    rows.append(("queries", str(len(report["per_query"]))))
    width = max(len(name) for name, _ in rows)
    return "".join(f"{name:<{width}}  {value:>8}\n" for name, value in rows)


def plot_cmc(report: dict, path) -> None:
    """Write the CMC curve as SVG; output bytes depend only on the report."""
    cmc = report["cmc"]
    ranks = list(range(1, len(cmc) + 1))
    with plt.rc_context({"svg.hashsalt": "egolink", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(ranks, [100 * v for v in cmc], marker="o", markersize=3, linewidth=1.5)
        ax.set_xlabel("rank")
        ax.set_ylabel("matching rate (%)")
        ax.set_ylim(0, 105)
        ax.set_xlim(0.5, len(cmc) + 0.5)
        ax.grid(True, linewidth=0.5, alpha=0.5)
        ax.set_title(f"CMC ({report.get('protocol', '')}), mAP {100 * report['map']:.2f}%")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
