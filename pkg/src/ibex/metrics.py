"""Basis interpretability scores and report emission.

score1 integrates the count of detectors whose validation IoU clears a
threshold xi over xi in [0, 1]; since the integrand is a step function the
integral is exactly the sum of the scores. score2 integrates the count of
unique labels cleared by their best detector, which reduces to the sum of
per-label maxima. Reports serialize to CSV + JSON + SVG with
byte-deterministic output.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetError
from .tensorstore import FeatureDataset


def _check_scores(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size and (scores.min() < 0 or scores.max() > 1):
        raise ValueError("validation scores must lie in [0, 1]")
    return scores


def score1(val_scores) -> float:
    """Area of xi -> #{i : phi_i >= xi} over [0, 1]; equals sum(phi)."""
    return float(_check_scores(val_scores).sum())


def _label_maxima(val_scores: np.ndarray, labels: Sequence) -> dict:
    maxima: dict = {}
    for score, label in zip(val_scores, labels):
        key = label
        if key not in maxima or score > maxima[key]:
            maxima[key] = score
    return maxima


def score2(val_scores, labels: Sequence) -> float:
    """Area of xi -> #unique labels with a detector at phi >= xi.

    Equals the sum over unique labels of the best score among detectors
    carrying that label.
    """
    scores = _check_scores(val_scores)
    if len(labels) != scores.size:
        raise ValueError("labels and scores must align")
    return float(sum(_label_maxima(scores, labels).values()))


def psi_curve(val_scores, labels: Sequence) -> list[tuple[float, int]]:
    """Breakpoints (xi, psi(xi)) of the unique-label step function.

    psi(xi) counts labels whose best detector reaches phi >= xi. The point
    at xi = 0 reports the right-limit (labels with phi > 0), the
    measure-zero boundary convention; a closing point at xi = 1.0 is
    always present.
    """
    scores = _check_scores(val_scores)
    maxima = np.array(sorted(_label_maxima(scores, labels).values()))
    points = [(0.0, int((maxima > 0).sum()))]
    for v in np.unique(maxima[maxima > 0]):
        points.append((float(v), int((maxima >= v).sum())))
    if not points or points[-1][0] < 1.0:
        points.append((1.0, int((maxima >= 1.0).sum())))
    return points


@dataclass
class DetectorRow:
    detector: int
    concept_id: int
    concept_name: str
    val_score: float
    degenerate: bool = False


@dataclass
class InterpReport:
    """Everything needed to compare bases: scores, curve, per-detector rows."""

    basis_name: str
    rows: list[DetectorRow]
    score1: float = 0.0
    score2: float = 0.0
    curve: list[tuple[float, int]] = field(default_factory=list)

    @classmethod
    def build(cls, basis_name: str, rows: list[DetectorRow]) -> "InterpReport":
        if not rows:
            raise DatasetError("cannot build a report for an empty basis")
        scores = np.array([r.val_score for r in rows])
        labels = [r.concept_id for r in rows]
        return cls(
            basis_name=basis_name,
            rows=rows,
            score1=score1(scores),
            score2=score2(scores, labels),
            curve=psi_curve(scores, labels),
        )

    def summary(self) -> dict:
        return {
            "basis": self.basis_name,
            "n_detectors": len(self.rows),
            "score1": self.score1,
            "score2": self.score2,
            "psi_curve": [[x, p] for x, p in self.curve],
            "detectors": [
                [r.detector, r.concept_id, r.concept_name, r.val_score,
                 int(r.degenerate)]
                for r in self.rows
            ],
        }

    @classmethod
    def from_summary(cls, doc: dict) -> "InterpReport":
        rows = [
            DetectorRow(int(d), int(cid), str(name), float(score), bool(deg))
            for d, cid, name, score, deg in doc["detectors"]
        ]
        return cls(
            basis_name=doc["basis"],
            rows=rows,
            score1=float(doc["score1"]),
            score2=float(doc["score2"]),
            curve=[(float(x), int(p)) for x, p in doc["psi_curve"]],
        )


def topk_activations(
    w_rows: np.ndarray,
    feature_ds: FeatureDataset,
    k: int,
    split: str = "val",
    std_mean: np.ndarray | None = None,
    std_scale: np.ndarray | None = None,
) -> list[list[tuple[str, tuple[int, int], float]]]:
    """Exact top-k pixel activations per detector over a split.

    Entries are (image_id, (row, col), activation); activations are
    standardized when the model's statistics are supplied, raw projections
    otherwise. Ranking ties break by (image_id, pixel) order. If k exceeds
    the pixel population the full ranking is returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ds = feature_ds.subset(split)
    if len(ds) == 0:
        raise DatasetError(f"split {split!r} holds no images")
    w = np.asarray(w_rows, dtype=np.float64)
    n_det = w.shape[0]
    entries: list[list] = [[] for _ in range(n_det)]
    for e in ds.images:
        feats = ds.load_features(e.image_id).astype(np.float64)
        proj = feats @ w.T  # [h, w, I]
        if std_mean is not None and std_scale is not None:
            proj = (proj - std_mean) / std_scale
        for i in range(n_det):
            flat = proj[:, :, i].ravel()
            for p in np.argsort(-flat, kind="stable")[: min(k, flat.size)]:
                entries[i].append(
                    (-flat[p], e.image_id, (int(p) // e.width, int(p) % e.width))
                )
    out = []
    for i in range(n_det):
        entries[i].sort()
        out.append(
            [(img, pix, float(-neg)) for neg, img, pix in entries[i][:k]]
        )
    return out


def _fmt(x: float) -> str:
    return f"{x:.6f}"


_SVG_COLORS = ("#4878cf", "#e1812c", "#3a923a", "#c03d3e", "#9372b2")


def render_svg(reports: Sequence[InterpReport]) -> str:
    """Bar chart of score1/score2 per basis plus the psi curves."""
    width, height = 640, 360
    pad, chart_w = 50, 250
    bar_zone_h = height - 2 * pad
    max_score = max(max(r.score1, 1e-9) for r in reports)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{pad}" y="25" font-size="14" font-family="sans-serif">'
        "interpretability scores</text>",
        f'<text x="{pad + chart_w + 60}" y="25" font-size="14" '
        'font-family="sans-serif">unique-label curve</text>',
    ]
    n = len(reports)
    group_w = chart_w / max(n, 1)
    for idx, rep in enumerate(reports):
        color = _SVG_COLORS[idx % len(_SVG_COLORS)]
        x0 = pad + idx * group_w
        for j, value in enumerate((rep.score1, rep.score2)):
            bar_h = bar_zone_h * value / max_score
            bx = x0 + j * group_w / 2.2
            by = height - pad - bar_h
            opacity = "1.0" if j == 0 else "0.55"
            parts.append(
                f'<rect x="{_fmt(bx)}" y="{_fmt(by)}" width="{_fmt(group_w / 2.6)}" '
                f'height="{_fmt(bar_h)}" fill="{color}" fill-opacity="{opacity}"/>'
            )
            parts.append(
                f'<text x="{_fmt(bx)}" y="{_fmt(by - 4)}" font-size="10" '
                f'font-family="sans-serif">{_fmt(value)}</text>'
            )
        parts.append(
            f'<text x="{_fmt(x0)}" y="{height - pad + 14}" font-size="11" '
            f'font-family="sans-serif">{rep.basis_name}</text>'
        )
    # psi curves, right panel
    cx0, cy0 = pad + chart_w + 60, height - pad
    curve_w, curve_h = width - cx0 - pad, bar_zone_h
    max_psi = max(max((p for _, p in r.curve), default=1) for r in reports)
    for idx, rep in enumerate(reports):
        color = _SVG_COLORS[idx % len(_SVG_COLORS)]
        pts = []
        prev_psi = rep.curve[0][1] if rep.curve else 0
        for x, p in rep.curve:
            px = cx0 + curve_w * x
            pts.append(f"{_fmt(px)},{_fmt(cy0 - curve_h * prev_psi / max(max_psi, 1))}")
            pts.append(f"{_fmt(px)},{_fmt(cy0 - curve_h * p / max(max_psi, 1))}")
            prev_psi = p
        pts.append(f"{_fmt(cx0 + curve_w)},{_fmt(cy0 - curve_h * prev_psi / max(max_psi, 1))}")
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
            'stroke-width="1.5"/>'
        )
    parts.append(
        f'<line x1="{cx0}" y1="{cy0}" x2="{cx0 + curve_w}" y2="{cy0}" '
        'stroke="black" stroke-width="1"/>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(
    reports: InterpReport | Sequence[InterpReport], out_dir: str | Path
) -> dict[str, Path]:
    """Write report.csv / report.json / report.svg; bytes are deterministic."""
    if isinstance(reports, InterpReport):
        reports = [reports]
    reports = list(reports)
    if not reports or any(not r.rows for r in reports):
        raise DatasetError("refusing to emit a report for an empty basis")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    csv_path = out / "report.csv"
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["basis", "detector", "concept_id", "concept_name", "val_score", "degenerate"]
    )
    for rep in reports:
        for r in rep.rows:
            writer.writerow(
                [rep.basis_name, r.detector, r.concept_id, r.concept_name,
                 repr(float(r.val_score)), int(r.degenerate)]
            )
    csv_path.write_text(buf.getvalue())

    json_path = out / "report.json"
    json_path.write_text(
        json.dumps([r.summary() for r in reports], indent=2, sort_keys=True) + "\n"
    )

    svg_path = out / "report.svg"
    svg_path.write_text(render_svg(reports))
    return {"csv": csv_path, "json": json_path, "svg": svg_path}
