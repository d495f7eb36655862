"""Exact interventional Shapley values and plot-ready exports.

The value of a coalition S is the mean model output over background rows
with the columns in S overwritten by the explained row. All 2^d coalitions
are evaluated, so d is capped (default 20).
"""
from __future__ import annotations

import html
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyReport, InconsistentContract, TooManyFeatures

D_MAX = 20
# composite rows evaluated per model call
_CHUNK_ROWS = 1 << 17


@dataclass(frozen=True)
class ShapExplanation:
    participant_id: str
    feature_names: tuple[str, ...]
    values: np.ndarray          # explained row (standardized)
    phi: np.ndarray
    base_value: float
    prediction: float

    @property
    def local_gap(self) -> float:
        return abs(self.base_value + float(self.phi.sum()) - self.prediction)

    def to_json(self) -> dict:
        return {"participant_id": self.participant_id, "feature_names": list(self.feature_names),
                "values": [float(v) for v in self.values], "phi": [float(v) for v in self.phi],
                "base_value": self.base_value, "prediction": self.prediction}

    @classmethod
    def from_json(cls, obj) -> "ShapExplanation":
        return cls(obj["participant_id"], tuple(obj["feature_names"]), np.asarray(obj["values"], float),
                   np.asarray(obj["phi"], float), float(obj["base_value"]), float(obj["prediction"]))


def _as_function(model) -> tuple[Callable[[np.ndarray], np.ndarray], tuple[str, ...] | None]:
    if hasattr(model, "predict_array"):
        return model.predict_array, tuple(model.feature_names)
    return model, None


def coalition_values(f: Callable, x: np.ndarray, background: np.ndarray) -> np.ndarray:
    """v[mask] for every bitmask over the d columns (bit j = column j taken from x)."""
    d = len(x)
    B = background.shape[0]
    n_masks = 1 << d
    masks = np.arange(n_masks, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)       # (2^d, d)
    v = np.empty(n_masks)
    per_chunk = max(1, _CHUNK_ROWS // max(B, 1))
    for lo in range(0, n_masks, per_chunk):
        hi = min(n_masks, lo + per_chunk)
        take = bits[lo:hi, None, :]                                    # (m, 1, d)
        rows = np.where(take, x[None, None, :], background[None, :, :])  # (m, B, d)
        out = np.asarray(f(rows.reshape(-1, d)), float).reshape(hi - lo, B)
        v[lo:hi] = out.mean(axis=1)
    return v


def shapley_from_values(v: np.ndarray, d: int) -> np.ndarray:
    masks = np.arange(1 << d, dtype=np.int64)
    size = np.zeros(1 << d, np.int64)
    for j in range(d):
        size += (masks >> j) & 1
    weight = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])
    phi = np.zeros(d)
    for j in range(d):
        without = masks[((masks >> j) & 1) == 0]
        phi[j] = float(np.dot(weight[size[without]], v[without | (1 << j)] - v[without]))
    return phi


def exact_shapley(model, x, background, d_max: int = D_MAX, participant_id: str = "",
                  feature_names: Sequence[str] | None = None) -> ShapExplanation:
    """Shapley values of ``model`` at ``x`` against ``background`` rows.

    ``model`` is a TrainedModel or any callable mapping an (n, d) array to n
    outputs.
    """
    f, names = _as_function(model)
    x = np.asarray(x, float).ravel()
    background = np.atleast_2d(np.asarray(background, float))
    d = len(x)
    if d > d_max:
        raise TooManyFeatures(d, d_max)
    if background.shape[0] == 0 or background.shape[1] != d:
        raise ValueError("background must be a non-empty matrix with one column per feature")
    names = tuple(feature_names) if feature_names is not None else (names or tuple(f"x{i}" for i in range(d)))
    v = coalition_values(f, x, background)
    phi = shapley_from_values(v, d)
    return ShapExplanation(participant_id, names, x.copy(), phi, float(v[0]), float(v[-1]))


# ---------------------------------------------------------------- exports

@dataclass(frozen=True)
class FeatureSummary:
    name: str
    importance: float            # mean |phi|
    mean_effect: float           # mean signed phi
    points: tuple[tuple[str, float, float], ...]  # (participant, value, phi)


def export_summary(explanations: Sequence[ShapExplanation], align: bool = False) -> list[FeatureSummary]:
    """Per-feature mean |phi| and (value, phi) pairs, most important first.

    With ``align`` explanations over different feature sets are merged and a
    feature missing from an explanation counts as phi = 0 there.
    """
    if not explanations:
        raise EmptyReport("no explanations to summarize")
    if align:
        names = sorted({n for e in explanations for n in e.feature_names})
    else:
        names = list(explanations[0].feature_names)
        for e in explanations:
            if list(e.feature_names) != names:
                raise InconsistentContract("explanations use different feature sets")
    rows = []
    for name in names:
        phis, points = [], []
        for e in explanations:
            if name in e.feature_names:
                j = e.feature_names.index(name)
                phis.append(float(e.phi[j]))
                points.append((e.participant_id, float(e.values[j]), float(e.phi[j])))
            else:
                phis.append(0.0)
        phis = np.asarray(phis)
        rows.append(FeatureSummary(name, float(np.abs(phis).mean()), float(phis.mean()), tuple(points)))
    rows.sort(key=lambda r: (-r.importance, r.name))
    return rows


def summary_json(summary: Sequence[FeatureSummary]) -> str:
    return json.dumps([{"feature": s.name, "importance": s.importance, "mean_effect": s.mean_effect,
                        "points": [list(p) for p in s.points]} for s in summary])


def export_force(explanation: ShapExplanation, tol: float = 0.0) -> dict:
    """Base value, prediction and signed contributions ordered by |phi|.

    Positive contributions push toward the depressed class. Contributions
    with |phi| <= ``tol`` are omitted.
    """
    order = sorted(range(len(explanation.phi)), key=lambda j: (-abs(explanation.phi[j]), explanation.feature_names[j]))
    contributions = [
        {"feature": explanation.feature_names[j], "value": float(explanation.values[j]),
         "phi": float(explanation.phi[j])}
        for j in order if abs(explanation.phi[j]) > tol
    ]
    return {"participant_id": explanation.participant_id, "base_value": explanation.base_value,
            "prediction": explanation.prediction, "contributions": contributions}


# ---------------------------------------------------------------- SVG

def _color(t: float) -> str:
    # blue (low feature value) to red (high)
    t = min(max(t, 0.0), 1.0)
    return "#%02x%02x%02x" % (int(30 + 225 * t), int(136 - 100 * t), int(229 - 180 * t))


def summary_svg(summary: Sequence[FeatureSummary], max_features: int = 15, width: int = 720) -> str:
    rows = list(summary)[:max_features]
    row_h, left, right = 28, 300, 30
    height = row_h * len(rows) + 60
    all_phi = [p[2] for r in rows for p in r.points] or [0.0]
    span = max(abs(min(all_phi)), abs(max(all_phi)), 1e-12)
    x_of = lambda phi: left + (phi + span) / (2 * span) * (width - left - right)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<line x1="{x_of(0):.1f}" y1="10" x2="{x_of(0):.1f}" y2="{height - 40}" stroke="#999"/>']
    for i, r in enumerate(rows):
        y = 25 + i * row_h
        out.append(f'<text x="{left - 8}" y="{y + 4}" text-anchor="end">{html.escape(r.name)}</text>')
        vals = [p[1] for p in r.points]
        lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
        seen: dict[int, int] = {}
        for _, value, phi in r.points:
            px = x_of(phi)
            slot = int(px // 4)
            k = seen.get(slot, 0)
            seen[slot] = k + 1
            dy = ((k + 1) // 2) * 3 * (1 if k % 2 else -1)
            t = 0.5 if hi == lo else (value - lo) / (hi - lo)
            out.append(f'<circle cx="{px:.1f}" cy="{y + dy:.1f}" r="2.5" fill="{_color(t)}"/>')
    out.append(f'<text x="{(left + width - right) / 2:.0f}" y="{height - 15}" text-anchor="middle">'
               f'Shapley value (impact on P(depressed))</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def force_svg(force: dict, width: int = 720) -> str:
    base, pred = force["base_value"], force["prediction"]
    contribs = force["contributions"]
    lo = min([base, pred] + [base + sum(c["phi"] for c in contribs[: i + 1]) for i in range(len(contribs))])
    hi = max([base, pred] + [base + sum(c["phi"] for c in contribs[: i + 1]) for i in range(len(contribs))])
    pad = max(hi - lo, 1e-6) * 0.1
    lo, hi = lo - pad, hi + pad
    x_of = lambda v: 20 + (v - lo) / (hi - lo) * (width - 40)
    height = 60 + 18 * len(contribs)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<text x="{x_of(base):.1f}" y="14" text-anchor="middle">base {base:.3f}</text>',
           f'<line x1="{x_of(base):.1f}" y1="18" x2="{x_of(base):.1f}" y2="{height - 20}" stroke="#999"/>']
    cursor = base
    for i, c in enumerate(contribs):
        a, b = cursor, cursor + c["phi"]
        color = "#e5383b" if c["phi"] > 0 else "#1e88e5"
        y = 26 + 18 * i
        out.append(f'<rect x="{x_of(min(a, b)):.1f}" y="{y}" width="{max(abs(x_of(b) - x_of(a)), 0.5):.1f}" height="12" fill="{color}"/>')
        out.append(f'<text x="{x_of(max(a, b)) + 4:.1f}" y="{y + 10}">{html.escape(c["feature"])} ({c["phi"]:+.3f})</text>')
        cursor = b
    out.append(f'<text x="{x_of(pred):.1f}" y="{height - 6}" text-anchor="middle">f(x) = {pred:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
