"""PCA by deflated power iteration, plus CSV/SVG scatter output."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TooFewSamples(ValueError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, component: int, iterations: int):
        super().__init__(f"component {component} did not converge after {iterations} iterations")
        self.component = component
        self.iterations = iterations


class DimensionMismatch(ValueError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray          # (n_components, d), orthonormal rows
    explained_variance: np.ndarray  # non-increasing


def _fix_sign(v: np.ndarray) -> np.ndarray:
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def _orthogonalize(v, basis):
    for c in basis:
        v = v - (c @ v) * c
    return v


def _null_direction(basis, d):
    """A unit vector orthogonal to ``basis``, for zero-variance components."""
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        v = _orthogonalize(_orthogonalize(e, basis), basis)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm
    raise RuntimeError("no orthogonal direction left")


def top_eigenpairs(cov: np.ndarray, n_components: int, tol: float = 1e-10, max_iter: int = 10_000):
    """Leading eigenpairs of a symmetric PSD matrix by power iteration with deflation."""
    d = cov.shape[0]
    scale = max(float(np.trace(cov)), np.finfo(float).tiny)
    vectors, values = [], []
    residual = cov.copy()
    for comp in range(n_components):
        v = _orthogonalize(np.ones(d) + np.arange(d) / d, vectors)
        norm = np.linalg.norm(v)
        v = v / norm if norm > 1e-12 else _null_direction(vectors, d)
        for it in range(1, max_iter + 1):
            w = _orthogonalize(residual @ v, vectors)
            norm = np.linalg.norm(w)
            if norm <= 1e-14 * scale:
                # remaining spectrum is numerically zero
                v = _null_direction(vectors, d)
                break
            w /= norm
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        else:
            raise NoConvergence(comp, max_iter)
        v = _fix_sign(v)
        lam = max(float(v @ cov @ v), 0.0)
        vectors.append(v)
        values.append(lam)
        residual = residual - lam * np.outer(v, v)
    return np.array(vectors), np.array(values)


def fit_pca(data, n_components: int = 2, tol: float = 1e-10, max_iter: int = 10_000) -> PcaModel:
    """Center, form the sample covariance (divisor n-1) and extract the top components.

    Each component's sign makes its largest-magnitude entry positive.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples("PCA needs at least two samples")
    n, d = X.shape
    if not 1 <= n_components <= min(n - 1, d):
        raise TooFewSamples(f"n_components={n_components} exceeds min(n-1, d)={min(n - 1, d)}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    components, variances = top_eigenpairs(cov, n_components, tol, max_iter)
    order = np.argsort(-variances, kind="stable")
    return PcaModel(mean, components[order], variances[order])


def project(model: PcaModel, vectors) -> np.ndarray:
    V = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if V.shape[1] != model.mean.shape[0]:
        raise DimensionMismatch(f"expected dimension {model.mean.shape[0]}, got {V.shape[1]}")
    return (V - model.mean) @ model.components.T


# -- scatter output -------------------------------------------------------------

FILL = {"covid": "#d62728", "healthy": "#1f77b4"}
WIDTH, HEIGHT, MARGIN = 640, 480, 40


@dataclass
class ScatterPoint:
    x: float
    y: float
    label: str
    subject_id: str
    day_index: int = 0


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def scatter_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "label", "subject_id", "day_index"])
    for p in points:
        w.writerow([repr(float(p.x)), repr(float(p.y)), p.label, p.subject_id, p.day_index])
    return buf.getvalue()


def scatter_svg(points, highlight_subject: str | None = None, title: str = "PCA projection") -> str:
    """Standalone SVG: one circle per point, filled by class.

    Points of ``highlight_subject`` get a black outline and a day-index tag
    so longitudinal samples of one donor can be followed.
    """
    xs = np.array([p.x for p in points], dtype=np.float64)
    ys = np.array([p.y for p in points], dtype=np.float64)
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    sx = (WIDTH - 2 * MARGIN) / (x1 - x0) if x1 > x0 else 0.0
    sy = (HEIGHT - 2 * MARGIN) / (y1 - y0) if y1 > y0 else 0.0
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f"<title>{title}</title>",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    for p in points:
        cx = MARGIN + (p.x - x0) * sx if sx else WIDTH / 2
        cy = HEIGHT - MARGIN - (p.y - y0) * sy if sy else HEIGHT / 2
        fill = FILL.get(p.label, "#7f7f7f")
        if highlight_subject is not None and p.subject_id == highlight_subject:
            lines.append(f'<circle class="point highlight" cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="6" '
                         f'fill="{fill}" stroke="black" stroke-width="2"/>')
            lines.append(f'<text x="{_fmt(cx + 8)}" y="{_fmt(cy - 8)}" font-size="10">d{p.day_index}</text>')
        else:
            lines.append(f'<circle class="point" cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="4" '
                         f'fill="{fill}" fill-opacity="0.8"/>')
    for i, (label, colour) in enumerate(sorted(FILL.items())):
        y = 16 + 14 * i
        lines.append(f'<circle cx="12" cy="{y}" r="4" fill="{colour}"/>')
        lines.append(f'<text x="20" y="{y + 4}" font-size="11">{label}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_scatter(points, path, highlight_subject: str | None = None) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    points = list(points)
    if not points:
        raise ValueError("no points to plot")
    base = Path(path)
    csv_path, svg_path = base.with_suffix(".csv"), base.with_suffix(".svg")
    csv_path.write_text(scatter_csv(points), encoding="utf-8")
    svg_path.write_text(scatter_svg(points, highlight_subject), encoding="utf-8")
    return csv_path, svg_path
