"""Minimal hand-written SVG figures (no plotting dependency, no timestamps)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.3f}"


class _Canvas:
    def __init__(self, xlim, ylim, size: int = 480, pad: int = 40, equal: bool = True):
        (x0, x1), (y0, y1) = xlim, ylim
        if x1 - x0 <= 0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 - y0 <= 0:
            y0, y1 = y0 - 1, y1 + 1
        if equal:
            span = max(x1 - x0, y1 - y0)
            cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
            x0, x1, y0, y1 = cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.size, self.pad = size, pad
        self.items: list[str] = []

    def xy(self, x, y):
        w = self.size - 2 * self.pad
        px = self.pad + (x - self.x0) / (self.x1 - self.x0) * w
        py = self.size - self.pad - (y - self.y0) / (self.y1 - self.y0) * w
        return px, py

    def circle(self, x, y, r=3.0, fill="#000", stroke="none"):
        px, py = self.xy(x, y)
        self.items.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{r}" fill="{fill}" '
                          f'stroke="{stroke}"/>')

    def polyline(self, pts, stroke="#000", width=1.5, dash: str | None = None):
        coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in (self.xy(x, y) for x, y in pts))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
                          f'stroke-width="{width}"{extra}/>')

    def text(self, x_px, y_px, s, size=12):
        self.items.append(f'<text x="{_fmt(x_px)}" y="{_fmt(y_px)}" font-size="{size}" '
                          f'font-family="sans-serif">{escape(s)}</text>')

    def render(self, title: str = "") -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" '
                f'height="{self.size}" viewBox="0 0 {self.size} {self.size}">')
        body = [f'<rect width="{self.size}" height="{self.size}" fill="#fff"/>']
        if title:
            body.append(f'<text x="{self.pad}" y="{self.pad / 2 + 4}" font-size="14" '
                        f'font-family="sans-serif">{escape(title)}</text>')
        return "\n".join([head, *body, *self.items, "</svg>"]) + "\n"


def spectrum_svg(eigenvalues, title: str = "Koopman spectrum") -> str:
    """Eigenvalues in the complex plane against the unit circle."""
    lam = np.asarray(eigenvalues, dtype=complex)
    lim = max(1.1, float(np.max(np.abs(lam))) * 1.1 if lam.size else 1.1)
    cv = _Canvas((-lim, lim), (-lim, lim))
    theta = np.linspace(0, 2 * np.pi, 181)
    cv.polyline(np.c_[np.cos(theta), np.sin(theta)], stroke="#888", width=1.0, dash="4,3")
    cv.polyline([(-lim, 0), (lim, 0)], stroke="#ccc", width=0.8)
    cv.polyline([(0, -lim), (0, lim)], stroke="#ccc", width=0.8)
    for z in lam:
        cv.circle(z.real, z.imag, 3.5, fill="#d62728" if abs(z) > 1 else "#1f77b4")
    rho = float(np.max(np.abs(lam))) if lam.size else 0.0
    cv.text(cv.pad, cv.size - cv.pad / 3, f"spectral radius {rho:.4f}")
    return cv.render(title)


def curves_svg(curves, labels=None, title: str = "", markers=None) -> str:
    """Overlay of 2-D polylines; ``markers`` is an optional ``(n, 2)`` point set."""
    curves = [np.asarray(c, dtype=float).reshape(-1, 2) for c in curves]
    pts = np.concatenate(curves + ([np.asarray(markers).reshape(-1, 2)] if markers is not None
                                   else [])) if curves else np.zeros((1, 2))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    margin = 0.05 * max(float(np.max(hi - lo)), 1e-9)
    cv = _Canvas((lo[0] - margin, hi[0] + margin), (lo[1] - margin, hi[1] + margin))
    for i, c in enumerate(curves):
        colour = PALETTE[i % len(PALETTE)]
        cv.polyline(c, stroke=colour)
        if labels is not None and i < len(labels):
            cv.text(cv.size - 150, cv.pad + 14 * i, str(labels[i]), size=10)
    if markers is not None:
        for x, y in np.asarray(markers).reshape(-1, 2):
            cv.circle(x, y, 2.5, fill="#000")
    return cv.render(title)
