"""Transparency-coded KAN diagrams and loss-curve charts as SVG / DOT text.

Edge opacity is ``clip(a / max_a, o_min, 1)`` with ``max_a`` the largest
attribution in the diagram, so the most important edge is fully opaque and
the rest fade in proportion.  A node takes the opacity of its most opaque
incident edge.  Output is a pure function of the inputs: coordinates and
opacities are written with fixed precision, so identical inputs give
byte-identical files.
"""

from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import AttributionShapeMismatch, EmptyHistory, IoError

O_MIN = 0.05
MODALITY_BLOCKS = (("t", "text", "#1f77b4"), ("a", "audio", "#2ca02c"), ("v", "visual", "#d62728"))
SERIES = (("multi", "multimodal", "#000000"), ("t", "text", "#1f77b4"), ("a", "audio", "#2ca02c"), ("v", "visual", "#d62728"))


@dataclass
class RenderSpec:
    width: int = 640
    height: int = 420
    margin: int = 60
    node_radius: float = 7.0
    o_min: float = O_MIN
    blocks: tuple = field(default_factory=lambda: MODALITY_BLOCKS)
    edge_color: str = "#222222"


def opacity(a, max_a, o_min=O_MIN):
    a = np.asarray(a, dtype=float)
    if max_a <= 0:
        return np.full(a.shape, o_min)
    return np.clip(a / max_a, o_min, 1.0)


def _f(v):
    return f"{v:.6f}"


def _write(text, out):
    if out is None:
        return text
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc.strerror}") from None
    return text


def _check_attributions(net, attributions):
    if len(attributions) != len(net.layers):
        raise AttributionShapeMismatch(f"{len(attributions)} attribution matrices for {len(net.layers)} layers")
    out = []
    for layer, a in zip(net.layers, attributions):
        a = np.asarray(a, dtype=float)
        if a.shape != (layer.n_out, layer.n_in):
            raise AttributionShapeMismatch(f"{layer.name}: expected {(layer.n_out, layer.n_in)}, got {a.shape}")
        if np.any(a < 0):
            raise AttributionShapeMismatch(f"{layer.name}: attributions must be non-negative")
        out.append(a)
    return out


def _block_of(p, n_inputs, blocks):
    size = n_inputs // len(blocks) if n_inputs % len(blocks) == 0 else None
    if size is None:
        return None
    return blocks[p // size]


def _layout(widths, spec):
    xs = np.linspace(spec.margin, spec.width - spec.margin, len(widths))
    top, bottom = spec.margin, spec.height - spec.margin
    ys = []
    for n in widths:
        if n == 1:
            ys.append(np.array([(top + bottom) / 2]))
        else:
            ys.append(np.linspace(top, bottom, n))
    return xs, ys


def render_svg(net, attributions, spec=None, out=None):
    """SVG 1.1 diagram of ``net`` with edges faded by attribution; returns the text."""
    spec = spec or RenderSpec()
    attrs = _check_attributions(net, attributions)
    widths = net.widths
    xs, ys = _layout(widths, spec)
    max_a = max(float(a.max()) for a in attrs)
    node_op = [np.full(n, spec.o_min) for n in widths]
    lines = []
    for li, a in enumerate(attrs):
        op = opacity(a, max_a, spec.o_min)
        for q in range(a.shape[0]):
            for p in range(a.shape[1]):
                o = float(op[q, p])
                node_op[li][p] = max(node_op[li][p], o)
                node_op[li + 1][q] = max(node_op[li + 1][q], o)
                block = _block_of(p, widths[0], spec.blocks) if li == 0 else None
                tag = f' data-block="{block[0]}"' if block else ""
                lines.append(
                    f'<line class="edge" data-layer="{li}" data-in="{p}" data-out="{q}"{tag} '
                    f'data-attribution="{a[q, p]!r}" '
                    f'x1="{_f(xs[li])}" y1="{_f(ys[li][p])}" x2="{_f(xs[li + 1])}" y2="{_f(ys[li + 1][q])}" '
                    f'stroke="{spec.edge_color}" stroke-width="2" stroke-opacity="{_f(o)}"/>'
                )
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{spec.width}" height="{spec.height}" '
        f'viewBox="0 0 {spec.width} {spec.height}">',
        f'<rect width="{spec.width}" height="{spec.height}" fill="#ffffff"/>',
    ]
    # modality blocks around the input column
    n0 = widths[0]
    if n0 % len(spec.blocks) == 0:
        size = n0 // len(spec.blocks)
        gap = ys[0][1] - ys[0][0] if n0 > 1 else 2 * spec.node_radius
        for bi, (key, label, color) in enumerate(spec.blocks):
            y0 = ys[0][bi * size] - gap / 2
            y1 = ys[0][bi * size + size - 1] + gap / 2
            parts.append(
                f'<rect class="block" data-block="{key}" x="{_f(xs[0] - 2 * spec.node_radius)}" y="{_f(y0)}" '
                f'width="{_f(4 * spec.node_radius)}" height="{_f(y1 - y0)}" fill="{color}" fill-opacity="0.12" '
                f'stroke="{color}"/>'
            )
            parts.append(
                f'<text class="block-label" x="{_f(xs[0] - 3 * spec.node_radius)}" y="{_f((y0 + y1) / 2)}" '
                f'text-anchor="end" dominant-baseline="middle" font-family="sans-serif" font-size="12" '
                f'fill="{color}">{escape(label)}</text>'
            )
    parts.extend(lines)
    for li, n in enumerate(widths):
        for i in range(n):
            color = "#444444"
            if li == 0:
                block = _block_of(i, n0, spec.blocks)
                color = block[2] if block else color
            parts.append(
                f'<circle class="node" data-layer="{li}" data-index="{i}" cx="{_f(xs[li])}" cy="{_f(ys[li][i])}" '
                f'r="{_f(spec.node_radius)}" fill="{color}" fill-opacity="{_f(node_op[li][i])}"/>'
            )
    parts.append("</svg>")
    return _write("\n".join(parts) + "\n", out)


def render_dot(net, attributions, out=None):
    """Graphviz digraph; nodes are ``l{layer}n{index}`` and edges carry ``weight=attribution``."""
    attrs = _check_attributions(net, attributions)
    widths = net.widths
    lines = ["digraph kan {", "  rankdir=LR;"]
    for li, n in enumerate(widths):
        for i in range(n):
            label = f"l{li}n{i}"
            if li == 0:
                block = _block_of(i, widths[0], MODALITY_BLOCKS)
                if block:
                    label = f"{block[0]}{i % (widths[0] // len(MODALITY_BLOCKS))}"
            lines.append(f'  l{li}n{i} [label="{label}"];')
    for li, a in enumerate(attrs):
        for q in range(a.shape[0]):
            for p in range(a.shape[1]):
                lines.append(f"  l{li}n{p} -> l{li + 1}n{q} [weight={float(a[q, p])!r}];")
    lines.append("}")
    return _write("\n".join(lines) + "\n", out)


def _ticks(n_epochs, max_ticks=10):
    step = max(1, int(np.ceil(n_epochs / max_ticks)))
    ticks = list(range(1, n_epochs + 1, step))
    if ticks[-1] != n_epochs:
        ticks.append(n_epochs)
    return ticks


def plot_loss_curves(history, out=None, spec=None):
    """Line chart of per-epoch training losses, one polyline per series."""
    spec = spec or RenderSpec(width=640, height=400)
    series = [(k, label, color) for k, label, color in SERIES if k in history]
    if len(series) != len(SERIES) or any(len(history[k]) == 0 for k, _, _ in series):
        raise EmptyHistory("history needs non-empty 'multi', 't', 'a' and 'v' series")
    n = len(history["multi"])
    if any(len(history[k]) != n for k, _, _ in series):
        raise EmptyHistory("history series have different lengths")
    values = np.array([history[k] for k, _, _ in series], dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    left, right = spec.margin, spec.width - spec.margin - 110
    top, bottom = spec.margin / 2, spec.height - spec.margin

    def px(epoch):
        return left + (right - left) * ((epoch - 1) / (n - 1) if n > 1 else 0.5)

    def py(v):
        return top + (bottom - top) * (hi - v) / (hi - lo)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{spec.width}" height="{spec.height}" '
        f'viewBox="0 0 {spec.width} {spec.height}">',
        f'<rect width="{spec.width}" height="{spec.height}" fill="#ffffff"/>',
        f'<line class="axis" x1="{_f(left)}" y1="{_f(bottom)}" x2="{_f(right)}" y2="{_f(bottom)}" stroke="#000000"/>',
        f'<line class="axis" x1="{_f(left)}" y1="{_f(top)}" x2="{_f(left)}" y2="{_f(bottom)}" stroke="#000000"/>',
    ]
    for e in _ticks(n):
        x = px(e)
        parts.append(f'<line class="tick" x1="{_f(x)}" y1="{_f(bottom)}" x2="{_f(x)}" y2="{_f(bottom + 5)}" stroke="#000000"/>')
        parts.append(
            f'<text class="tick-label" x="{_f(x)}" y="{_f(bottom + 18)}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{e}</text>'
        )
    for v in np.linspace(lo, hi, 5):
        y = py(v)
        parts.append(f'<line class="ytick" x1="{_f(left - 5)}" y1="{_f(y)}" x2="{_f(left)}" y2="{_f(y)}" stroke="#000000"/>')
        parts.append(
            f'<text class="ytick-label" x="{_f(left - 8)}" y="{_f(y)}" text-anchor="end" dominant-baseline="middle" '
            f'font-family="sans-serif" font-size="11">{v:.3g}</text>'
        )
    parts.append(
        f'<text x="{_f((left + right) / 2)}" y="{_f(spec.height - 12)}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">epoch</text>'
    )
    for (key, label, color), row in zip(series, values):
        pts = " ".join(f"{_f(px(i + 1))},{_f(py(v))}" for i, v in enumerate(row))
        parts.append(f'<polyline class="series" data-series="{key}" fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
    for i, (key, label, color) in enumerate(series):
        y = top + 10 + 18 * i
        parts.append(
            f'<g class="legend-entry" data-series="{key}"><line x1="{_f(right + 15)}" y1="{_f(y)}" '
            f'x2="{_f(right + 35)}" y2="{_f(y)}" stroke="{color}" stroke-width="2"/>'
            f'<text x="{_f(right + 40)}" y="{_f(y)}" dominant-baseline="middle" font-family="sans-serif" '
            f'font-size="11">{escape(label)}</text></g>'
        )
    parts.append("</svg>")
    return _write("\n".join(parts) + "\n", out)


def edge_function_svg(layer, q, p, n_points=64, out=None, size=(240, 160)):
    """Sampled plot of one edge function phi_qp over its grid range."""
    t = np.linspace(layer.grid.t_min, layer.grid.t_max, n_points)
    phi = layer.edge_values(np.tile(t[:, None], (1, layer.n_in)))[:, q, p]
    w, h = size
    lo, hi = float(phi.min()), float(phi.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    xs = 10 + (w - 20) * (t - t[0]) / (t[-1] - t[0])
    ys = 10 + (h - 20) * (hi - phi) / (hi - lo)
    pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(xs, ys))
    text = "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
            f'<polyline class="edge-function" data-layer="{layer.name}" data-in="{p}" data-out="{q}" '
            f'fill="none" stroke="#000000" stroke-width="1.5" points="{pts}"/>',
            "</svg>",
        ]
    )
    return _write(text + "\n", out)
