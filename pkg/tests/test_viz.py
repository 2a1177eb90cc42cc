import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from kanmcp.config import RunConfig
from kanmcp.data import SynthSpec, standardize, synth_generate
from kanmcp.errors import AttributionShapeMismatch, EmptyHistory, IoError
from kanmcp.kan import edge_attribution, init_kan
from kanmcp.model import fused_codes, new_state, train_epoch
from kanmcp.plotting import kan_diagram_png, loss_curves_png
from kanmcp.viz import O_MIN, edge_function_svg, opacity, plot_loss_curves, render_dot, render_svg

SVG = "{http://www.w3.org/2000/svg}"


def edges(svg):
    root = ET.fromstring(svg.encode())
    return [e for e in root.iter(f"{SVG}line") if e.get("class") == "edge"]


def head_and_attr(seed=0):
    net = init_kan([9, 4, 1], seed=seed)
    attr = edge_attribution(net, np.random.default_rng(seed).normal(size=(20, 9)))
    return net, attr


def test_opacity_examples():
    np.testing.assert_array_equal(opacity(np.full(5, 0.3), 0.3), np.ones(5))
    op = opacity(np.array([0.001, 0.2, 1.0]), 1.0)
    np.testing.assert_allclose(op, [O_MIN, 0.2, 1.0])
    assert np.all(opacity(np.zeros(3), 0.0) == O_MIN)


def test_opacity_monotone():
    rng = np.random.default_rng(0)
    a = np.sort(rng.uniform(0, 1, size=500))
    op = opacity(a, a.max())
    assert np.all(np.diff(op) >= 0)
    above = a > O_MIN * a.max()
    assert np.all(np.diff(op[above]) > 0)


def test_uniform_and_dominant_attributions():
    net = init_kan([9, 4, 1])
    flat = [np.full((4, 9), 0.2), np.full((1, 4), 0.2)]
    ops = {e.get("stroke-opacity") for e in edges(render_svg(net, flat))}
    assert ops == {"1.000000"}
    dom = [np.full((4, 9), 0.01), np.full((1, 4), 0.01)]
    dom[0][2, 5] = 5.0
    es = edges(render_svg(net, dom))
    full = [e for e in es if float(e.get("stroke-opacity")) == 1.0]
    assert len(full) == 1 and (full[0].get("data-in"), full[0].get("data-out")) == ("5", "2")
    assert all(float(e.get("stroke-opacity")) >= O_MIN for e in es)


def test_svg_structure():
    net, attr = head_and_attr()
    svg = render_svg(net, attr)
    root = ET.fromstring(svg.encode())
    assert len(edges(svg)) == 40
    blocks = [r.get("data-block") for r in root.iter(f"{SVG}rect") if r.get("class") == "block"]
    assert blocks == ["t", "a", "v"]
    labels = [t.text for t in root.iter(f"{SVG}text") if t.get("class") == "block-label"]
    assert labels == ["text", "audio", "visual"]
    # node opacity is the max incident edge opacity
    es = edges(svg)
    for c in root.iter(f"{SVG}circle"):
        li, i = int(c.get("data-layer")), c.get("data-index")
        incident = [
            float(e.get("stroke-opacity"))
            for e in es
            if (int(e.get("data-layer")) == li and e.get("data-in") == i) or (int(e.get("data-layer")) == li - 1 and e.get("data-out") == i)
        ]
        assert float(c.get("fill-opacity")) == pytest.approx(max(incident), abs=1e-6)


def test_svg_errors_and_determinism(tmp_path):
    net, attr = head_and_attr()
    with pytest.raises(AttributionShapeMismatch):
        render_svg(net, attr[:1])
    with pytest.raises(AttributionShapeMismatch):
        render_svg(net, [attr[0].T, attr[1]])
    with pytest.raises(IoError):
        render_svg(net, attr, out=tmp_path / "missing" / "x.svg")
    render_svg(net, attr, out=tmp_path / "a.svg")
    render_svg(net, attr, out=tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_text_dominant_parse_back():
    ds = standardize(synth_generate(SynthSpec(n=1000, label_fn="text-dominant", seed=0)))
    cfg = RunConfig()
    state = new_state(cfg.hyper(ds.dims), ds.stats)
    for _ in range(15):
        train_epoch(state, ds.train, cfg.batch_size, cfg.seed)
    attr = edge_attribution(state.model.head, fused_codes(state.model, ds.val))
    svg = render_svg(state.model.head, attr)
    by_block = {}
    for e in edges(svg):
        if e.get("data-block"):
            by_block.setdefault(e.get("data-block"), []).append(float(e.get("stroke-opacity")))
    means = {k: np.mean(v) for k, v in by_block.items()}
    assert means["t"] > means["a"] and means["t"] > means["v"]


def test_dot_export():
    net, attr = head_and_attr(1)
    dot = render_dot(net, attr)
    assert dot == render_dot(net, attr)
    found = re.findall(r"l(\d+)n(\d+) -> l(\d+)n(\d+) \[weight=([^\]]+)\];", dot)
    assert len(found) == 9 * 4 + 4 * 1
    for li, p, lo, q in [(int(a), int(b), int(c), int(d)) for a, b, c, d, _ in found]:
        assert lo == li + 1
    for a, b, _, d, w in found:
        assert abs(float(w) - attr[int(a)][int(d), int(b)]) < 1e-9


def monotone_history(n=12):
    e = np.arange(n)
    return {"multi": list(2.0 * np.exp(-e / 4) + 0.1), "t": list(1.5 - 0.1 * e), "a": [1.0] * n, "v": list(1.2 / (1 + e))}


def polylines(svg):
    root = ET.fromstring(svg.encode())
    return {p.get("data-series"): p for p in root.iter(f"{SVG}polyline") if p.get("class") == "series"}


def test_loss_curves():
    svg = plot_loss_curves(monotone_history())
    lines = polylines(svg)
    assert set(lines) == {"multi", "t", "a", "v"}
    root = ET.fromstring(svg.encode())
    assert len([g for g in root.iter(f"{SVG}g") if g.get("class") == "legend-entry"]) == 4
    assert len([t for t in root.iter(f"{SVG}line") if t.get("class") == "tick"]) >= 2
    pts = {k: np.array([[float(v) for v in pt.split(",")] for pt in p.get("points").split()]) for k, p in lines.items()}
    for k in ("multi", "t", "v"):
        assert np.all(np.diff(pts[k][:, 1]) > 0)  # decreasing loss moves down the page
        assert np.all(np.diff(pts[k][:, 0]) > 0)
    assert len(set(pts["a"][:, 1])) == 1
    assert svg == plot_loss_curves(monotone_history())


def test_loss_curves_empty():
    with pytest.raises(EmptyHistory):
        plot_loss_curves({"multi": [], "t": [], "a": [], "v": []})
    with pytest.raises(EmptyHistory):
        plot_loss_curves({})


def test_edge_function_svg():
    net = init_kan([2, 1])
    svg = edge_function_svg(net.layers[0], 0, 1)
    root = ET.fromstring(svg.encode())
    (poly,) = [p for p in root.iter(f"{SVG}polyline") if p.get("class") == "edge-function"]
    assert len(poly.get("points").split()) == 64


def test_png_figures(tmp_path):
    loss_curves_png(monotone_history(), tmp_path / "loss.png")
    net, attr = head_and_attr()
    kan_diagram_png(net, attr, tmp_path / "kan.png")
    for name in ("loss.png", "kan.png"):
        assert (tmp_path / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    with pytest.raises(EmptyHistory):
        loss_curves_png({}, tmp_path / "x.png")
