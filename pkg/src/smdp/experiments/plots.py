"""
This submodule renders the figures of the experiments as standalone SVG
documents from ``jinja2`` templates: heatmaps (score fields), line charts
(ablation curves, loss histories) and image grids (heat-equation
reconstructions). The CSV reports are the actual results, the figures are
a convenience for looking at them.
"""

import os
import textwrap
import typing

import jinja2
import loguru
import numpy as np


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "PALETTE",

    "color_for",
    "heatmap_svg",
    "line_chart_svg",
    "image_grid_svg",
    "write_svg",
]


logger = loguru.logger


PALETTE: typing.List[str] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


_ENVIRONMENT = jinja2.Environment(autoescape=True, trim_blocks=True, lstrip_blocks=True)


_HEATMAP_TEMPLATE = _ENVIRONMENT.from_string(textwrap.dedent("""
    <svg xmlns="http://www.w3.org/2000/svg" width="{{ width }}" height="{{ height }}" font-family="sans-serif" font-size="11">
      <text x="{{ width / 2 }}" y="16" text-anchor="middle" font-size="13">{{ title }}</text>
      {% for cell in cells %}
      <rect x="{{ cell.x }}" y="{{ cell.y }}" width="{{ cell_w }}" height="{{ cell_h }}" fill="{{ cell.color }}"/>
      {% endfor %}
      <text x="{{ left }}" y="{{ height - 6 }}">{{ x_label }}: {{ x_min }}</text>
      <text x="{{ left + plot_w }}" y="{{ height - 6 }}" text-anchor="end">{{ x_max }}</text>
      <text x="4" y="{{ top + 10 }}">{{ y_max }}</text>
      <text x="4" y="{{ top + plot_h }}">{{ y_min }}</text>
      <text x="4" y="{{ top + plot_h / 2 }}">{{ y_label }}</text>
      <text x="{{ width - 4 }}" y="{{ top + 10 }}" text-anchor="end">max {{ v_max }}</text>
      <text x="{{ width - 4 }}" y="{{ top + plot_h }}" text-anchor="end">min {{ v_min }}</text>
    </svg>
    """)[1:])


_LINE_CHART_TEMPLATE = _ENVIRONMENT.from_string(textwrap.dedent("""
    <svg xmlns="http://www.w3.org/2000/svg" width="{{ width }}" height="{{ height }}" font-family="sans-serif" font-size="11">
      <text x="{{ width / 2 }}" y="16" text-anchor="middle" font-size="13">{{ title }}</text>
      <rect x="{{ left }}" y="{{ top }}" width="{{ plot_w }}" height="{{ plot_h }}" fill="none" stroke="#999"/>
      {% for s in series %}
      <polyline fill="none" stroke="{{ s.color }}" stroke-width="1.5" points="{{ s.points }}"/>
      {% for p in s.markers %}
      <circle cx="{{ p[0] }}" cy="{{ p[1] }}" r="2.5" fill="{{ s.color }}"/>
      {% endfor %}
      <text x="{{ left + plot_w + 8 }}" y="{{ top + 14 * loop.index }}" fill="{{ s.color }}">{{ s.name }}</text>
      {% endfor %}
      <text x="{{ left }}" y="{{ height - 6 }}">{{ x_min }}</text>
      <text x="{{ left + plot_w }}" y="{{ height - 6 }}" text-anchor="end">{{ x_max }}</text>
      <text x="{{ left + plot_w / 2 }}" y="{{ height - 6 }}" text-anchor="middle">{{ x_label }}</text>
      <text x="4" y="{{ top + 10 }}">{{ y_max }}</text>
      <text x="4" y="{{ top + plot_h }}">{{ y_min }}</text>
      <text x="4" y="{{ top + plot_h / 2 }}">{{ y_label }}</text>
    </svg>
    """)[1:])


_IMAGE_GRID_TEMPLATE = _ENVIRONMENT.from_string(textwrap.dedent("""
    <svg xmlns="http://www.w3.org/2000/svg" width="{{ width }}" height="{{ height }}" font-family="sans-serif" font-size="11">
      <text x="{{ width / 2 }}" y="16" text-anchor="middle" font-size="13">{{ title }}</text>
      {% for image in images %}
      <text x="{{ image.x }}" y="{{ image.y - 4 }}">{{ image.label }}</text>
      {% for cell in image.cells %}
      <rect x="{{ cell.x }}" y="{{ cell.y }}" width="{{ pixel }}" height="{{ pixel }}" fill="{{ cell.color }}"/>
      {% endfor %}
      {% endfor %}
    </svg>
    """)[1:])


def color_for(value: float, v_min: float, v_max: float) -> str:
    """Diverging blue/white/red color of a value in ``[v_min, v_max]``; non-finite values are gray."""
    if not np.isfinite(value):
        return "#808080"
    span = v_max - v_min
    u = 0.5 if span <= 0 else float(np.clip((value - v_min) / span, 0.0, 1.0))
    if u < 0.5:
        w = u / 0.5
        rgb = (int(59 + w * (255 - 59)), int(76 + w * (255 - 76)), int(192 + w * (255 - 192)))
    else:
        w = (u - 0.5) / 0.5
        rgb = (int(255 - w * (255 - 180)), int(255 - w * (255 - 4)), int(255 - w * (255 - 38)))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _limits(values: np.ndarray, symmetric: bool = False) -> typing.Tuple[float, float]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return 0.0, 1.0
    if symmetric:
        bound = float(np.max(np.abs(finite))) or 1.0
        return -bound, bound
    return float(finite.min()), float(finite.max())


def heatmap_svg(
        values: np.ndarray,
        x_extent: typing.Tuple[float, float],
        y_extent: typing.Tuple[float, float],
        title: str = "",
        x_label: str = "x",
        y_label: str = "t",
        symmetric: bool = True,
        cell_size: int = 4,
) -> str:
    """
    Renders a ``[rows, cols]`` array; row 0 is drawn at the bottom (lowest
    ``y``) and columns run along ``x``.
    """
    values = np.asarray(values, dtype=np.float64)
    rows, cols = values.shape
    v_min, v_max = _limits(values, symmetric=symmetric)
    left, top = 40, 24
    plot_w, plot_h = cols * cell_size, rows * cell_size

    cells = [
        {
            "x": left + j * cell_size,
            "y": top + (rows - 1 - i) * cell_size,
            "color": color_for(values[i, j], v_min, v_max),
        }
        for i in range(rows)
        for j in range(cols)
    ]

    return _HEATMAP_TEMPLATE.render(
        width=left + plot_w + 80, height=top + plot_h + 24,
        left=left, top=top, plot_w=plot_w, plot_h=plot_h,
        cell_w=cell_size, cell_h=cell_size, cells=cells,
        title=title, x_label=x_label, y_label=y_label,
        x_min="{:g}".format(x_extent[0]), x_max="{:g}".format(x_extent[1]),
        y_min="{:g}".format(y_extent[0]), y_max="{:g}".format(y_extent[1]),
        v_min="{:.3g}".format(v_min), v_max="{:.3g}".format(v_max),
    )


def line_chart_svg(
        series: typing.Dict[str, typing.Tuple[typing.Sequence[float], typing.Sequence[float]]],
        title: str = "",
        x_label: str = "",
        y_label: str = "",
        log_y: bool = False,
        width: int = 480,
        height: int = 300,
) -> str:
    """Renders named ``(xs, ys)`` series on shared axes; non-finite points are skipped."""
    left, top, right, bottom = 48, 24, 110, 28
    plot_w, plot_h = width - left - right, height - top - bottom

    cleaned = dict()
    for (name, (xs, ys)) in series.items():
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if log_y:
            with np.errstate(divide="ignore", invalid="ignore"):
                ys = np.where(ys > 0, np.log10(ys), np.nan)
        keep = np.isfinite(xs) & np.isfinite(ys)
        cleaned[name] = (xs[keep], ys[keep])

    all_x = np.concatenate([xs for (xs, _) in cleaned.values()] or [np.zeros(0)])
    all_y = np.concatenate([ys for (_, ys) in cleaned.values()] or [np.zeros(0)])
    x_min, x_max = _limits(all_x)
    y_min, y_max = _limits(all_y)
    x_span = (x_max - x_min) or 1.0
    y_span = (y_max - y_min) or 1.0

    def _point(x: float, y: float) -> typing.Tuple[float, float]:
        return (round(left + (x - x_min) / x_span * plot_w, 2),
                round(top + plot_h - (y - y_min) / y_span * plot_h, 2))

    rendered = []
    for (index, (name, (xs, ys))) in enumerate(cleaned.items()):
        markers = [_point(x, y) for (x, y) in zip(xs, ys)]
        rendered.append({
            "name": name,
            "color": PALETTE[index % len(PALETTE)],
            "markers": markers,
            "points": " ".join("{},{}".format(*p) for p in markers),
        })

    def _fmt(v: float) -> str:
        return "1e{:.2g}".format(v) if log_y else "{:.3g}".format(v)

    return _LINE_CHART_TEMPLATE.render(
        width=width, height=height, left=left, top=top, plot_w=plot_w, plot_h=plot_h,
        series=rendered, title=title, x_label=x_label, y_label=y_label,
        x_min="{:g}".format(x_min), x_max="{:g}".format(x_max),
        y_min=_fmt(y_min), y_max=_fmt(y_max),
    )


def image_grid_svg(
        images: typing.Sequence[np.ndarray],
        labels: typing.Optional[typing.Sequence[str]] = None,
        columns: int = 4,
        title: str = "",
        pixel: int = 4,
) -> str:
    """Renders square fields side by side, each with its own symmetric color scale."""
    labels = list(labels) if labels is not None else [""] * len(images)
    columns = max(1, min(int(columns), len(images) or 1))
    sizes = [np.asarray(image).shape[0] for image in images] or [1]
    box = max(sizes) * pixel + 24
    top = 28

    rendered = []
    for (index, image) in enumerate(images):
        image = np.asarray(image, dtype=np.float64)
        v_min, v_max = _limits(image, symmetric=True)
        x0 = 8 + (index % columns) * box
        y0 = top + 12 + (index // columns) * box
        rendered.append({
            "label": labels[index] if index < len(labels) else "",
            "x": x0,
            "y": y0,
            "cells": [
                {"x": x0 + j * pixel, "y": y0 + i * pixel, "color": color_for(image[i, j], v_min, v_max)}
                for i in range(image.shape[0])
                for j in range(image.shape[1])
            ],
        })

    rows = (len(images) + columns - 1) // columns
    return _IMAGE_GRID_TEMPLATE.render(
        width=16 + columns * box, height=top + 16 + max(rows, 1) * box,
        images=rendered, pixel=pixel, title=title,
    )


def write_svg(path: str, svg: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(svg)
    logger.debug("Wrote figure '{}'.", path)
    return path
