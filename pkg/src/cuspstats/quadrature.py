"""Adaptive tensor-product Gauss-Kronrod quadrature on rectangles."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import PrecisionError

# 15-point Kronrod nodes on [-1, 1] (non-negative half) with the embedded 7-point Gauss rule
_XK = np.array([0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                0.207784955007898467600689403773245, 0.0])
_WK = np.array([0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_WG = np.array([0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                0.381830050505118944950369775488975, 0.417959183673469387755102040816327])

NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
W_KRONROD = np.concatenate([_WK[:-1], _WK[::-1]])
W_GAUSS = np.zeros(15)
_gauss_pos = [1, 3, 5, 7]
for _i, _w in zip(_gauss_pos, _WG):
    W_GAUSS[_i] = _w
    W_GAUSS[14 - _i] = _w

_WK2 = np.outer(W_KRONROD, W_KRONROD).ravel()
_WG2 = np.outer(W_GAUSS, W_GAUSS).ravel()
_NX, _NY = (a.ravel() for a in np.meshgrid(NODES, NODES, indexing="ij"))


@dataclass
class QuadOptions:
    tol: float = 1e-8  # absolute
    max_panels: int = 400_000
    min_width: float = 1e-12


@dataclass
class QuadResult:
    value: float
    error_estimate: float
    panels: int

    def __float__(self) -> float:
        return self.value

    def to_json(self) -> dict:
        return {"value": self.value, "error_estimate": self.error_estimate,
                "panels": self.panels}


def _eval_panels(f, boxes):
    """K15 x K15 value and |K15^2 - G7^2| error for each box (x0, x1, y0, y1)."""
    boxes = np.asarray(boxes, dtype=float)
    cx = 0.5 * (boxes[:, 0] + boxes[:, 1])
    hx = 0.5 * (boxes[:, 1] - boxes[:, 0])
    cy = 0.5 * (boxes[:, 2] + boxes[:, 3])
    hy = 0.5 * (boxes[:, 3] - boxes[:, 2])
    X = cx[:, None] + hx[:, None] * _NX[None, :]
    Y = cy[:, None] + hy[:, None] * _NY[None, :]
    vals = np.asarray(f(X.ravel(), Y.ravel()), dtype=float).reshape(X.shape)
    vals = np.where(np.isfinite(vals), vals, np.nan)
    area = hx * hy
    vk = area * (vals @ _WK2)
    vg = area * (vals @ _WG2)
    return vk, np.abs(vk - vg)


def adaptive_2d(f, boxes, opts: QuadOptions | None = None) -> QuadResult:
    """Integrate a vectorized f(x, y) over a union of rectangles to absolute tolerance.

    Panels with the largest error estimates are split into four until the summed
    estimate drops below opts.tol.  Raises PrecisionError (with the partial result)
    when the panel budget is exhausted.
    """
    opts = opts or QuadOptions()
    boxes = [tuple(map(float, b)) for b in boxes]
    vk, err = _eval_panels(f, boxes)
    if np.any(np.isnan(vk)):
        raise PrecisionError("non-finite integrand value", value=float("nan"))
    heap = [(-e, i) for i, e in enumerate(err)]
    heapq.heapify(heap)
    store = {i: (b, v, e) for i, (b, v, e) in enumerate(zip(boxes, vk, err))}
    total_err = float(np.sum(err))
    next_id = len(boxes)
    while total_err > opts.tol:
        if len(store) >= opts.max_panels:
            value = math.fsum(v for _, v, _ in store.values())
            raise PrecisionError(f"panel budget exhausted, error {total_err:.3e} > "
                                 f"{opts.tol:.3e}", value=value, error=total_err)
        # split the worst panels in one batch
        n_split = max(1, min(len(heap), 64))
        chosen = []
        threshold = -heap[0][0] / 8.0
        while heap and len(chosen) < n_split and -heap[0][0] >= threshold:
            _, i = heapq.heappop(heap)
            chosen.append(i)
        children = []
        for i in chosen:
            (x0, x1, y0, y1), _, e = store.pop(i)
            total_err -= e
            if x1 - x0 < opts.min_width and y1 - y0 < opts.min_width:
                value = math.fsum(v for _, v, _ in store.values())
                raise PrecisionError("panel width below minimum", value=value,
                                     error=total_err + e)
            xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            wx, wy = x1 - x0, y1 - y0
            if wx > 4.0 * wy:
                children += [(x0, xm, y0, y1), (xm, x1, y0, y1)]
            elif wy > 4.0 * wx:
                children += [(x0, x1, y0, ym), (x0, x1, ym, y1)]
            else:
                children += [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1),
                             (xm, x1, ym, y1)]
        cv, ce = _eval_panels(f, children)
        if np.any(np.isnan(cv)):
            raise PrecisionError("non-finite integrand value", value=float("nan"))
        for b, v, e in zip(children, cv, ce):
            store[next_id] = (b, float(v), float(e))
            heapq.heappush(heap, (-e, next_id))
            next_id += 1
            total_err += e
        total_err = max(total_err, 0.0)
    # order-fixed summation for reproducibility
    items = sorted(store.values(), key=lambda t: t[0])
    value = math.fsum(v for _, v, _ in items)
    error = math.fsum(e for _, _, e in items)
    return QuadResult(value, error, len(items))
