"""Design blocks and penalty matrices for the additive-model bases.

"Cubic spline" means a P-spline here: a B-spline design with a discrete
second-order difference penalty. Each smooth block is made identifiable
by absorbing a sum-to-zero constraint over the training rows, which drops
one column; categorical blocks drop a reference level instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import null_space

__all__ = ["BasisBlock", "build_univariate", "build_categorical",
           "tensor_product", "flatten_index"]


@dataclass
class BasisBlock:
    """One evaluated basis: design rows, penalty, and re-evaluation state."""

    design: np.ndarray                  # n x p
    penalty: np.ndarray                 # p x p, symmetric PSD (may be zero)
    kind: str                           # linear | spline | categorical | tensor
    centered: bool = False
    # re-evaluation anchors
    mean: float | None = None           # linear
    knots: np.ndarray | None = None     # spline
    degree: int | None = None           # spline
    xmin: float | None = None           # spline clamp range
    xmax: float | None = None
    period: float | None = None         # cyclic spline
    wrap: int | None = None             # cyclic: columns folded back
    levels: tuple[int, ...] | None = None   # categorical: column levels
    reference: int | None = None            # categorical: dropped level
    marginals: tuple | None = None      # tensor: the two uncentered blocks
    constraint: np.ndarray | None = None    # sum-to-zero absorption matrix Z
    penalty_parts: tuple | None = None  # tensor: per-marginal penalties

    @property
    def ncols(self):
        if self.design is not None:
            return self.design.shape[1]
        # restored blocks drop the training design; derive the width
        if self.constraint is not None:
            return self.constraint.shape[1]
        if self.kind == "linear":
            return 1
        if self.kind == "categorical":
            return len(self.levels)
        if self.kind == "spline":
            return len(self.knots) - self.degree - 1 - (self.wrap or 0)
        return self.marginals[0].ncols * self.marginals[1].ncols

    def evaluate(self, values, strict=True):
        """Design rows for new data; returns (matrix, unseen-level count)."""
        raw, unseen = self._evaluate_raw(values, strict)
        if self.constraint is not None:
            raw = raw @ self.constraint
        return raw, unseen

    def _evaluate_raw(self, values, strict):
        if self.kind == "linear":
            x = np.asarray(values, dtype=float)
            return (x - self.mean)[:, None], 0
        if self.kind == "spline":
            return _spline_design(self, np.asarray(values, dtype=float)), 0
        if self.kind == "categorical":
            return _categorical_design(self, values, strict)
        if self.kind == "tensor":
            a, ua = self.marginals[0]._evaluate_raw(values[0], strict)
            b, ub = self.marginals[1]._evaluate_raw(values[1], strict)
            n, pa = a.shape
            pb = b.shape[1]
            prod = (a[:, :, None] * b[:, None, :]).reshape(n, pa * pb)
            return prod, ua + ub
        raise ValueError(f"unknown block kind {self.kind!r}")


def _difference_penalty(p, order=2):
    d = np.eye(p)
    for _ in range(order):
        d = np.diff(d, axis=0)
    return d.T @ d


def _cyclic_difference_penalty(p, order=2):
    # wrapped second differences: row i couples i, i+1, i+2 (mod p)
    d = np.zeros((p, p))
    for i in range(p):
        d[i, i] = 1.0
        d[i, (i + 1) % p] = -2.0
        d[i, (i + 2) % p] = 1.0
    return d.T @ d


def _spline_design(block, x):
    if block.period is not None:
        x = np.mod(x, block.period)
    # clip to the knot-implied valid interval (guards one-ulp boundary drift)
    d = block.degree
    x = np.clip(x, block.knots[d], block.knots[-d - 1])
    full = BSpline.design_matrix(x, block.knots, block.degree,
                                 extrapolate=False).toarray()
    if block.wrap:
        w = block.wrap
        folded = full[:, :-w].copy()
        folded[:, :w] += full[:, -w:]
        return folded
    return full


def _absorb_sum_to_zero(design, penalty):
    """Drop one column by absorbing the sum-to-zero constraint over rows."""
    c = design.sum(axis=0)[None, :]
    z = null_space(c)
    return design @ z, z.T @ penalty @ z, z


def build_univariate(family, q, values, center=True, period=None) -> BasisBlock:
    """Build a one-covariate block at the training values.

    family: "linear", "cubic-spline" or "cyclic-cubic-spline". Spline
    families need q >= 3 and at least q distinct values; knots are equally
    spaced over the training range (or the period, for cyclic).
    """
    x = np.asarray(values, dtype=float)
    if family == "linear":
        if np.unique(x).size < 2:
            raise ValueError("linear basis needs at least 2 distinct values")
        mean = float(x.mean())
        return BasisBlock((x - mean)[:, None], np.zeros((1, 1)),
                          "linear", centered=True, mean=mean)
    if family not in ("cubic-spline", "cyclic-cubic-spline"):
        raise ValueError(f"unknown univariate family {family!r}")
    if q < 3:
        raise ValueError(f"spline basis needs q >= 3, got {q}")
    if np.unique(x).size < q:
        raise ValueError(
            f"fewer distinct values ({np.unique(x).size}) than q={q}")

    if family == "cubic-spline":
        degree = 3 if q > 3 else 2
        n_int = q - degree
        xmin, xmax = float(x.min()), float(x.max())
        h = (xmax - xmin) / n_int
        # interior knots hit both boundaries exactly; exterior extend by h
        knots = np.concatenate([
            xmin - h * np.arange(degree, 0, -1),
            np.linspace(xmin, xmax, n_int + 1),
            xmax + h * np.arange(1, degree + 1),
        ])
        block = BasisBlock(None, _difference_penalty(q), "spline",
                           knots=knots, degree=degree, xmin=xmin, xmax=xmax)
    else:
        if period is None:
            period = float(np.ceil(x.max())) if x.max() > 1 else 1.0
        degree = 3
        h = period / q
        # q + degree unwrapped columns; the trailing `degree` fold onto the head
        knots = h * np.arange(-degree, q + degree + 1)
        block = BasisBlock(None, _cyclic_difference_penalty(q), "spline",
                           knots=knots, degree=degree, period=float(period),
                           wrap=degree, xmin=0.0, xmax=float(period))
    design = _spline_design(block, x)
    block.design = design
    if center:
        d, s, z = _absorb_sum_to_zero(design, block.penalty)
        block.design, block.penalty, block.constraint = d, s, z
        block.centered = True
    return block


def build_categorical(m, values, center=True) -> BasisBlock:
    """Indicator block over modalities 1..m; 0 is the default (zero row).

    The reference level (most frequent observed modality) is dropped, so
    the block has one column per remaining observed modality.
    """
    x = np.asarray(values, dtype=int)
    if x.size and (x.max() > m or x.min() < 0):
        raise ValueError(f"categorical values outside 0..{m}")
    observed, counts = np.unique(x, return_counts=True)
    if observed.size < 2:
        raise ValueError("fewer than 2 observed levels")
    nonzero = observed[observed > 0]
    if nonzero.size == 0:
        raise ValueError("no nonzero modality observed")
    nz_counts = counts[observed > 0]
    reference = int(nonzero[np.argmax(nz_counts)])
    levels = tuple(int(v) for v in nonzero if v != reference)
    block = BasisBlock(None, np.zeros((len(levels), len(levels))),
                       "categorical", levels=levels, reference=reference)
    design, _ = _categorical_design(block, x, strict=True)
    block.design = design
    return block


def _categorical_design(block, values, strict):
    x = np.asarray(values, dtype=int)
    design = np.zeros((x.size, len(block.levels)))
    known = set(block.levels) | {0, block.reference}
    unseen = 0
    for j, level in enumerate(block.levels):
        design[x == level, j] = 1.0
    for v in np.unique(x):
        if int(v) not in known:
            if strict:
                raise ValueError(f"unseen categorical modality {int(v)}")
            unseen += int((x == v).sum())
    return design, unseen


def tensor_product(block_a: BasisBlock, block_b: BasisBlock,
                   center=True) -> BasisBlock:
    """Row-wise products of two uncentered marginal blocks.

    Columns run row-major over (i_a, i_b); the penalty is
    S_a (x) I + I (x) S_b, then the product block is sum-to-zero centered
    (one column dropped).
    """
    if block_a.design.shape[0] != block_b.design.shape[0]:
        raise ValueError("tensor marginals built on different row counts")
    if block_a.centered or block_b.centered:
        raise ValueError("tensor marginals must be uncentered")
    a, b = block_a.design, block_b.design
    n, pa = a.shape
    pb = b.shape[1]
    design = (a[:, :, None] * b[:, None, :]).reshape(n, pa * pb)
    parts = (np.kron(block_a.penalty, np.eye(pb)),
             np.kron(np.eye(pa), block_b.penalty))
    penalty = parts[0] + parts[1]
    block = BasisBlock(design, penalty, "tensor",
                       marginals=(block_a, block_b), penalty_parts=parts)
    if center:
        d, s, z = _absorb_sum_to_zero(design, penalty)
        block.design, block.penalty, block.constraint = d, s, z
        block.centered = True
        block.penalty_parts = tuple(z.T @ s_ @ z for s_ in parts)
    return block


def flatten_index(i: int, dims) -> tuple[int, ...]:
    """Recover the 1-based row-major multi-index behind flat index ``i``.

    Row-major: the last dimension varies fastest, matching the column
    order produced by :func:`tensor_product`. Agrees with nested-loop
    enumeration by construction.
    """
    if not isinstance(dims, tuple):
        dims = tuple(map(int, dims))
    total = math.prod(dims)
    if not 1 <= i <= total:
        raise ValueError(f"flat index {i} outside 1..{total}")
    idx = i - 1
    out = []
    for q in reversed(dims):
        idx, rem = divmod(idx, q)
        out.append(rem + 1)
    out.reverse()
    return tuple(out)
