"""Linear encodings of the restriction menu over the stacked marginals.

Each restriction compiles to a :class:`ConstraintBlock`: rows over the marginal
columns (and possibly new auxiliary columns), plus columns to pin to zero.
Compilation needs a context exposing

* ``data``, ``resolved`` (a :class:`~policybounds.model.ResolvedPolicy`),
  ``restrictions``, ``n`` (outcome levels) and ``K``;
* ``cells(z)``, an ``(n, n, 2, 2)`` array of column indices of judge ``z``
  indexed by ``(y0, y1, d0, d1)``.

:class:`policybounds.identify.IdentifyProblem` is the canonical context.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import (
    MTR,
    AverageDisagreement,
    KnownY0,
    KnownY1,
    ModelError,
    OutcomeDisparity,
    PairwiseDisagreement,
    PCBound,
    PolicyMonotonicity,
    TECap,
)


class RestrictionWarning(UserWarning):
    pass


@dataclass
class ConstraintBlock:
    """Rows are ``(cols, vals, rel, rhs, tag)``; aux columns are numbered from ``aux_offset``."""

    rows: list = field(default_factory=list)
    aux_names: list[str] = field(default_factory=list)
    aux_offset: int = 0
    zero_columns: list[int] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, cols, vals, rel, rhs, tag):
        self.rows.append((np.asarray(cols, dtype=np.int64), np.asarray(vals, dtype=float), rel, float(rhs), tag))

    def new_aux(self, names) -> np.ndarray:
        start = self.aux_offset + len(self.aux_names)
        self.aux_names.extend(names)
        return np.arange(start, start + len(names))

    @property
    def n_aux(self) -> int:
        return len(self.aux_names)


def _grid_mask(ctx, fn):
    y = ctx.data.grid.array
    return np.broadcast_to(fn(y[:, None], y[None, :]), (ctx.n, ctx.n))


def _zero_cells(ctx, mask_yy=None, mask_d=None):
    """Column indices over all judges where the (y0,y1) and (d0,d1) masks hold."""
    n = ctx.n
    my = np.ones((n, n), dtype=bool) if mask_yy is None else mask_yy
    md = np.ones((2, 2), dtype=bool) if mask_d is None else mask_d
    full = my[:, :, None, None] & md[None, None, :, :]
    return np.concatenate([ctx.cells(z)[full] for z in range(ctx.K)]).tolist()


def _require_pm(ctx, what):
    if not ctx.restrictions.has(PolicyMonotonicity):
        raise ModelError(f"{what} requires PolicyMonotonicity in the restriction set")


def _require_rates(ctx, what):
    if ctx.resolved.average is not None:
        raise ModelError(f"{what} needs judge-level counterfactual rates; an average quota leaves them free")


def _judge_list(ctx, judges, group=None):
    if judges is not None:
        return [ctx.data.judge_index(j) for j in judges], True
    if group is not None:
        idx = ctx.data.members(group)
        if idx:
            return idx, False
    return list(range(ctx.K)), False


def _complier_mass(ctx, z):
    return float(ctx.resolved.rates[z] - ctx.data.release_rates[z])


def _warn(block, msg, explicit):
    block.notes.append(msg)
    if explicit:
        warnings.warn(msg, RestrictionWarning, stacklevel=4)


def _compile_pc_bound(spec: PCBound, ctx, block):
    _require_pm(ctx, "PCBound")
    _require_rates(ctx, "PCBound")
    zs, explicit = _judge_list(ctx, spec.judges, spec.group)
    y1 = ctx.data.grid.array[None, :]
    for z in zs:
        a0 = float(ctx.data.release_rates[z])
        a1 = float(ctx.resolved.rates[z])
        m = a1 - a0
        if m <= 1e-12:
            _warn(block, f"PCBound skipped for judge {ctx.data.ids[z]}: no policy compliers", explicit)
            continue
        c = ctx.cells(z)
        w = np.broadcast_to(y1, (ctx.n, ctx.n))
        released = c[:, :, 1, 1].ravel()
        comp = c[:, :, 0, 1].ravel()
        never = c[:, :, 0, 0].ravel()
        wv = w.ravel()
        if a0 > 1e-12:
            # E[Y1 | released] <= E[Y1 | complier]
            block.add(np.concatenate([released, comp]), np.concatenate([m * wv, -a0 * wv]), "<=", 0.0, "pc_lower")
        if a1 < 1 - 1e-12:
            # E[Y1 | complier] <= E[Y1 | never released]
            block.add(np.concatenate([comp, never]), np.concatenate([(1 - a1) * wv, -m * wv]), "<=", 0.0, "pc_upper")


def _compile_te_cap(spec: TECap, ctx, block):
    _require_pm(ctx, "TECap")
    _require_rates(ctx, "TECap")
    zs, explicit = _judge_list(ctx, spec.judges)
    y = ctx.data.grid.array
    te = (y[None, :] - y[:, None]).ravel()
    for z in zs:
        m = _complier_mass(ctx, z)
        if m <= 1e-12:
            _warn(block, f"TECap skipped for judge {ctx.data.ids[z]}: no policy compliers", explicit)
            continue
        block.add(ctx.cells(z)[:, :, 0, 1].ravel(), te, "<=", spec.c * m, "te_cap")


def group_weights(data, group, weighted=True):
    """Within-group weights (caseloads, or uniform)."""
    idx = data.members(group)
    if not idx:
        raise ModelError(f"group {group!r} has no judges")
    w = data.n_cases[idx] if weighted else np.ones(len(idx))
    return idx, w / w.sum()


def _outcome_coeffs(ctx, z):
    """Columns and coefficients of E[Y(D(z,1))] for judge z."""
    y = ctx.data.grid.array
    n = ctx.n
    coef = np.zeros((n, n, 2, 2))
    coef[:, :, :, 1] = y[None, :, None]
    coef[:, :, :, 0] = y[:, None, None]
    return ctx.cells(z).ravel(), coef.ravel()


def _compile_outcome_disparity(spec: OutcomeDisparity, ctx, block):
    cols, vals = [], []
    for group, sign in ((spec.group, 1.0), (spec.benchmark, -1.0)):
        idx, w = group_weights(ctx.data, group)
        for z, wz in zip(idx, w):
            c, v = _outcome_coeffs(ctx, z)
            cols.append(c)
            vals.append(sign * wz * v)
    cols, vals = np.concatenate(cols), np.concatenate(vals)
    block.add(cols, vals, "<=", spec.od_bar, "od")
    block.add(cols, vals, ">=", -spec.od_bar, "od")


def compile_restriction(spec, ctx, aux_offset: int = 0) -> ConstraintBlock:
    """Compile one restriction into linear rows over the marginal columns.

    Raises
    ------
    ModelError
        For unknown judges or groups, or when a restriction's prerequisites
        (policy monotonicity, judge-level rates) are missing.
    """
    block = ConstraintBlock(aux_offset=aux_offset)
    if isinstance(spec, PolicyMonotonicity):
        md = np.zeros((2, 2), dtype=bool)
        md[1, 0] = True
        block.zero_columns = _zero_cells(ctx, mask_d=md)
    elif isinstance(spec, KnownY0):
        ctx.data.grid.index(spec.value)
        block.zero_columns = _zero_cells(ctx, _grid_mask(ctx, lambda y0, y1: y0 != spec.value))
    elif isinstance(spec, KnownY1):
        ctx.data.grid.index(spec.value)
        block.zero_columns = _zero_cells(ctx, _grid_mask(ctx, lambda y0, y1: y1 != spec.value))
    elif isinstance(spec, MTR):
        block.zero_columns = _zero_cells(ctx, _grid_mask(ctx, lambda y0, y1: y1 < y0))
    elif isinstance(spec, PCBound):
        _compile_pc_bound(spec, ctx, block)
    elif isinstance(spec, TECap):
        _compile_te_cap(spec, ctx, block)
    elif isinstance(spec, OutcomeDisparity):
        _compile_outcome_disparity(spec, ctx, block)
    elif isinstance(spec, (PairwiseDisagreement, AverageDisagreement)):
        return compile_disagreement(spec, ctx, aux_offset)
    else:
        raise ModelError(f"unsupported restriction {spec!r}")
    return block


def _released_cells(ctx, z, a):
    """(n, n, 2) column indices of judge z's cells with D(z, a) = 1."""
    c = ctx.cells(z)
    return c[:, :, :, 1] if a == 1 else c[:, :, 1, :]


def _overlap_block(ctx, block, z, zp, a, ap, tag):
    """Create eta[z][z'][y0][y1] bounded by both release aggregates; return their columns."""
    ids = ctx.data.ids
    n = ctx.n
    suffix = "" if (a, ap) == (1, 1) else f"[a{a}{ap}]"
    names = [f"η[{ids[z]}][{ids[zp]}][{i0}][{i1}]{suffix}" for i0 in range(n) for i1 in range(n)]
    eta = block.new_aux(names).reshape(n, n)
    rz = _released_cells(ctx, z, a)
    rzp = _released_cells(ctx, zp, ap)
    for i0 in range(n):
        for i1 in range(n):
            for r in (rz, rzp):
                block.add(np.append(r[i0, i1], eta[i0, i1]), [-1.0, -1.0, 1.0], "<=", 0.0, tag)
    return eta


def compile_disagreement(spec, ctx, aux_offset: int = 0) -> ConstraintBlock:
    """Encode a disagreement bound through overlap variables eta.

    For a pair (z, z') the bound ``P(D(z,a)=0 | D(z',a')=1) <= delta`` holds
    for some coupling iff there are ``eta(y0,y1)`` below both judges' release
    masses at ``(y0, y1)`` whose total reaches ``(1 - delta) P(D(z',a')=1)``.
    """
    _require_pm(ctx, type(spec).__name__)
    block = ConstraintBlock(aux_offset=aux_offset)
    if isinstance(spec, PairwiseDisagreement):
        z = ctx.data.judge_index(spec.z)
        zp = ctx.data.judge_index(spec.z_prime)
        if z == zp and spec.a == spec.a_prime:
            return block
        eta = _overlap_block(ctx, block, z, zp, spec.a, spec.a_prime, "disagree_cap")
        rzp = _released_cells(ctx, zp, spec.a_prime).ravel()
        block.add(
            np.concatenate([eta.ravel(), rzp]),
            np.concatenate([np.ones(eta.size), -(1 - spec.delta) * np.ones(rzp.size)]),
            ">=",
            0.0,
            "disagree",
        )
        return block
    if isinstance(spec, AverageDisagreement):
        q_idx, q_w = group_weights(ctx.data, spec.group, spec.weighted)
        b_idx, b_w = group_weights(ctx.data, spec.benchmark, spec.weighted)
        cols, vals = [], []
        for z, wz in zip(q_idx, q_w):
            for zp, wzp in zip(b_idx, b_w):
                if z == zp:
                    continue
                eta = _overlap_block(ctx, block, z, zp, 1, 1, "disagree_cap")
                cols.append(eta.ravel())
                vals.append(np.full(eta.size, wz * wzp))
        for zp, wzp in zip(b_idx, b_w):
            r = _released_cells(ctx, zp, 1).ravel()
            cols.append(r)
            vals.append(np.full(r.size, -(1 - spec.dp_bar) * wzp))
        block.add(np.concatenate(cols), np.concatenate(vals), ">=", 0.0, "disagree")
        return block
    raise ModelError(f"not a disagreement restriction: {spec!r}")
