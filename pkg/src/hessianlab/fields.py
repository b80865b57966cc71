"""Sampled scalar fields on masked rectangular grids.

A convex domain is rasterized onto a uniform grid with Shortley-Weller
cut data: every inside node stores, per axis direction, the fractional
distance theta in (0,1] to the true boundary together with the Dirichlet
value at that cut. Difference stencils (gradients, pure and mixed second
derivatives) are built once per mask and cached; both the pointwise
measurement operators and the global Newton assembly read from the same
stencil set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage
import scipy.sparse as sp

from .errors import (
    ClippingError,
    DegenerateDomainError,
    PreconditionError,
    StencilError,
)
from .symm import SymmetricMatrix

MAX_NODES = 8_000_000
THETA_MIN = 1e-6


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular node lattice."""

    n: int
    dims: tuple
    origin: np.ndarray
    h: float

    def __post_init__(self):
        if self.n not in (2, 3):
            raise PreconditionError("grids support dimension 2 or 3")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != self.n or any(d < 5 for d in dims):
            raise PreconditionError("need at least 5 nodes per axis")
        if self.h <= 0:
            raise PreconditionError("spacing must be positive")
        if int(np.prod(dims)) > MAX_NODES:
            raise PreconditionError(f"grid exceeds the {MAX_NODES}-node cap")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    def coords(self, idx) -> np.ndarray:
        """Node coordinates for an integer multi-index array (..., n)."""
        return self.origin + np.asarray(idx, dtype=float) * self.h

    def all_indices(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


def _axis_offset(n, d, s):
    e = np.zeros(n, dtype=int)
    e[d] = s
    return e


@dataclass
class DomainMask:
    """Inside/outside flags plus Shortley-Weller cut data for one grid."""

    grid: Grid
    inside: np.ndarray               # bool, shape dims
    theta: np.ndarray                # (n, 2, *dims); theta[d, s]: arm toward -/+
    bval: np.ndarray                 # (n, 2, *dims); Dirichlet value at the cut

    def __post_init__(self):
        self.inside = np.asarray(self.inside, dtype=bool)
        if self.inside.shape != self.grid.dims:
            raise PreconditionError("mask shape mismatch")
        if not self.inside.any():
            raise DegenerateDomainError("empty mask")
        self._validate()
        self._stencils = None
        idx = np.argwhere(self.inside)
        self.inside_idx = idx                              # (N_in, n)
        self.unknown = -np.ones(self.grid.dims, dtype=int)
        self.unknown[tuple(idx.T)] = np.arange(idx.shape[0])

    # -- validation ------------------------------------------------------

    def _validate(self):
        ins = self.inside
        # inside nodes must stay off the grid shell
        for d in range(self.grid.n):
            shell = [slice(None)] * self.grid.n
            for end in (0, -1):
                shell[d] = end
                if ins[tuple(shell)].any():
                    raise ClippingError("inside region touches the grid box")
        # discrete convexity: along every grid line the inside run is contiguous
        for d in range(self.grid.n):
            arr = np.moveaxis(ins, d, -1)
            flat = arr.reshape(-1, arr.shape[-1])
            has = flat.any(axis=1)
            first = flat.argmax(axis=1)
            last = flat.shape[1] - 1 - flat[:, ::-1].argmax(axis=1)
            counts = flat.sum(axis=1)
            runs_ok = counts[has] == (last[has] - first[has] + 1)
            if not runs_ok.all():
                raise PreconditionError("mask not axis-convex on the grid")
        _, num = scipy.ndimage.label(ins)
        if num != 1:
            raise PreconditionError("mask not grid-connected")

    # -- basic queries ---------------------------------------------------

    @property
    def n(self):
        return self.grid.n

    def inside_count(self) -> int:
        return self.inside_idx.shape[0]

    def inside_coords(self) -> np.ndarray:
        return self.grid.coords(self.inside_idx)

    def extents(self) -> np.ndarray:
        return self.inside_idx.max(axis=0) - self.inside_idx.min(axis=0) + 1

    def node_nearest(self, point) -> tuple:
        """Inside node closest to a physical point."""
        pts = self.inside_coords()
        r = np.linalg.norm(pts - np.asarray(point, dtype=float), axis=1)
        return tuple(self.inside_idx[int(np.argmin(r))])

    def stencils(self) -> "StencilSet":
        if self._stencils is None:
            self._stencils = _build_stencils(self)
        return self._stencils


class StencilSet:
    """Precomputed difference stencils and node classes for one mask.

    hess[(p, q)] (p <= q) and grad[d] hold a CSR matrix over unknowns plus
    a constant vector carrying the Dirichlet cut contributions, one row per
    inside node. Node classes: `full` nodes have unit arms and complete
    mixed crosses; `closure` nodes own a cut arm (their solver row is a
    boundary interpolation, not the equation); remaining `collar` nodes
    keep equation rows built from one-sided mixed compositions.
    """

    def __init__(self, n_in):
        self.n_in = n_in
        self.hess = {}
        self.grad = {}
        self.is_full = np.zeros(n_in, dtype=bool)
        self.is_closure = np.zeros(n_in, dtype=bool)
        self.is_collar = np.zeros(n_in, dtype=bool)
        self.mixed_ok = np.ones(n_in, dtype=bool)
        self.closure_matrix = None
        self.closure_rhs = None
        self.weights = None
        self.cut_node = None
        self.cut_axis = None
        self.cut_dir = None
        self.cut_theta = None
        self.cut_bval = None
        self.cut_points = None

    def hessian_stack(self, values_in) -> np.ndarray:
        """Discrete Hessians at every inside node, shape (N_in, n, n)."""
        n = max(p for p, _ in self.hess) + 1
        H = np.empty((self.n_in, n, n))
        for (p, q), (A, c) in self.hess.items():
            col = A @ values_in + c
            H[:, p, q] = col
            H[:, q, p] = col
        return H

    def gradient_stack(self, values_in) -> np.ndarray:
        n = max(self.grad) + 1
        G = np.empty((self.n_in, n))
        for d, (A, c) in self.grad.items():
            G[:, d] = A @ values_in + c
        return G


class _RowAccum:
    """COO accumulator for one family of stencil rows."""

    def __init__(self, n_in):
        self.rows, self.cols, self.vals = [], [], []
        self.const = np.zeros(n_in)
        self.n_in = n_in

    def add(self, r, entries, const):
        for col, v in entries.items():
            self.rows.append(r)
            self.cols.append(col)
            self.vals.append(v)
        self.const[r] += const

    def csr(self):
        A = sp.coo_matrix(
            (self.vals, (self.rows, self.cols)), shape=(self.n_in, self.n_in)
        )
        return A.tocsr(), self.const


def _combine(a, fa, b, fb):
    """fa*a + fb*b for (entries, const) stencil pairs."""
    ents = {}
    for col, v in a[0].items():
        ents[col] = ents.get(col, 0.0) + fa * v
    for col, v in b[0].items():
        ents[col] = ents.get(col, 0.0) + fb * v
    return ents, fa * a[1] + fb * b[1]


def _build_stencils(mask: DomainMask) -> StencilSet:
    g = mask.grid
    n, h = g.n, g.h
    ins = mask.inside
    unknown = mask.unknown
    idxs = mask.inside_idx
    n_in = idxs.shape[0]
    st = StencilSet(n_in)

    def arm(idx, d, s):
        """(unknown column or None, theta, boundary value) toward direction s."""
        nbr = tuple(idx + _axis_offset(n, d, s))
        if ins[nbr]:
            return unknown[nbr], 1.0, 0.0
        sdir = 0 if s < 0 else 1
        th = mask.theta[(d, sdir) + tuple(idx)]
        bv = mask.bval[(d, sdir) + tuple(idx)]
        return None, th, bv

    def grad_row(idx, d):
        cm, tm, bm = arm(idx, d, -1)
        cp, tp, bp = arm(idx, d, +1)
        a, b = tm * h, tp * h
        w_m = -b / (a * (a + b))
        w_0 = (b - a) / (a * b)
        w_p = a / (b * (a + b))
        ents, const = {unknown[tuple(idx)]: w_0}, 0.0
        for c, w, bvv in ((cm, w_m, bm), (cp, w_p, bp)):
            if c is None:
                const += w * bvv
            else:
                ents[c] = ents.get(c, 0.0) + w
        return ents, const

    def second_row(idx, d):
        cm, tm, bm = arm(idx, d, -1)
        cp, tp, bp = arm(idx, d, +1)
        a, b = tm * h, tp * h
        w_m = 2.0 / (a * (a + b))
        w_0 = -2.0 / (a * b)
        w_p = 2.0 / (b * (a + b))
        ents, const = {unknown[tuple(idx)]: w_0}, 0.0
        for c, w, bvv in ((cm, w_m, bm), (cp, w_p, bp)):
            if c is None:
                const += w * bvv
            else:
                ents[c] = ents.get(c, 0.0) + w
        return ents, const

    grad_cache = {}

    def grad_row_cached(idx_t, d):
        key = (idx_t, d)
        if key not in grad_cache:
            grad_cache[key] = grad_row(np.asarray(idx_t), d)
        return grad_cache[key]

    def mixed_row(idx, d_in, d_out):
        """Outer difference along d_out of the gradient along d_in."""
        here = tuple(idx)
        p = tuple(idx + _axis_offset(n, d_out, +1))
        m = tuple(idx + _axis_offset(n, d_out, -1))
        has_p, has_m = ins[p], ins[m]
        if has_p and has_m:
            return _combine(
                grad_row_cached(p, d_in), 1.0 / (2 * h),
                grad_row_cached(m, d_in), -1.0 / (2 * h),
            )
        if has_p:
            return _combine(
                grad_row_cached(p, d_in), 1.0 / h,
                grad_row_cached(here, d_in), -1.0 / h,
            )
        if has_m:
            return _combine(
                grad_row_cached(here, d_in), 1.0 / h,
                grad_row_cached(m, d_in), -1.0 / h,
            )
        return None

    acc_h = {(p, q): _RowAccum(n_in) for p in range(n) for q in range(p, n)}
    acc_g = {d: _RowAccum(n_in) for d in range(n)}
    weights = np.ones(n_in)
    cl_rows, cl_cols, cl_vals, cl_rhs, cl_nodes = [], [], [], [], []
    cut_rec = []

    for r in range(n_in):
        idx = idxs[r]
        here = tuple(idx)
        arms = {}
        any_cut = False
        w = 1.0
        for d in range(n):
            am = arm(idx, d, -1)
            ap = arm(idx, d, +1)
            arms[d] = (am, ap)
            if am[0] is None or ap[0] is None:
                any_cut = True
            # dual-cell extent: half a spacing toward inside neighbors, the
            # whole cut arm toward the boundary (no other node claims it)
            ext_m = 0.5 if am[0] is not None else am[1]
            ext_p = 0.5 if ap[0] is not None else ap[1]
            w *= h * (ext_m + ext_p)
            for sdir, (c, th, bv) in ((-1, am), (+1, ap)):
                if c is None:
                    cut_rec.append((r, d, sdir, th, bv))
        weights[r] = w

        for d in range(n):
            acc_g[d].add(r, *grad_row_cached(here, d))
            acc_h[(d, d)].add(r, *second_row(idx, d))

        corners_ok = True
        mix_ok = True
        for d1 in range(n):
            for d2 in range(d1 + 1, n):
                for s1, s2 in itertools.product((-1, 1), repeat=2):
                    corner = tuple(
                        idx + _axis_offset(n, d1, s1) + _axis_offset(n, d2, s2)
                    )
                    if not ins[corner]:
                        corners_ok = False
                rows = [
                    mr
                    for mr in (mixed_row(idx, d1, d2), mixed_row(idx, d2, d1))
                    if mr is not None
                ]
                if not rows:
                    mix_ok = False
                    acc_h[(d1, d2)].add(r, {}, 0.0)
                elif len(rows) == 1:
                    acc_h[(d1, d2)].add(r, *rows[0])
                else:
                    acc_h[(d1, d2)].add(r, *_combine(rows[0], 0.5, rows[1], 0.5))
        st.mixed_ok[r] = mix_ok

        if any_cut or not mix_ok:
            st.is_closure[r] = True
        elif corners_ok:
            st.is_full[r] = True
        else:
            st.is_collar[r] = True

        if st.is_closure[r]:
            # boundary interpolation row along the sharpest cut direction
            best = None
            for d in range(n):
                for sdir, a in ((-1, arms[d][0]), (+1, arms[d][1])):
                    if a[0] is None and (best is None or a[1] < best[3]):
                        best = (d, sdir, a[2], a[1])
            row = len(cl_nodes)
            cl_nodes.append(r)
            if best is None:
                raise StencilError("closure node carries no boundary cut")
            else:
                d, sdir, bv, th = best
                inner = tuple(idx - _axis_offset(n, d, sdir))
                if ins[inner]:
                    cl_rows += [row, row]
                    cl_cols += [unknown[here], unknown[inner]]
                    cl_vals += [1.0, -th / (1.0 + th)]
                    cl_rhs.append(bv / (1.0 + th))
                else:
                    opp = arms[d][0] if sdir > 0 else arms[d][1]
                    t2, b2 = opp[1], opp[2]
                    cl_rows.append(row)
                    cl_cols.append(unknown[here])
                    cl_vals.append(1.0)
                    cl_rhs.append((t2 * bv + th * b2) / (th + t2))

    for key, acc in acc_h.items():
        st.hess[key] = acc.csr()
    for d, acc in acc_g.items():
        st.grad[d] = acc.csr()
    st.weights = weights
    st.closure_matrix = sp.coo_matrix(
        (cl_vals, (cl_rows, cl_cols)), shape=(len(cl_nodes), n_in)
    ).tocsr()
    st.closure_rhs = np.asarray(cl_rhs)
    st.closure_nodes = np.asarray(cl_nodes, dtype=int)

    if cut_rec:
        rs, ds, ss, ths, bvs = map(np.asarray, zip(*cut_rec))
    else:
        rs = ds = ss = ths = bvs = np.zeros(0)
    st.cut_node = rs.astype(int)
    st.cut_axis = ds.astype(int)
    st.cut_dir = ss.astype(int)
    st.cut_theta = ths.astype(float)
    st.cut_bval = bvs.astype(float)
    pts = mask.grid.coords(idxs[st.cut_node]) if len(cut_rec) else np.zeros((0, n))
    if len(cut_rec):
        offs = np.zeros((len(cut_rec), n))
        offs[np.arange(len(cut_rec)), st.cut_axis] = (
            st.cut_dir * st.cut_theta * mask.grid.h
        )
        pts = pts + offs
    st.cut_points = pts
    return st


# ---------------------------------------------------------------------------
# rasterization


def rasterize(
    phi,
    grid: Grid,
    boundary_value,
    bisect_iters: int = 90,
    theta_min: float = THETA_MIN,
) -> DomainMask:
    """Shortley-Weller mask of the region {phi < 0}.

    phi is a vectorized level function on (N, n) point arrays, negative
    strictly inside and monotone along any grid segment leaving the region
    (true for convex regions). Nodes whose boundary cut would fall within
    theta_min of the node are demoted to outside, which removes
    ill-conditioned slivers at a negligible geometric cost.
    """
    n = grid.n
    all_idx = grid.all_indices()
    vals = phi(grid.coords(all_idx))
    inside = (vals < 0.0).reshape(grid.dims)
    for d in range(n):
        shell = [slice(None)] * n
        for end in (0, -1):
            shell[d] = end
            if inside[tuple(shell)].any():
                raise ClippingError("level region reaches the grid box")

    bv_fn = boundary_value if callable(boundary_value) else None
    bv_const = None if callable(boundary_value) else float(boundary_value)

    for _demote_pass in range(6):
        theta = np.ones((n, 2) + grid.dims)
        bval = np.full((n, 2) + grid.dims, np.nan)
        if not inside.any():
            raise DegenerateDomainError("level region contains no grid node")
        idx = np.argwhere(inside)
        demote = np.zeros(idx.shape[0], dtype=bool)
        for d in range(n):
            for sdir, s in ((0, -1), (1, +1)):
                nbr = idx + _axis_offset(n, d, s)
                ok = ~inside[tuple(nbr.T)]
                if not ok.any():
                    continue
                base = grid.coords(idx[ok])
                step = np.zeros((1, n))
                step[0, d] = s * grid.h
                lo = np.zeros(ok.sum())
                hi = np.ones(ok.sum())
                for _ in range(bisect_iters):
                    mid = 0.5 * (lo + hi)
                    neg = phi(base + mid[:, None] * step) < 0.0
                    lo = np.where(neg, mid, lo)
                    hi = np.where(neg, hi, mid)
                th = np.minimum(0.5 * (lo + hi), 1.0 - 1e-9)
                demote[ok] |= th < theta_min
                sel = (np.full(ok.sum(), d), np.full(ok.sum(), sdir)) + tuple(
                    idx[ok].T
                )
                theta[sel] = th
                cutpts = base + th[:, None] * step
                bval[sel] = bv_fn(cutpts) if bv_fn else bv_const
        if not demote.any():
            break
        inside[tuple(idx[demote].T)] = False
    return DomainMask(grid=grid, inside=inside, theta=theta, bval=bval)


def mask_from_ellipse(semiaxes, h, center=None, margin=3) -> DomainMask:
    """Mask of the open ellipsoid sum((x_i-c_i)^2/s_i^2) < 1."""
    s = np.asarray(semiaxes, dtype=float)
    n = s.size
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)

    def phi(X):
        return np.sum(((X - c) / s) ** 2, axis=-1) - 1.0

    return _mask_from_phi(phi, lo=c - s, hi=c + s, h=h, margin=margin)


def mask_from_polygon(vertices, h, margin=3) -> DomainMask:
    """Mask of an open convex polygon given by counterclockwise vertices."""
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != 2:
        raise PreconditionError("polygon vertices must be (m, 2)")
    m = V.shape[0]
    normals, offsets = [], []
    for i in range(m):
        a, b = V[i], V[(i + 1) % m]
        e = b - a
        nvec = np.array([e[1], -e[0]])  # outward for CCW ordering
        nvec /= np.linalg.norm(nvec)
        normals.append(nvec)
        offsets.append(nvec @ a)
    N = np.asarray(normals)
    O = np.asarray(offsets)

    def phi(X):
        return np.max(X @ N.T - O, axis=-1)

    return _mask_from_phi(phi, lo=V.min(axis=0), hi=V.max(axis=0), h=h, margin=margin)


def _mask_from_phi(phi, lo, hi, h, margin) -> DomainMask:
    lo = np.asarray(lo, dtype=float) - margin * h
    hi = np.asarray(hi, dtype=float) + margin * h
    dims = tuple(int(math.ceil((b - a) / h)) + 1 for a, b in zip(lo, hi))
    grid = Grid(n=len(dims), dims=dims, origin=lo, h=h)
    return rasterize(phi, grid, boundary_value=1.0)


# ---------------------------------------------------------------------------
# scalar fields


@dataclass
class ScalarField:
    """Field values over the inside nodes of a mask."""

    mask: DomainMask
    values: np.ndarray               # full array, meaningful on inside nodes
    level: float = math.nan          # boundary level for sub-level-set fields
    normalized: bool = False
    anchor: tuple | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.mask.grid.dims:
            raise PreconditionError("values shape must match the grid")
        if not np.all(np.isfinite(self.inside_values())):
            raise PreconditionError("field values must be finite inside")
        self._ghost = None

    @property
    def grid(self) -> Grid:
        return self.mask.grid

    def inside_values(self) -> np.ndarray:
        return self.values[tuple(self.mask.inside_idx.T)]

    def with_values(self, values_in) -> "ScalarField":
        full = np.zeros(self.grid.dims)
        full[tuple(self.mask.inside_idx.T)] = values_in
        return ScalarField(
            mask=self.mask, values=full, level=self.level,
            normalized=self.normalized, anchor=self.anchor,
        )

    # -- differential operators ------------------------------------------

    def hessian_at(self, node) -> SymmetricMatrix:
        st = self.mask.stencils()
        r = self.mask.unknown[tuple(node)]
        if r < 0:
            raise PreconditionError("node is outside the mask")
        if not st.mixed_ok[r]:
            raise StencilError("no usable mixed-derivative stencil at this node")
        u = self.inside_values()
        n = self.mask.n
        H = np.empty((n, n))
        for (p, q), (A, c) in st.hess.items():
            v = float((A[r] @ u)[0] + c[r])
            H[p, q] = H[q, p] = v
        return SymmetricMatrix.from_array(H)

    def gradient_at(self, node) -> np.ndarray:
        st = self.mask.stencils()
        r = self.mask.unknown[tuple(node)]
        if r < 0:
            raise PreconditionError("node is outside the mask")
        u = self.inside_values()
        return np.array(
            [float((st.grad[d][0][r] @ u)[0] + st.grad[d][1][r]) for d in range(self.mask.n)]
        )

    def hessian_stack(self) -> np.ndarray:
        return self.mask.stencils().hessian_stack(self.inside_values())

    def gradient_stack(self) -> np.ndarray:
        return self.mask.stencils().gradient_stack(self.inside_values())

    # -- interpolation -----------------------------------------------------

    def _ghost_values(self) -> dict:
        """Extrapolated values at outside nodes adjacent to the mask.

        Each outside neighbor takes the value extending the inside node
        linearly through its sharpest cut, which keeps multilinear
        interpolation consistent with the Dirichlet data.
        """
        if self._ghost is not None:
            return self._ghost
        st = self.mask.stencils()
        u = self.inside_values()
        best = {}
        for r, d, s, th, bv in zip(
            st.cut_node, st.cut_axis, st.cut_dir, st.cut_theta, st.cut_bval
        ):
            idx = self.mask.inside_idx[r]
            out = tuple(idx + _axis_offset(self.mask.n, d, s))
            val = u[r] + (bv - u[r]) / th
            if out not in best or th < best[out][0]:
                best[out] = (th, val)
        self._ghost = {k: v for k, (_, v) in best.items()}
        return self._ghost

    def interpolate(self, x) -> float:
        """Multilinear interpolation; exact for affine data and returning
        the stored Dirichlet value exactly at cut points on grid lines."""
        return float(self.interpolate_many(np.asarray(x, dtype=float)[None, :])[0])

    def interpolate_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        g = self.grid
        t = (X - g.origin) / g.h
        cell = np.clip(np.floor(t).astype(int), 0, np.asarray(g.dims) - 2)
        frac = t - cell
        bump = (frac > 1.0 - 1e-12) & (cell + 1 <= np.asarray(g.dims) - 2)
        cell = cell + bump.astype(int)
        frac = np.where(bump, 0.0, frac)
        on_axis = np.abs(frac) < 1e-12
        out = np.empty(X.shape[0])
        ghost = self._ghost_values()
        ins = self.mask.inside

        for i in range(X.shape[0]):
            free = [d for d in range(g.n) if not on_axis[i, d]]
            if len(free) == 1:
                out[i] = self._interp_line(cell[i], frac[i], free[0])
                continue
            acc = 0.0
            for corner in itertools.product((0, 1), repeat=g.n):
                w = 1.0
                node = tuple(cell[i] + np.asarray(corner))
                for d in range(g.n):
                    w *= frac[i, d] if corner[d] else 1.0 - frac[i, d]
                if w == 0.0:
                    continue
                if ins[node]:
                    acc += w * self.values[node]
                elif node in ghost:
                    acc += w * ghost[node]
                else:
                    raise PreconditionError("interpolation point outside the domain")
            out[i] = acc
        return out

    def _interp_line(self, cell, frac, d):
        """1D interpolation along a grid line, honoring cut data exactly."""
        g = self.grid
        a = tuple(cell)
        b = tuple(cell + _axis_offset(g.n, d, 1))
        t = frac[d]
        ins = self.mask.inside
        if ins[a] and ins[b]:
            return (1 - t) * self.values[a] + t * self.values[b]
        if ins[a]:
            th = self.mask.theta[(d, 1) + a]
            bv = self.mask.bval[(d, 1) + a]
            if t <= th + 1e-12:
                return self.values[a] + (bv - self.values[a]) * (t / th)
            raise PreconditionError("interpolation point outside the domain")
        if ins[b]:
            th = self.mask.theta[(d, 0) + b]
            bv = self.mask.bval[(d, 0) + b]
            s = 1.0 - t
            if s <= th + 1e-12:
                return self.values[b] + (bv - self.values[b]) * (s / th)
        raise PreconditionError("interpolation point outside the domain")

    def check_normalized(self) -> bool:
        """Anchor-node value within 2h * max|Du| of zero."""
        if self.anchor is None:
            return False
        gmax = float(np.max(np.linalg.norm(self.gradient_stack(), axis=1)))
        return abs(self.values[tuple(self.anchor)]) <= 2.0 * self.grid.h * max(gmax, 1e-30)


def sample_candidate(cand, grid: Grid, level: float) -> ScalarField:
    """Sample a registered analytic candidate on its sub-level set."""
    if level <= 0:
        raise DegenerateDomainError("level must be positive")

    def phi(X):
        return cand.value(X) - level

    mask = rasterize(phi, grid, boundary_value=level)
    if np.any(mask.extents() < 3):
        raise DegenerateDomainError("sub-level set too small for this grid")
    full = np.zeros(grid.dims)
    full[tuple(mask.inside_idx.T)] = cand.value(mask.inside_coords())
    anchor = mask.node_nearest(cand.anchor)
    return ScalarField(
        mask=mask, values=full, level=level, normalized=True, anchor=anchor
    )


def grid_for_candidate(cand, level: float, h: float, margin: int = 4) -> Grid:
    """Axis-aligned grid box guaranteed to contain the open sub-level set."""
    from .polar import directions_2d, sphere_mesh, radial_crossings

    dirs = directions_2d(256) if cand.n == 2 else sphere_mesh(3)[0]
    rho = radial_crossings(cand, level, dirs)
    pts = cand.anchor + rho[:, None] * dirs
    lo = pts.min(axis=0) - margin * h
    hi = pts.max(axis=0) + margin * h
    dims = tuple(int(math.ceil((b - a) / h)) + 1 for a, b in zip(lo, hi))
    return Grid(n=cand.n, dims=dims, origin=lo, h=h)


# ---------------------------------------------------------------------------
# HSF1 text format


def save_hsf1(field: ScalarField, path):
    """Write the field in the HSF1 text format (17 significant digits)."""
    g = field.grid
    lines = [
        f"HSF1 n={g.n}",
        "dims=" + ",".join(str(d) for d in g.dims),
        "origin=" + ",".join(f"{v:.17g}" for v in g.origin),
        f"h={g.h:.17g}",
        f"level={field.level:.17g}",
    ]
    ins = field.mask.inside
    for idx in np.ndindex(*g.dims):
        head = " ".join(str(i) for i in idx)
        if ins[idx]:
            lines.append(f"{head} 1 {field.values[idx]:.17g}")
        else:
            lines.append(f"{head} 0")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_hsf1(path) -> ScalarField:
    """Read an HSF1 field.

    The format stores node payloads only; boundary cut fractions are
    re-estimated from one-sided slopes against the stored level, so cut
    geometry is approximate after a round trip while every header item and
    node value is bit-exact.
    """
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines[0].startswith("HSF1 n="):
        raise PreconditionError("not an HSF1 file")
    n = int(lines[0].split("=")[1])
    dims = tuple(int(v) for v in lines[1].split("=")[1].split(","))
    origin = np.array([float(v) for v in lines[2].split("=")[1].split(",")])
    h = float(lines[3].split("=")[1])
    level = float(lines[4].split("=")[1])
    grid = Grid(n=n, dims=dims, origin=origin, h=h)
    inside = np.zeros(dims, dtype=bool)
    values = np.zeros(dims)
    for ln in lines[5:]:
        parts = ln.split()
        idx = tuple(int(v) for v in parts[:n])
        if parts[n] == "1":
            inside[idx] = True
            values[idx] = float(parts[n + 1])
    theta = np.ones((n, 2) + dims)
    bval = np.full((n, 2) + dims, np.nan)
    lvl = level if math.isfinite(level) else None
    for idx in np.argwhere(inside):
        for d in range(n):
            for sdir, s in ((0, -1), (1, +1)):
                nbr = tuple(idx + _axis_offset(n, d, s))
                if inside[nbr]:
                    continue
                here = tuple(idx)
                inner = tuple(idx - _axis_offset(n, d, s))
                th = 0.5
                if lvl is not None and inside[inner]:
                    # one-sided slope toward the boundary along direction s
                    m = (values[here] - values[inner]) / h
                    if m > 0:
                        th = (lvl - values[here]) / (m * h)
                        th = min(max(th, 1e-3), 1.0 - 1e-9)
                theta[(d, sdir) + here] = th
                bval[(d, sdir) + here] = lvl if lvl is not None else values[here]
    mask = DomainMask(grid=grid, inside=inside, theta=theta, bval=bval)
    return ScalarField(mask=mask, values=values, level=level)
