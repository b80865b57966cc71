"""Growth functionals over convex candidates and solved fields.

Implements the ratio of the gradient integral to the layer-cake norm on
sub-level sets, the volume-growth and weighted-integrability scalars with
log-log slope fits, the first (Pogorelov-style) normalization, tangential
recentring, and the convex conjugate on grids, plus the diagnostic
integral bounds used as cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import ConvexHull

from . import polar
from .candidates import AnalyticCandidate, rescaled, shifted
from .errors import AdmissibilityError, PreconditionError
from .fields import DomainMask, Grid, ScalarField
from .symm import esym_table


class Condition(str, Enum):
    REVERSE_ISO = "reverse_iso"
    VOLUME_GROWTH = "volume_growth"
    LP_INTEGRABILITY = "lp_integrability"


@dataclass
class IsoperimetricSample:
    """One level's gradient integral over the layer-cake norm."""

    t: float
    numerator: float
    denominator: float

    @property
    def ratio(self) -> float:
        return self.numerator / self.denominator


@dataclass
class GrowthVerdict:
    condition: Condition
    p: float | None
    samples: list                      # (t, value)
    fitted_exponent: float
    ci_halfwidth: float
    verdict: str                       # bounded | unbounded | inconclusive
    running_min: float

    def to_json_dict(self) -> dict:
        return {
            "condition": self.condition.value,
            "p": self.p,
            "slope": self.fitted_exponent,
            "ci": self.ci_halfwidth,
            "verdict": self.verdict,
            "running_min": self.running_min,
            "samples": [[float(t), float(v)] for t, v in self.samples],
        }

    def export_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t value running_min\n")
            rmin = math.inf
            for t, v in self.samples:
                rmin = min(rmin, v)
                fh.write(f"{t:.17g} {v:.17g} {rmin:.17g}\n")


EPS_SLOPE = 0.02


def iso_ratio(source, t: float, m_dirs: int = 720, n_r: int = 48) -> IsoperimetricSample:
    """Gradient integral over the layer-cake norm at one level."""
    if t <= 0:
        raise PreconditionError("level must be positive")
    if isinstance(source, AnalyticCandidate):
        n = source.n
        num = polar.integrate_sublevel(
            source, t, lambda X: np.linalg.norm(source.grad(X), axis=1),
            m_dirs=m_dirs, n_r=n_r,
        )
        den_raw = polar.integrate_sublevel(
            source, t, lambda X: np.abs(t - source.value(X)) ** (n / (n - 1.0)),
            m_dirs=m_dirs, n_r=n_r,
        )
    elif isinstance(source, ScalarField):
        n = source.mask.n
        st = source.mask.stencils()
        u = source.inside_values()
        sel = u < t
        w = st.weights[sel]
        g = np.linalg.norm(source.gradient_stack()[sel], axis=1)
        num = float(np.sum(w * g))
        den_raw = float(np.sum(w * np.abs(t - u[sel]) ** (n / (n - 1.0))))
    else:
        raise PreconditionError("source must be a candidate or a sampled field")
    den = den_raw ** ((n - 1.0) / n)
    if num <= 0 or den <= 0:
        raise PreconditionError("degenerate integrals at this level")
    return IsoperimetricSample(t=t, numerator=num, denominator=den)


def layer_cake_floor(n: int) -> float:
    """Dimensional constant c(n) with denominator >= c(n) t mu(t)^((n-1)/n),
    from comparing against the cone over the level set."""
    a = n / (n - 1.0)
    b = n + 1.0
    beta = math.gamma(a) * math.gamma(b) / math.gamma(a + b)
    return (n / (n - 1.0) * beta) ** ((n - 1.0) / n)


def _ols_slope(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    resid = y - (ym + slope * (x - xm))
    dof = max(x.size - 2, 1)
    se = math.sqrt(float(np.sum(resid**2)) / dof / sxx)
    return slope, 1.96 * se


def condition_sweep(
    cand: AnalyticCandidate,
    condition: Condition | str,
    t_grid,
    p: float = 1.0,
    m_dirs: int = 720,
    eps_slope: float = EPS_SLOPE,
) -> GrowthVerdict:
    """Evaluate one growth condition over a geometric level grid and fit
    the log-log slope; the running minimum proxies the limit inferior."""
    condition = Condition(condition)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 12:
        raise PreconditionError("need at least 12 levels for a slope fit")
    if np.any(np.diff(t_grid) <= 0):
        raise PreconditionError("level grid must be increasing")
    n = cand.n
    vals = np.empty(t_grid.size)
    for i, t in enumerate(t_grid):
        if condition is Condition.REVERSE_ISO:
            vals[i] = iso_ratio(cand, float(t), m_dirs=m_dirs).ratio
        elif condition is Condition.VOLUME_GROWTH:
            vals[i] = t ** (-n / 2.0) * polar.sublevel_volume(cand, float(t), m_dirs)
        else:
            integral = polar.integrate_sublevel(
                cand, float(t), lambda X: (cand.value(X) + 1.0) ** p, m_dirs=m_dirs
            )
            vals[i] = t ** (-p - n / 2.0) * integral
    slope, ci = _ols_slope(np.log(t_grid), np.log(vals))
    if slope <= eps_slope:
        verdict = "bounded"
    elif slope - ci > 0.0:
        verdict = "unbounded"
    else:
        verdict = "inconclusive"
    return GrowthVerdict(
        condition=condition,
        p=p if condition is Condition.LP_INTEGRABILITY else None,
        samples=list(zip(t_grid.tolist(), vals.tolist())),
        fitted_exponent=slope,
        ci_halfwidth=ci,
        verdict=verdict,
        running_min=float(np.min(vals)),
    )


# ---------------------------------------------------------------------------
# normalizations


def pogorelov_normalize(source, t0: float):
    """First normalization u(sqrt(t0) x) / t0: level t0 becomes level 1."""
    if t0 <= 0:
        raise PreconditionError("normalization level must be positive")
    if isinstance(source, AnalyticCandidate):
        return rescaled(source, t0)
    if isinstance(source, ScalarField):
        s = math.sqrt(t0)
        g = source.grid
        grid = Grid(n=g.n, dims=g.dims, origin=g.origin / s, h=g.h / s)
        mask = DomainMask(
            grid=grid,
            inside=source.mask.inside.copy(),
            theta=source.mask.theta.copy(),
            bval=source.mask.bval / t0,
        )
        return ScalarField(
            mask=mask,
            values=source.values / t0,
            level=source.level / t0,
            normalized=source.normalized,
            anchor=source.anchor,
        )
    raise PreconditionError("source must be a candidate or a sampled field")


def recenter(cand: AnalyticCandidate, x0) -> AnalyticCandidate:
    """Subtract the tangent plane at x0; the anchor moves to x0."""
    return shifted(cand, x0)


# ---------------------------------------------------------------------------
# convex conjugate on grids


def legendre_transform(
    f: ScalarField, region_level: float | None = None, out_dims: int | None = None
) -> ScalarField:
    """Grid conjugate sup_x (x . y - u(x)) over a sub-level region.

    Brute-force supremum over sample points followed by one projected
    gradient refinement per target; the output lives on a fresh grid
    covering the gradient image, masked by its convex hull, and is pinned
    to value zero at the origin.
    """
    mask = f.mask
    st = mask.stencils()
    n = mask.n
    lvl = f.level if math.isfinite(f.level) else float(np.max(f.inside_values()))
    region_level = lvl / 2.0 if region_level is None else region_level
    u_all = f.inside_values()
    sel = u_all < region_level
    if sel.sum() < 3**n:
        raise PreconditionError("region too small for the transform")
    lam = np.linalg.eigvalsh(st.hessian_stack(u_all)[sel & st.is_full])
    if lam.size and np.min(lam) <= 0:
        raise AdmissibilityError("transform input not strictly convex on the region")

    X = mask.inside_coords()[sel]
    U = u_all[sel]
    G = st.gradient_stack(u_all)[sel]
    H_nodes = st.hessian_stack(u_all)[sel]
    model_ok = np.zeros(len(U), dtype=bool)
    lam_nodes = np.linalg.eigvalsh(H_nodes)
    model_ok = (st.is_full | st.is_collar)[sel] & (lam_nodes[:, 0] > 0)

    hull = ConvexHull(G)
    lo, hi = G.min(axis=0), G.max(axis=0)
    span = float(np.max(hi - lo))
    dims0 = out_dims or max(int(np.median(mask.extents())), 33)
    h_out = span / (dims0 - 1)
    margin = 2.0 * h_out
    eqs = hull.equations

    def phi(Y):
        return np.max(Y @ eqs[:, :-1].T + eqs[:, -1], axis=-1) + margin

    def sup_at(Y):
        out = np.empty(Y.shape[0])
        arg = np.empty(Y.shape[0], dtype=int)
        chunk = max(1, int(4e6 / max(X.shape[0], 1)))
        for i0 in range(0, Y.shape[0], chunk):
            block = Y[i0 : i0 + chunk] @ X.T - U[None, :]
            arg[i0 : i0 + chunk] = np.argmax(block, axis=1)
            out[i0 : i0 + chunk] = block[
                np.arange(block.shape[0]), arg[i0 : i0 + chunk]
            ]
        return out, arg

    def refined(Y):
        """Supremum sharpened by the local quadratic model at the argmax
        node: exact for quadratic data and O(h^3)-consistent otherwise,
        keeping the transform smooth enough to difference twice."""
        Y = np.atleast_2d(Y)
        v, arg = sup_at(Y)
        usable = model_ok[arg]
        if usable.any():
            ia = arg[usable]
            rhs = Y[usable] - G[ia]
            d = np.linalg.solve(H_nodes[ia], rhs[..., None])[..., 0]
            step_ok = np.linalg.norm(d, axis=1) <= 2.5 * mask.grid.h * math.sqrt(n)
            v_model = (
                np.einsum("ij,ij->i", X[ia], Y[usable])
                - U[ia]
                + 0.5 * np.einsum("ij,ij->i", rhs, d)
            )
            upd = np.where(step_ok, v_model, v[usable])
            v[usable] = upd
        return v

    dims = tuple(
        max(int(math.ceil((hi[d] - lo[d] + 6 * h_out) / h_out)) + 1, 7)
        for d in range(n)
    )
    origin = lo - 3 * h_out
    grid = Grid(n=n, dims=dims, origin=origin, h=h_out)

    from .fields import rasterize

    out_mask = rasterize(phi, grid, boundary_value=lambda pts: refined(pts))
    vals = np.zeros(grid.dims)
    pts_in = out_mask.inside_coords()
    v_in = refined(pts_in)
    v0 = refined(np.zeros((1, n)))[0]
    vals[tuple(out_mask.inside_idx.T)] = v_in - v0
    bshift = out_mask.bval - v0
    out_mask.bval = bshift
    anchor = out_mask.node_nearest(np.zeros(n))
    return ScalarField(
        mask=out_mask, values=vals, level=math.nan, normalized=True, anchor=anchor
    )


# ---------------------------------------------------------------------------
# diagnostic integral relations


def domain_image_radii_check(report, region_frac: float = 0.5, calib=None) -> dict:
    """Solved quotient instance: the domain is not large and the gradient
    image of the half-level region is not small, against calibrated radii."""
    from . import geometry
    from .calibration import get_constants

    calib = calib or get_constants()
    f = report.field
    n = f.mask.n
    body = geometry.body_from_mask(f.mask)
    fit = geometry.ball_fit(body)
    drop = report.problem.boundary_value - report.u_min
    s = math.sqrt(drop)
    r_enclosing = body.max_vertex_distance(fit.center) / s

    u = f.inside_values()
    cut = report.u_min + region_frac * drop
    sel = u < cut
    G = f.gradient_stack()[sel] / s
    if G.shape[0] < n + 2:
        raise PreconditionError("half-level region too small")
    hull_pts = G
    image = geometry.ConvexBody(
        n=n,
        vertices=hull_pts[ConvexHull(hull_pts).vertices]
        if n == 2
        else hull_pts,
        interior_point=np.zeros(n),
    )
    r_image = image.boundary_distance(np.zeros(n))
    C1 = calib["domain_radius_bound_C1"][str(n)]
    C2 = calib["gradient_image_bound_C2"][str(n)]
    return {
        "r_enclosing": float(r_enclosing),
        "enclosing_slack": float(C1 - r_enclosing),
        "r_image": float(r_image),
        "image_slack": float(r_image - 1.0 / C2),
    }


def tw_integral_diagnostic(field_or_report, q: float, l: int, k: int | None = None):
    """Interior gradient-power integral against its scale bound.

    Returns (lhs, rhs_scale): the integral of |Du|^q S_l(D2u) over the
    interior median-level region, and dist^(-2l-q) (integral of the value
    drop)^(q+l). The universal prefactor is unknown, so the pair is a
    recorded diagnostic, not an assertion.
    """
    from . import geometry

    report = None
    if isinstance(field_or_report, ScalarField):
        f = field_or_report
        bv = f.level if math.isfinite(f.level) else float(np.max(f.inside_values()))
    else:
        report = field_or_report
        f = report.field
        bv = report.problem.boundary_value
    n = f.mask.n
    k = k if k is not None else n
    if q < 0:
        raise PreconditionError("exponent q must be nonnegative")
    if k < n and not q < n * (k - l) / (n - k):
        raise PreconditionError("exponent q outside the admissible range")
    if l < 0 or l >= k:
        raise PreconditionError("need 0 <= l < k")
    st = f.mask.stencils()
    u = f.inside_values()
    u_min = float(np.min(u))
    cut = 0.5 * (u_min + bv)
    sel = u < cut
    if not sel.any():
        raise PreconditionError("median-level region is empty")
    H = f.hessian_stack()
    Sl = esym_table(np.linalg.eigvalsh(H[sel]))[:, l]
    g = np.linalg.norm(f.gradient_stack()[sel], axis=1)
    lhs = float(np.sum(st.weights[sel] * g**q * Sl))

    inner = geometry.ConvexBody(
        n=n,
        vertices=_hull_vertices(f.mask.inside_coords()[sel]),
        interior_point=f.mask.inside_coords()[sel].mean(axis=0),
    )
    outer = geometry.body_from_mask(f.mask)
    dist = float(
        min(outer.boundary_distance(v) for v in inner.vertices)
    )
    mass = float(np.sum(st.weights * (bv - u)))
    rhs = dist ** (-2.0 * l - q) * mass ** (q + l)
    return lhs, rhs


def _hull_vertices(P):
    hull = ConvexHull(P)
    return P[hull.vertices] if P.shape[1] == 2 else P[np.unique(hull.simplices)]


def layer_cake_identity(cand: AnalyticCandidate, t: float, p: float, m_dirs: int = 720):
    """Both sides of the weighted volume identity
    t^(-p-n/2) int_{region(t-1)} (t-u)^p = p t^(-p-n/2) int_0^t (t-s)^(p-1)
    vol(region(min(s, t-1))) ds, as a quadrature cross-check pair."""
    if p <= 0:
        raise PreconditionError("weight exponent must be positive")
    if t <= 1:
        raise PreconditionError("level must exceed one")
    n = cand.n
    pref = t ** (-p - n / 2.0)
    lhs = pref * polar.integrate_sublevel(
        cand, t - 1.0, lambda X: (t - cand.value(X)) ** p, m_dirs=m_dirs
    )
    xg, wg = np.polynomial.legendre.leggauss(64)
    s_nodes = 0.5 * (xg + 1.0) * (t - 1.0)
    w_nodes = 0.5 * (t - 1.0) * wg
    mu_vals = np.array(
        [polar.sublevel_volume(cand, float(s), m_dirs=m_dirs) for s in s_nodes]
    )
    integral = float(np.sum((t - s_nodes) ** (p - 1.0) * mu_vals * w_nodes))
    mu_top = polar.sublevel_volume(cand, t - 1.0, m_dirs=m_dirs)
    integral += mu_top / p  # the flat tail where the region saturates
    rhs = p * pref * integral
    return lhs, rhs


def radial_gradient_monotone(cand: AnalyticCandidate, m_dirs: int = 64, n_r: int = 40,
                             r_max: float = 50.0) -> float:
    """Minimum increment of the radial derivative along sampled rays;
    nonnegative (up to roundoff) for convex candidates."""
    dirs = (
        polar.directions_2d(m_dirs)
        if cand.n == 2
        else polar.sphere_mesh(1)[0]
    )
    r = np.linspace(1e-3, r_max, n_r)
    worst = math.inf
    for w in dirs:
        pts = cand.anchor + r[:, None] * w[None, :]
        ur = cand.grad(pts) @ w
        worst = min(worst, float(np.min(np.diff(ur))))
    return worst
