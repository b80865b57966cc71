"""Convex-body measurements of sub-level sets.

Bodies come from ray-shooting analytic candidates (spectrally accurate in
the radial direction) or from contouring solver output fields. On top of
them sit the concentric two-ball roundness fit, the minimum-volume
enclosing ellipsoid normalized to a volume-preserving map, level profiles
(volume and boundary measure per level), and the gradient-image area
identities for convex functions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize
from scipy.spatial import ConvexHull

from .candidates import AnalyticCandidate
from .errors import (
    AdmissibilityError,
    DegenerateDomainError,
    NonConvergenceError,
    PreconditionError,
)
from .fields import ScalarField
from .polar import directions_2d, radial_crossings, sphere_mesh


@dataclass
class ConvexBody:
    """Boundary polyline (n=2) or triangle mesh (n=3) of a convex body."""

    n: int
    vertices: np.ndarray
    faces: np.ndarray | None = None     # triangle index triples, n=3 only
    interior_point: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.interior_point is None:
            self.interior_point = self.vertices.mean(axis=0)
        self.interior_point = np.asarray(self.interior_point, dtype=float)
        if self.n == 2:
            self._hull_eqs = _polygon_equations(self.vertices)
        else:
            hull = ConvexHull(self.vertices)
            self._hull_eqs = hull.equations
            if self.faces is None:
                self.faces = hull.simplices
        if self.volume() <= 0:
            raise DegenerateDomainError("body has nonpositive volume")

    # -- measures ---------------------------------------------------------

    def volume(self) -> float:
        if self.n == 2:
            x, y = self.vertices[:, 0], self.vertices[:, 1]
            return 0.5 * abs(
                float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
            )
        a = self.vertices[self.faces[:, 0]] - self.interior_point
        b = self.vertices[self.faces[:, 1]] - self.interior_point
        c = self.vertices[self.faces[:, 2]] - self.interior_point
        return float(np.abs(np.einsum("ij,ij->i", a, np.cross(b, c))).sum() / 6.0)

    def surface(self) -> float:
        """Boundary length (n=2) or mesh area (n=3)."""
        if self.n == 2:
            d = np.roll(self.vertices, -1, axis=0) - self.vertices
            return float(np.linalg.norm(d, axis=1).sum())
        a = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 2]] - self.vertices[self.faces[:, 0]]
        return float(0.5 * np.linalg.norm(np.cross(a, b), axis=1).sum())

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def diameter(self) -> float:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    # -- support machinery --------------------------------------------------

    def boundary_distance(self, x) -> float:
        """Distance from an interior point to the boundary (min over facet
        planes, exact for interior points of a convex polytope)."""
        x = np.asarray(x, dtype=float)
        A, b = self._hull_eqs[:, :-1], self._hull_eqs[:, -1]
        return float(np.min(-(A @ x + b)))

    def max_vertex_distance(self, x) -> float:
        return float(np.max(np.linalg.norm(self.vertices - np.asarray(x), axis=1)))

    def contains(self, x, slack=0.0) -> bool:
        A, b = self._hull_eqs[:, :-1], self._hull_eqs[:, -1]
        return bool(np.all(A @ np.asarray(x, dtype=float) + b <= slack))

    def vertices_extreme(self, rtol: float = 1e-9) -> bool:
        """Every vertex within rtol * diameter of the hull of the vertex set."""
        A, b = self._hull_eqs[:, :-1], self._hull_eqs[:, -1]
        viol = np.max(self.vertices @ A.T + b, axis=1)
        return bool(np.max(np.abs(np.minimum(viol, 0.0))) <= rtol * self.diameter())

    def export_csv(self, path):
        with open(path, "w") as fh:
            for v in self.vertices:
                fh.write(" ".join(f"{x:.17g}" for x in v) + "\n")


def _polygon_equations(V) -> np.ndarray:
    """Outward facet equations [a, b] with a.x + b <= 0 inside, CCW input."""
    c = V.mean(axis=0)
    e = np.roll(V, -1, axis=0) - V
    nrm = np.stack([e[:, 1], -e[:, 0]], axis=1)
    ln = np.linalg.norm(nrm, axis=1)
    keep = ln > 1e-300
    nrm = nrm[keep] / ln[keep, None]
    off = np.einsum("ij,ij->i", nrm, V[keep])
    flip = nrm @ c - off > 0
    nrm[flip] *= -1.0
    off = np.where(flip, -off, off)
    return np.column_stack([nrm, -off])


def _order_polygon(points, center) -> np.ndarray:
    ang = np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0])
    return points[np.argsort(ang)]


# ---------------------------------------------------------------------------
# extraction


def extract_body(source, t: float, m_dirs: int | None = None) -> ConvexBody:
    """Boundary of the open sub-level set at level t.

    Analytic candidates are ray-shot from their anchor (unique crossing by
    monotonicity of the radial derivative). Sampled fields are contoured:
    marching squares in the plane, radial bisection of the interpolant in
    space; the vertex cloud is convexified afterward.
    """
    if t <= 0:
        raise PreconditionError("level must be positive")
    if isinstance(source, AnalyticCandidate):
        if source.n == 2:
            dirs = directions_2d(m_dirs or 720)
            rho = radial_crossings(source, t, dirs)
            verts = source.anchor + rho[:, None] * dirs
            return ConvexBody(n=2, vertices=verts, interior_point=source.anchor.copy())
        verts_dir, faces = sphere_mesh(5 if m_dirs is None else m_dirs)
        rho = radial_crossings(source, t, verts_dir)
        verts = source.anchor + rho[:, None] * verts_dir
        return ConvexBody(
            n=3, vertices=verts, faces=faces, interior_point=source.anchor.copy()
        )
    if isinstance(source, ScalarField):
        return _extract_from_field(source, t)
    raise PreconditionError("source must be a candidate or a sampled field")


def body_from_mask(mask) -> ConvexBody:
    """Body whose boundary is the mask's own Dirichlet cut cloud."""
    st = mask.stencils()
    pts = st.cut_points
    if pts.shape[0] < mask.n + 2:
        raise DegenerateDomainError("not enough cut points to form a body")
    if mask.n == 2:
        hull = ConvexHull(pts)
        verts = pts[hull.vertices]
        return ConvexBody(n=2, vertices=verts)
    hull = ConvexHull(pts)
    return ConvexBody(n=3, vertices=pts, faces=hull.simplices)


def _extract_from_field(f: ScalarField, t: float) -> ConvexBody:
    level = f.level
    if math.isfinite(level) and t > level + 1e-12:
        raise PreconditionError("requested level exceeds the sampled range")
    if math.isfinite(level) and abs(t - level) <= 1e-12:
        return body_from_mask(f.mask)
    if f.mask.n == 2:
        pts = _marching_squares(f, t)
        if pts.shape[0] < 4:
            raise DegenerateDomainError("contour too small on this grid")
        hull = ConvexHull(pts)
        return ConvexBody(n=2, vertices=pts[hull.vertices])
    # n = 3: radial bisection on the interpolant from the anchor
    anchor_idx = f.anchor or f.mask.node_nearest(f.grid.coords(f.mask.inside_idx).mean(axis=0))
    a = f.grid.coords(np.asarray(anchor_idx))
    dirs, faces = sphere_mesh(2)
    rho_max = f.mask.inside_coords() - a
    r_hi = np.linalg.norm(rho_max, axis=1).max()
    lo = np.zeros(dirs.shape[0])
    hi = np.full(dirs.shape[0], r_hi)

    def val(r):
        return f.interpolate_many(a + r[:, None] * dirs)

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        try:
            below = val(mid) < t
        except PreconditionError:
            below = np.array(
                [_safe_below(f, a, dirs[i], mid[i], t) for i in range(len(mid))]
            )
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    verts = a + (0.5 * (lo + hi))[:, None] * dirs
    return ConvexBody(n=3, vertices=verts, faces=faces, interior_point=a)


def _safe_below(f, a, d, r, t):
    try:
        return f.interpolate(a + r * d) < t
    except PreconditionError:
        return False


def _marching_squares(f: ScalarField, t: float) -> np.ndarray:
    """Level-t crossing points on grid edges between inside nodes.

    The contour of a convex sub-level set is convex, so the unordered
    crossing cloud plus a hull is equivalent to chained marching squares.
    """
    g = f.grid
    ins = f.mask.inside
    v = f.values - t
    pts = []
    for d in range(2):
        sl_a = [slice(None)] * 2
        sl_b = [slice(None)] * 2
        sl_a[d] = slice(None, -1)
        sl_b[d] = slice(1, None)
        both = ins[tuple(sl_a)] & ins[tuple(sl_b)]
        va, vb = v[tuple(sl_a)], v[tuple(sl_b)]
        cross = both & (va * vb <= 0) & ((va != 0) | (vb != 0)) & (va != vb)
        ii, jj = np.nonzero(cross)
        s = va[cross] / (va[cross] - vb[cross])
        base = np.stack([ii, jj], axis=1).astype(float)
        base[:, d] += s
        pts.append(g.origin + base * g.h)
    P = np.vstack([p for p in pts if p.size]) if pts else np.zeros((0, 2))
    if P.shape[0] == 0:
        raise DegenerateDomainError("no contour at this level")
    return np.unique(np.round(P, 12), axis=0)


# ---------------------------------------------------------------------------
# roundness fits


@dataclass
class BallFit:
    """Concentric two-ball sandwich: B_{R/gamma}(x0) inside, B_{gamma R}(x0) outside."""

    center: np.ndarray
    R: float
    gamma: float

    def verify(self, body: ConvexBody, slack: float = 1e-6) -> bool:
        r_in = body.boundary_distance(self.center)
        r_out = body.max_vertex_distance(self.center)
        ok_in = self.R / self.gamma <= r_in * (1.0 + slack) + 1e-300
        ok_out = r_out <= self.gamma * self.R * (1.0 + slack)
        return bool(ok_in and ok_out)


def ball_fit(body: ConvexBody) -> BallFit:
    """Minimal concentric-ratio ball pair by multistart local descent.

    The optimum center search is heuristic (simplex descent seeded at the
    centroid and the Chebyshev center), so the reported gamma is an upper
    bound for the true minimal ratio; the containment itself is certified.
    """
    seeds = [body.centroid()]
    cheb = _chebyshev_center(body)
    if cheb is not None:
        seeds.append(cheb)

    def ratio(x):
        r_in = body.boundary_distance(x)
        if r_in <= 0:
            return 1e12
        return body.max_vertex_distance(x) / r_in

    best = None
    for seed in seeds:
        res = scipy.optimize.minimize(
            ratio, seed, method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 800},
        )
        if best is None or res.fun < best.fun:
            best = res
    x0 = best.x
    r_in = body.boundary_distance(x0)
    r_out = body.max_vertex_distance(x0)
    return BallFit(center=x0, R=math.sqrt(r_out * r_in), gamma=math.sqrt(r_out / r_in))


def _chebyshev_center(body: ConvexBody):
    A, b = body._hull_eqs[:, :-1], body._hull_eqs[:, -1]
    n = body.n
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.column_stack([A, np.ones(A.shape[0])])
    res = scipy.optimize.linprog(
        c, A_ub=A_ub, b_ub=-b, bounds=[(None, None)] * n + [(0, None)], method="highs"
    )
    if not res.success:
        return None
    return res.x[:n]


@dataclass
class EllipsoidFit:
    """Volume-preserving map A (det 1) sending the body near a ball of radius R."""

    center: np.ndarray
    A: np.ndarray
    mu: np.ndarray          # eigenvalues of A, ascending
    R: float

    def aspect(self) -> float:
        return float(math.sqrt(self.mu[-1] / self.mu[0]))

    def verify(self, body: "ConvexBody", slack: float = 1e-4) -> bool:
        """Certify the mapped body sits between balls whose radius ratio is
        within the dimensional sandwich factor n (plus slack)."""
        Y = (body.vertices - self.center) @ self.A.T
        r_out = float(np.max(np.linalg.norm(Y, axis=1)))
        mapped = ConvexBody(n=body.n, vertices=Y) if body.n == 2 else ConvexBody(
            n=body.n, vertices=Y, interior_point=np.zeros(body.n)
        )
        r_in = mapped.boundary_distance(np.zeros(body.n))
        ok_R = r_out <= self.R * (1.0 + slack)
        ok_ratio = r_out <= body.n * r_in * (1.0 + slack)
        return bool(ok_R and ok_ratio and r_in > 0)

    def export_json(self, path):
        payload = {
            "center": self.center.tolist(),
            "A": self.A.ravel().tolist(),
            "mu": self.mu.tolist(),
            "R": self.R,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")


def mvee(points, tol: float = 1e-7, max_iters: int = 200_000):
    """Minimum-volume enclosing ellipsoid (x-c)' E (x-c) <= 1.

    Khachiyan's barycentric ascent with away steps; tol bounds the relative
    optimality gap max_j M_j / (d+1) - 1.
    """
    P = np.asarray(points, dtype=float)
    N, d = P.shape
    if N < d + 1:
        raise PreconditionError("need at least d+1 points for an ellipsoid")
    Q = np.column_stack([P, np.ones(N)])
    u = np.full(N, 1.0 / N)
    dp1 = d + 1
    for _ in range(max_iters):
        V = Q.T @ (Q * u[:, None])
        try:
            Vinv = np.linalg.inv(V)
        except np.linalg.LinAlgError:
            raise NonConvergenceError("ellipsoid ascent hit a singular moment matrix")
        M = np.einsum("ij,jk,ik->i", Q, Vinv, Q)
        j_add = int(np.argmax(M))
        gap = M[j_add] / dp1 - 1.0
        if gap <= tol:
            break
        sup = u > 1e-12
        j_away = int(np.argmin(np.where(sup, M, np.inf)))
        kappa_add = (M[j_add] - dp1) / (dp1 * (M[j_add] - 1.0))
        kappa_away = min(
            (dp1 - M[j_away]) / (dp1 * (M[j_away] - 1.0))
            if M[j_away] > 1.0 + 1e-14
            else np.inf,
            u[j_away] / (1.0 - u[j_away]) if u[j_away] < 1.0 else np.inf,
        )
        # pick whichever step makes the larger first-order progress
        if kappa_add * (M[j_add] - dp1) >= kappa_away * (dp1 - M[j_away]):
            u *= 1.0 - kappa_add
            u[j_add] += kappa_add
        else:
            u *= 1.0 + kappa_away
            u[j_away] -= kappa_away
        u = np.maximum(u, 0.0)
        u /= u.sum()
    else:
        raise NonConvergenceError(
            "ellipsoid ascent exceeded the iteration cap", gap=gap
        )
    c = u @ P
    S = P.T @ (P * u[:, None]) - np.outer(c, c)
    E = np.linalg.inv(S) / d
    E = 0.5 * (E + E.T)
    return E, c


def john_fit(body: ConvexBody, tol: float = 1e-7, max_vertices: int = 2000) -> EllipsoidFit:
    """Minimum-volume enclosing ellipsoid, returned as a det-1 linear map.

    The map sends the enclosing ellipsoid to the ball of radius R equal to
    the geometric mean of its semi-axes; the eigenvalues mu of the map are
    reported ascending, so sqrt(mu_n / mu_1) is the aspect ratio. Dense
    boundary clouds are subsampled uniformly before the ascent.
    """
    verts = body.vertices
    if verts.shape[0] > max_vertices:
        verts = verts[:: verts.shape[0] // max_vertices + 1]
    E, c = mvee(verts, tol=tol)
    w, Qm = np.linalg.eigh(E)
    if np.any(w <= 0):
        raise NonConvergenceError("enclosing ellipsoid not positive definite")
    semi = 1.0 / np.sqrt(w)                    # semi-axes
    R = float(np.prod(semi) ** (1.0 / body.n))
    mu = R / semi                              # det-1 normalization
    A = (Qm * mu) @ Qm.T
    order = np.argsort(mu)
    return EllipsoidFit(center=c, A=A, mu=mu[order], R=R)


# ---------------------------------------------------------------------------
# level profiles


@dataclass
class LevelProfile:
    """Volumes and boundary measures of sub-level sets over a level grid."""

    levels: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    ndim: int = 2

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.levels.size and np.any(np.diff(self.levels) <= 0):
            raise PreconditionError("levels must be strictly increasing")
        if self.levels.size and np.any(np.diff(self.mu) < -1e-12 * self.mu.max()):
            raise PreconditionError("volume profile must be increasing")

    def mu_at(self, s: float) -> float:
        return float(np.interp(s, self.levels, self.mu))

    def nu_at(self, s: float) -> float:
        return float(np.interp(s, self.levels, self.nu))

    def integrate_nu(self, a: float, b: float, samples: int = 2000) -> float:
        s = np.linspace(a, b, samples)
        return float(np.trapezoid(np.interp(s, self.levels, self.nu), s))

    def export_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t mu nu\n")
            for t, m, v in zip(self.levels, self.mu, self.nu):
                fh.write(f"{t:.17g} {m:.17g} {v:.17g}\n")


def level_profile(source, levels, m_dirs: int | None = None) -> LevelProfile:
    levels = np.asarray(levels, dtype=float)
    mu = np.empty(levels.size)
    nu = np.empty(levels.size)
    ndim = source.n if hasattr(source, "n") else source.mask.n
    for i, t in enumerate(levels):
        body = extract_body(source, float(t), m_dirs=m_dirs)
        mu[i] = body.volume()
        nu[i] = body.surface()
    return LevelProfile(levels=levels, mu=mu, nu=nu, ndim=ndim)


def cone_lower_bound(profile: LevelProfile, s: float, t: float, tol: float = 1e-9):
    """Check mu(s) >= (s/t)^n mu(t) - tol; returns (passed, slack).

    The dimension is inferred from the stored profile via the attached
    body dimension carried in `profile.ndim` when present, else 2.
    """
    if not 0 < s <= t:
        raise PreconditionError("need 0 < s <= t")
    n = getattr(profile, "ndim", 2)
    lhs = profile.mu_at(s)
    rhs = (s / t) ** n * profile.mu_at(t)
    slack = lhs - rhs
    return bool(slack >= -tol * max(rhs, 1.0)), float(slack)


def mean_value_level(profile: LevelProfile, a: float, b: float) -> float:
    """Level s* in [a, b] where nu(s*) equals its average over [a, b].

    Bisection on the continuous interpolant; a flat profile ties to the
    midpoint.
    """
    if not (profile.levels[0] <= a < b <= profile.levels[-1]):
        raise PreconditionError("interval outside the profile range")
    avg = profile.integrate_nu(a, b) / (b - a)
    grid = np.linspace(a, b, 600)
    g = np.interp(grid, profile.levels, profile.nu) - avg
    if np.max(np.abs(g)) <= 1e-12 * max(abs(avg), 1.0):
        return 0.5 * (a + b)
    sign = np.sign(g)
    nz = sign != 0
    idx = np.nonzero(np.diff(sign[nz]) != 0)[0]
    if idx.size == 0:
        # numerical ties: pick the closest point to the average
        return float(grid[int(np.argmin(np.abs(g)))])
    pts = np.nonzero(nz)[0]
    lo, hi = grid[pts[idx[0]]], grid[pts[idx[0] + 1]]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        gm = np.interp(mid, profile.levels, profile.nu) - avg
        gl = np.interp(lo, profile.levels, profile.nu) - avg
        if gl * gm <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# normal mapping


def _field_gradient_cloud(f: ScalarField):
    """Gradients at inside nodes plus second-order extrapolations at cuts."""
    st = f.mask.stencils()
    G = f.gradient_stack()
    H = f.hessian_stack()
    pts = [G]
    if st.cut_node.size:
        ext = G[st.cut_node] + (
            st.cut_theta[:, None]
            * f.grid.h
            * st.cut_dir[:, None]
            * H[st.cut_node, :, st.cut_axis]
        )
        pts.append(ext)
    return np.vstack(pts)


def normal_map_area(f: ScalarField) -> float:
    """Quadrature of det D2u over the mask with cut-cell weights."""
    st = f.mask.stencils()
    H = f.hessian_stack()
    lam = np.linalg.eigvalsh(H)
    if np.min(lam[st.is_full]) <= 0:
        raise AdmissibilityError("field is not strictly convex on the mask")
    det = np.prod(lam, axis=1)
    return float(np.sum(det * st.weights))


def forward_image_area(f: ScalarField) -> float:
    """Volume of the convex hull of the discrete gradient image."""
    st = f.mask.stencils()
    H = f.hessian_stack()
    lam = np.linalg.eigvalsh(H)
    if np.min(lam[st.is_full]) <= 0:
        raise AdmissibilityError("field is not strictly convex on the mask")
    cloud = _field_gradient_cloud(f)
    return float(ConvexHull(cloud).volume)
