"""Damped-Newton Dirichlet solver for S_k(D2u) = rhs and quotient
S_k/S_l (D2u) = rhs on masked convex domains.

The discrete system couples three row families: the equation at nodes with
complete second-difference stencils, the equation with one-sided mixed
stencils at nodes that only miss diagonal corners, and a linear boundary
interpolation row at nodes owning a cut arm. The last family is the
second-order Dirichlet transfer; the equation rows are exact on
quadratics, so constant-Hessian solutions are reproduced up to the
boundary interpolation error.

Quotient problems iterate on log S_k - log S_l (concave, better
conditioned); the line search keeps every enforced node's discrete
Hessian inside the admissibility cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry
from .candidates import candidate_from_spec
from .errors import NumericError, PreconditionError, SafeguardError
from .fields import (
    DomainMask,
    ScalarField,
    grid_for_candidate,
    mask_from_ellipse,
    mask_from_polygon,
    sample_candidate,
)
from .symm import (
    SymmetricMatrix,
    esym_table,
    radius_bound_coeff,
    spectral_gradient,
)

_LOG_FLOOR = 1e-300


@dataclass
class DirichletProblem:
    """S_k/S_l (D2u) = rhs inside the mask, u = boundary_value on the cuts."""

    mask: DomainMask
    k: int
    l: int = 0
    boundary_value: float = 1.0
    rhs: float = 1.0
    anchor: tuple | None = None

    def __post_init__(self):
        n = self.mask.n
        if not (0 <= self.l < self.k <= n):
            raise PreconditionError(
                f"need 0 <= l < k <= n, got k={self.k}, l={self.l}, n={n}"
            )
        if self.rhs <= 0:
            raise PreconditionError("right-hand side must be positive")
        if self.anchor is None:
            self.anchor = self.mask.node_nearest(np.zeros(n))
        if self.mask.unknown[tuple(self.anchor)] < 0:
            raise PreconditionError("anchor node must be strictly interior")


@dataclass
class SolveOptions:
    tol: float = 1e-9
    max_iters: int = 100
    max_halvings: int = 30
    min_resolution: int = 33
    fd_jacobian: bool = False
    verbose: bool = False


@dataclass
class SolveReport:
    field: ScalarField
    residual_max: float
    newton_iters: int
    admissibility_margin: float
    converged: bool
    residual_history: list
    problem: DirichletProblem
    u_min: float = math.nan
    collar_margin: float = math.nan

    def to_json_dict(self) -> dict:
        return {
            "converged": self.converged,
            "newton_iters": self.newton_iters,
            "residual_max": self.residual_max,
            "admissibility_margin": self.admissibility_margin,
            "collar_margin": self.collar_margin,
            "u_min": self.u_min,
            "residual_history": list(map(float, self.residual_history)),
            "k": self.problem.k,
            "l": self.problem.l,
            "n": self.problem.mask.n,
            "boundary_value": self.problem.boundary_value,
            "rhs": self.problem.rhs,
            "h": self.problem.mask.grid.h,
            "inside_nodes": int(self.problem.mask.inside_count()),
        }


# ---------------------------------------------------------------------------
# barriers


@dataclass
class EllipsoidBarrier:
    """Quadratic with constant Hessian diag(1/mu_i^2)/N in the ellipsoid
    frame, normalized so the operator value is exactly the target."""

    center: np.ndarray
    mu: np.ndarray
    R: float
    sign: str                      # "upper" | "lower" (usage tag)
    k: int
    l: int = 0
    rhs: float = 1.0
    boundary_value: float = 1.0
    axes: np.ndarray = None        # orthonormal frame columns; identity default

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        n = self.mu.size
        if np.any(self.mu <= 0) or self.R <= 0:
            raise PreconditionError("barrier needs positive axes and radius")
        if self.sign not in ("upper", "lower"):
            raise PreconditionError("sign must be 'upper' or 'lower'")
        if self.axes is None:
            self.axes = np.eye(n)
        nu = 1.0 / self.mu**2
        T = esym_table(nu)
        ratio = T[self.k] / (T[self.l] if self.l else 1.0)
        self.norm = (ratio / self.rhs) ** (1.0 / (self.k - self.l))
        H = self.axes @ np.diag(nu / self.norm) @ self.axes.T
        self.hessian = SymmetricMatrix.from_array(H)
        Th = esym_table(np.linalg.eigvalsh(self.hessian.array))
        achieved = Th[self.k] / (Th[self.l] if self.l else 1.0)
        if abs(achieved - self.rhs) > 1e-10 * self.rhs:
            raise NumericError("barrier normalization failed to hit the target")

    def quadratic_form(self, X) -> np.ndarray:
        Y = (np.atleast_2d(X) - self.center) @ self.axes
        return np.sum((Y / self.mu) ** 2, axis=1)

    def evaluate(self, X) -> np.ndarray:
        q = self.quadratic_form(X)
        return (q - self.R**2) / (2.0 * self.norm) + self.boundary_value

    def center_value(self) -> float:
        return float(self.boundary_value - self.R**2 / (2.0 * self.norm))


def barrier(center, mu, R, sign, k, l=0, rhs=1.0, boundary_value=1.0, axes=None):
    return EllipsoidBarrier(
        center=center, mu=mu, R=R, sign=sign, k=k, l=l, rhs=rhs,
        boundary_value=boundary_value, axes=axes,
    )


def evaluate_barrier(b: EllipsoidBarrier, x) -> float:
    return float(b.evaluate(np.atleast_2d(np.asarray(x, dtype=float)))[0])


# ---------------------------------------------------------------------------
# the Newton solve


def _john_of_mask(mask: DomainMask):
    """Center, frame, semi-axes and radius of the enclosing ellipsoid of the
    mask's cut cloud."""
    pts = mask.stencils().cut_points
    E, c = geometry.mvee(pts, tol=1e-6)
    w, Q = np.linalg.eigh(E)
    semi = 1.0 / np.sqrt(w)
    R = float(np.prod(semi) ** (1.0 / mask.n))
    mu = semi / R  # det-1 ellipsoid shape: semi-axes mu_i * R
    return c, Q, mu, R


def solve(problem: DirichletProblem, opts: SolveOptions | None = None) -> SolveReport:
    opts = opts or SolveOptions()
    mask = problem.mask
    st = mask.stencils()
    n, k, l = mask.n, problem.k, problem.l
    if int(mask.extents().max()) < opts.min_resolution:
        raise PreconditionError(
            f"domain spans fewer than {opts.min_resolution} nodes across"
        )

    eq_rows = ~st.is_closure                      # equation rows
    full_rows = st.is_full
    enforce = st.is_full                          # admissibility enforcement set
    n_in = st.n_in
    log_form = l > 0
    target = math.log(problem.rhs) if log_form else problem.rhs

    hess_keys = sorted(st.hess.keys())
    sym_factor = {key: (1.0 if key[0] == key[1] else 2.0) for key in hess_keys}

    def hessians(u):
        H = np.empty((n_in, n, n))
        for (p, q), (A, c) in st.hess.items():
            col = A @ u + c
            H[:, p, q] = col
            H[:, q, p] = col
        return H

    def residual(u):
        H = hessians(u)
        lam = np.linalg.eigvalsh(H)
        T = esym_table(lam)
        if log_form:
            G = np.log(np.maximum(T[:, k], _LOG_FLOOR)) - np.log(
                np.maximum(T[:, l], _LOG_FLOOR)
            )
        else:
            G = T[:, k]
        F_eq = (G - target)[eq_rows]
        F_cl = st.closure_matrix @ u - st.closure_rhs
        return np.concatenate([F_eq, F_cl]), lam

    def jacobian(u):
        H = hessians(u)
        lam, Q = np.linalg.eigh(H)
        g = spectral_gradient(lam, k, l, log_form=log_form)
        W = np.einsum("nij,nj,nkj->nik", Q, g, Q)
        rows = None
        for key in hess_keys:
            p, q = key
            A, _ = st.hess[key]
            term = sp.diags(sym_factor[key] * W[:, p, q]) @ A
            rows = term if rows is None else rows + term
        J_eq = rows.tocsr()[eq_rows]
        return sp.vstack([J_eq, st.closure_matrix]).tocsr()

    def admissible(lam, where):
        T = esym_table(lam[where])
        if T.shape[0] == 0:
            return True, math.inf
        margin = float(np.min(T[:, 1 : k + 1]))
        return margin > 0.0, margin

    # initial iterate: the linear trace problem with the same boundary rows
    # (exactly consistent with the Dirichlet data, admissible on convex
    # domains in practice); the ellipsoid barrier is the admissible fallback
    c0, Q0, mu0, R0 = _john_of_mask(mask)
    b0 = EllipsoidBarrier(
        center=c0, mu=mu0, R=R0, sign="upper", k=k, l=l, rhs=problem.rhs,
        boundary_value=problem.boundary_value, axes=Q0,
    )
    u_bar = b0.evaluate(mask.inside_coords())
    u = u_bar
    if k > 1:
        u_lin = _trace_start(st, float(np.trace(b0.hessian.array)))
        if u_lin is not None:
            # smallest barrier blend that clears the admissibility cone keeps
            # the boundary mismatch (and with it the damping) minimal
            for w in (0.0, 0.1, 0.25, 0.5, 0.75):
                u_try = (1.0 - w) * u_lin + w * u_bar
                lam0 = np.linalg.eigvalsh(st.hessian_stack(u_try))
                ok0, _ = admissible(lam0, enforce)
                if ok0:
                    u = u_try
                    break

    F, lam = residual(u)
    history = [float(np.max(np.abs(F)))]
    converged = False
    iters = 0
    for iters in range(1, opts.max_iters + 1):
        if history[-1] <= opts.tol:
            converged = True
            iters -= 1
            break
        J = jacobian(u)
        if opts.fd_jacobian:
            J = _fd_jacobian(residual, u)
        try:
            delta = spla.spsolve(J.tocsc(), -F)
        except RuntimeError as exc:
            raise NumericError(f"linear solve failed: {exc}") from exc
        base = float(np.linalg.norm(F))
        s = 1.0
        accepted = False
        saw_admissible = False
        for _ in range(opts.max_halvings + 1):
            u_try = u + s * delta
            F_try, lam_try = residual(u_try)
            ok, _ = admissible(lam_try, enforce)
            if ok:
                saw_admissible = True
                if float(np.linalg.norm(F_try)) <= (1.0 - 1e-4 * s) * base:
                    u, F, lam = u_try, F_try, lam_try
                    accepted = True
                    break
            s *= 0.5
        if not accepted:
            history.append(float(np.max(np.abs(F))))
            report = _make_report(problem, st, u, F, lam, history, iters, False)
            if not saw_admissible:
                raise SafeguardError(
                    "no admissible damped step from this iterate", report=report
                )
            return report
        history.append(float(np.max(np.abs(F))))
        if opts.verbose:
            print(f"iter {iters}: residual {history[-1]:.3e}")
        # damping collapse: heavily damped steps that barely move the
        # residual will not recover; report honestly instead of burning
        # the iteration cap
        if len(history) > 8 and history[-1] > 0.98 * history[-9] and history[-1] > opts.tol:
            return _make_report(problem, st, u, F, lam, history, iters, False)
    else:
        iters = opts.max_iters
        converged = history[-1] <= opts.tol

    return _make_report(problem, st, u, F, lam, history, iters, converged)


def _trace_start(st, alpha):
    """Solve the linear problem trace(D2u) = alpha with the closure rows."""
    eq_rows = ~st.is_closure
    n = max(p for p, _ in st.hess) + 1
    A = None
    const = None
    for d in range(n):
        S, c = st.hess[(d, d)]
        A = S if A is None else A + S
        const = c if const is None else const + c
    Aeq = A.tocsr()[eq_rows]
    rhs_eq = alpha - const[eq_rows]
    M = sp.vstack([Aeq, st.closure_matrix]).tocsc()
    b = np.concatenate([rhs_eq, st.closure_rhs])
    try:
        return spla.spsolve(M, b)
    except RuntimeError:
        return None


def _fd_jacobian(residual, u, step=1e-7):
    cols = []
    F0, _ = residual(u)
    for j in range(u.size):
        du = u.copy()
        du[j] += step
        Fj, _ = residual(du)
        cols.append((Fj - F0) / step)
    return sp.csr_matrix(np.stack(cols, axis=1))


def _make_report(problem, st, u, F, lam, history, iters, converged):
    mask = problem.mask
    k = problem.k
    eq_rows = ~st.is_closure
    n_eq_full = int(np.sum(st.is_full))
    # residual over complete-stencil equation rows
    F_eq = F[: int(np.sum(eq_rows))]
    full_in_eq = st.is_full[eq_rows]
    res_full = float(np.max(np.abs(F_eq[full_in_eq]))) if n_eq_full else math.nan
    T_full = esym_table(lam[st.is_full]) if n_eq_full else np.zeros((0, mask.n + 1))
    margin = float(np.min(T_full[:, 1 : k + 1])) if n_eq_full else math.nan
    others = ~st.is_full
    T_oth = esym_table(lam[others]) if others.any() else None
    collar_margin = float(np.min(T_oth[:, 1 : k + 1])) if T_oth is not None else math.nan
    full = np.zeros(mask.grid.dims)
    full[tuple(mask.inside_idx.T)] = u
    fld = ScalarField(
        mask=mask, values=full, level=problem.boundary_value, anchor=problem.anchor
    )
    return SolveReport(
        field=fld,
        residual_max=res_full,
        newton_iters=iters,
        admissibility_margin=margin,
        converged=bool(converged and margin > 0),
        residual_history=history,
        problem=problem,
        u_min=float(np.min(u)),
        collar_margin=collar_margin,
    )


# ---------------------------------------------------------------------------
# comparison checks


def comparison_check(report: SolveReport, b: EllipsoidBarrier) -> dict:
    """Maximum-principle violation of the solved field against a barrier.

    Upper barriers are compared on the nodes inside their own ellipsoid
    (where the barrier boundary data dominates the solution's); lower
    barriers everywhere. Also evaluates the scalar radius sandwich implied
    by evaluating each barrier at its center against the solution minimum:
    R_in^2 <= 2 N (bv - u_min) <= R_out^2 with N the barrier normalizer.
    """
    f = report.field
    X = f.mask.inside_coords()
    u = f.inside_values()
    v = b.evaluate(X)
    q = b.quadratic_form(X)
    if b.sign == "upper":
        inside = q <= b.R**2 * (1.0 + 1e-12)
        viol = np.maximum(u[inside] - v[inside], 0.0)
    else:
        viol = np.maximum(v - u, 0.0)
    max_violation = float(viol.max()) if viol.size else 0.0
    drop = b.boundary_value - report.u_min
    if b.sign == "upper":
        scalar_slack = 2.0 * b.norm * drop - b.R**2
    else:
        scalar_slack = b.R**2 - 2.0 * b.norm * drop
    return {
        "sign": b.sign,
        "max_violation": max_violation,
        "scalar_slack": float(scalar_slack),
        "normalizer": float(b.norm),
        "R": float(b.R),
    }


def barrier_pair_for_report(report: SolveReport):
    """Inscribed and circumscribed ellipsoid barriers fitted to the domain.

    Both share the enclosing-ellipsoid shape; the inner copy is the largest
    concentric scaling certified inside the domain via the cut cloud.
    """
    mask = report.problem.mask
    c, Q, mu, R = _john_of_mask(mask)
    pts = mask.stencils().cut_points
    Y = (pts - c) @ Q
    qvals = np.sqrt(np.sum((Y / (mu * R)) ** 2, axis=1))
    scale_in = float(np.min(qvals))
    scale_out = float(np.max(qvals))
    p = report.problem
    common = dict(center=c, mu=mu, k=p.k, l=p.l, rhs=p.rhs,
                  boundary_value=p.boundary_value, axes=Q)
    upper = EllipsoidBarrier(R=R * scale_in, sign="upper", **common)
    lower = EllipsoidBarrier(R=R * scale_out, sign="lower", **common)
    return upper, lower


def radius_estimate_check(report: SolveReport, fit, k: int | None = None) -> dict:
    """Observed roundness radius against the universal bound coeff * gamma.

    Valid for solved problems with unit boundary data and the anchored
    normalization; the bound is evaluated both for the raw fitted radius
    and for the sharp value after renormalizing the solution minimum to
    zero (the scale-invariant form).
    """
    p = report.problem
    k = k if k is not None else p.k
    if abs(p.boundary_value - 1.0) > 1e-12:
        raise PreconditionError("radius estimate assumes unit boundary data")
    coeff = radius_bound_coeff(p.mask.n, k)
    bound = coeff * fit.gamma
    drop = 1.0 - max(report.u_min, 0.0)
    r_norm = fit.R / math.sqrt(max(drop, 1e-300))
    slack_grid = 4.0 * p.mask.grid.h
    return {
        "R_observed": float(fit.R),
        "R_normalized": float(r_norm),
        "bound": float(bound),
        "coeff": float(coeff),
        "gamma": float(fit.gamma),
        "passed": bool(fit.R <= bound * (1.0 + slack_grid)),
        "passed_normalized": bool(r_norm <= bound * (1.0 + slack_grid)),
    }


def _normalized_quantities(report: SolveReport):
    """Scale factors mapping the solved instance to an anchored unit one.

    Shifting by the minimum and rescaling x by sqrt(drop) yields a solution
    with the same Hessian field, minimum zero and unit boundary level; all
    geometric quantities transform by powers of sqrt(drop)."""
    drop = report.problem.boundary_value - report.u_min
    if drop <= 0:
        raise PreconditionError("solution has no interior drop below the boundary")
    return math.sqrt(drop)


def normal_mapping_checks(report: SolveReport, fit=None, calib=None) -> dict:
    """Signed slacks of the normal-mapping volume bounds and the interior
    gradient bound on the normalized instance."""
    from .calibration import get_constants

    calib = calib or get_constants()
    f = report.field
    n = f.mask.n
    st = f.mask.stencils()
    if fit is None:
        fit = geometry.ball_fit(geometry.body_from_mask(f.mask))
    s = _normalized_quantities(report)       # sqrt of the value drop
    gamma = fit.gamma
    Rn = fit.R / s                           # normalized roundness radius
    omega_n = math.pi if n == 2 else 4.0 * math.pi / 3.0

    H = f.hessian_stack()
    det = np.prod(np.linalg.eigvalsh(H), axis=1)
    total_det = float(np.sum(det * st.weights)) / s**n   # normalized integral

    # enclosing bound: R^-n <= gamma^n / omega_n * integral(det)
    lhs1 = Rn ** (-n)
    rhs1 = gamma**n / omega_n * total_det
    # inscribed bound: R^-n >= gamma^-n / (2^n omega_n) * integral over the
    # concentric ball of radius R / (2 gamma)
    X = f.mask.inside_coords()
    rad = np.linalg.norm(X - fit.center, axis=1) / s
    in_ball = rad <= Rn / (2.0 * gamma)
    det_ball = float(np.sum(det[in_ball] * st.weights[in_ball])) / s**n
    rhs2 = det_ball / (2.0**n * omega_n * gamma**n)

    # interior gradient bound on the half-level set, constants calibrated
    u = f.inside_values()
    drop = report.problem.boundary_value - report.u_min
    unorm = (u - report.u_min) / drop
    G = np.linalg.norm(f.gradient_stack(), axis=1) / s   # normalized |Du|
    half = unorm < 0.5
    sup_grad = float(np.max(G[half])) if half.any() else 0.0
    c_n3 = calib["gradient_bound_C"][str(n)]
    rhs3 = c_n3 * (gamma * Rn / 0.5) ** (n - 1) * total_det

    return {
        "enclosing_slack": float(rhs1 - lhs1),
        "inscribed_slack": float(lhs1 - rhs2),
        "gradient_slack": float(rhs3 - sup_grad),
        "sup_grad_half": sup_grad,
        "det_integral": total_det,
        "gamma": float(gamma),
        "R_normalized": float(Rn),
    }


def pogorelov_diagnostic(report: SolveReport) -> float:
    """max over interior nodes of (u - boundary)^4 * ||D2u||_op."""
    f = report.field
    H = f.hessian_stack()
    opnorm = np.max(np.abs(np.linalg.eigvalsh(H)), axis=1)
    u = f.inside_values()
    return float(np.max((u - report.problem.boundary_value) ** 4 * opnorm))


# ---------------------------------------------------------------------------
# problem specs (JSON wire format)

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["n", "k", "l", "domain", "h"],
    "properties": {
        "n": {"type": "integer", "enum": [2, 3]},
        "k": {"type": "integer", "minimum": 1},
        "l": {"type": "integer", "minimum": 0},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "boundary_value": {"type": "number"},
        "rhs": {"type": "number", "exclusiveMinimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iters": {"type": "integer", "minimum": 1},
        "min_resolution": {"type": "integer", "minimum": 5},
        "domain": {
            "type": "object",
            "required": ["type", "params"],
            "properties": {
                "type": {"type": "string", "enum": ["ellipse", "polygon", "candidate_level"]},
                "params": {},
            },
        },
    },
}


def problem_from_spec(spec: dict) -> tuple:
    """Build (DirichletProblem, SolveOptions) from the JSON wire format."""
    import jsonschema

    jsonschema.validate(spec, PROBLEM_SCHEMA)
    n, k, l, h = spec["n"], spec["k"], spec["l"], spec["h"]
    if not (0 <= l < k <= n):
        raise PreconditionError(f"need 0 <= l < k <= n, got k={k}, l={l}")
    dom = spec["domain"]
    if dom["type"] == "ellipse":
        semi = dom["params"]["semiaxes"]
        if len(semi) != n:
            raise PreconditionError("semiaxes length must equal n")
        mask = mask_from_ellipse(semi, h, center=dom["params"].get("center"))
    elif dom["type"] == "polygon":
        mask = mask_from_polygon(dom["params"]["vertices"], h)
    else:
        cand = candidate_from_spec(dom["params"]["candidate"])
        level = float(dom["params"].get("level", 1.0))
        grid = grid_for_candidate(cand, level, h)
        mask = sample_candidate(cand, grid, level).mask
    problem = DirichletProblem(
        mask=mask, k=k, l=l,
        boundary_value=float(spec.get("boundary_value", 1.0)),
        rhs=float(spec.get("rhs", 1.0)),
    )
    opts = SolveOptions(
        tol=float(spec.get("tol", 1e-9)),
        max_iters=int(spec.get("max_iters", 100)),
        min_resolution=int(spec.get("min_resolution", 33)),
    )
    return problem, opts
