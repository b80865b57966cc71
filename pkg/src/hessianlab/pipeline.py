"""End-to-end verification experiments over the candidate corpus.

Three drivers: `analyze` evaluates all growth conditions, roundness
samples and the quadraticity score for one candidate; `iso_to_roundness_chain`
walks the inequality chain from a level-wise gradient-integral bound to a
certified roundness of an intermediate sub-level set; and
`volume_to_roundness_experiment` solves the Dirichlet problem on a domain
family and checks the barrier comparisons plus the volume-to-roundness
bound. Every chain link carries a stable check id, its two sides and the
signed slack, and reports embed the calibration hash for reproducibility.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import functionals, geometry, solver
from .calibration import (
    calibration_hash,
    get_constants,
    level_perimeter_bound,
    profile_integral_bound,
)
from .candidates import AnalyticCandidate
from .errors import HessianLabError, PreconditionError
from .fields import ScalarField
from .functionals import Condition
from .polar import directions_2d

REPORT_SCHEMA_VERSION = 1


@dataclass
class AnalyzeConfig:
    t_min: float = 1e2
    t_max: float = 1e6
    t_points: int = 13
    p_list: tuple = (-0.5, 1.0, 2.0)
    m_dirs: int = 360
    eps_slope: float = functionals.EPS_SLOPE
    gamma_points: int = 9

    def t_grid(self):
        return np.geomspace(self.t_min, self.t_max, self.t_points)


@dataclass
class ConditionReport:
    candidate: str
    verdicts: dict                    # key -> GrowthVerdict
    gamma_samples: list               # (t, gamma)
    john_aspect_samples: list         # (t, sqrt(mu_n/mu_1))
    gamma_slope: float
    quadratic_score: float
    third_order_score: float
    agreement: bool
    errors: dict
    calibration: str

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "candidate": self.candidate,
            "verdicts": {k: v.to_json_dict() for k, v in self.verdicts.items()},
            "gamma_samples": [[float(a), float(b)] for a, b in self.gamma_samples],
            "john_aspect_samples": [
                [float(a), float(b)] for a, b in self.john_aspect_samples
            ],
            "gamma_slope": self.gamma_slope,
            "quadratic_score": self.quadratic_score,
            "third_order_score": self.third_order_score,
            "agreement": self.agreement,
            "errors": self.errors,
            "calibration": self.calibration,
        }


@dataclass
class ChainLink:
    check_id: str
    lhs: float
    rhs: float
    passed: bool
    params: dict = dc_field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def to_json_dict(self) -> dict:
        return {
            "check_id": self.check_id,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "passed": self.passed,
            "params": self.params,
        }


@dataclass
class ChainReport:
    label: str
    links: list
    meta: dict

    def all_passed(self) -> bool:
        return all(link.passed for link in self.links)

    def link(self, check_id: str) -> ChainLink:
        for ln in self.links:
            if ln.check_id == check_id:
                return ln
        raise KeyError(check_id)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "label": self.label,
            "links": [ln.to_json_dict() for ln in self.links],
            "meta": self.meta,
            "all_passed": self.all_passed(),
        }


# ---------------------------------------------------------------------------
# per-candidate analysis


def quadratic_test(source, probe_level: float = 1.0) -> tuple:
    """(hessian variation score, third-derivative contraction score).

    Both vanish exactly when the function is a quadratic: the first is the
    largest normalized Hessian difference over probe pairs, the second the
    largest entry of (D2u)^-1 contracted with the third-derivative tensor.
    """
    if isinstance(source, AnalyticCandidate):
        pts = _probe_points(source, probe_level)
        H = source.hess(pts)
        scale = 1e-4 * max(float(np.max(np.linalg.norm(pts, axis=1))), 1.0)
        T3 = _third_order_fd(source, pts, scale)
    elif isinstance(source, ScalarField):
        st = source.mask.stencils()
        H_all = source.hessian_stack()
        pick = _interior_probe_rows(source.mask, st)
        if pick.size > 400:
            pick = pick[:: max(1, pick.size // 400)]
        H = H_all[pick]
        T3 = _third_order_field(source, pick, H_all)
    else:
        raise PreconditionError("source must be a candidate or a sampled field")
    nrm = np.linalg.norm(H, axis=(1, 2))
    diff = 0.0
    sub = H[:: max(1, H.shape[0] // 120)]
    subn = np.linalg.norm(sub, axis=(1, 2))
    for i in range(sub.shape[0]):
        d = np.linalg.norm(sub - sub[i], axis=(1, 2)) / (1.0 + subn[i])
        diff = max(diff, float(np.max(d)))
    return diff, T3


def _interior_probe_rows(mask, st) -> np.ndarray:
    """Complete-stencil nodes away from the boundary layer.

    The boundary interpolation closure leaves grid-scale noise whose
    amplitude decays per layer, so probes erode inward proportionally to
    the domain's node extent."""
    import scipy.ndimage

    full_grid = np.zeros(mask.grid.dims, dtype=bool)
    full_grid[tuple(mask.inside_idx[st.is_full].T)] = True
    depth = max(4, int(np.min(mask.extents())) // 5)
    while depth > 0:
        eroded = scipy.ndimage.binary_erosion(full_grid, iterations=depth)
        rows = np.nonzero(eroded[tuple(mask.inside_idx.T)])[0]
        if rows.size >= 16:
            return rows
        depth //= 2
    return np.nonzero(st.is_full)[0]


def _probe_points(cand, level) -> np.ndarray:
    from .polar import radial_crossings, sphere_mesh

    dirs = directions_2d(16) if cand.n == 2 else sphere_mesh(1)[0]
    rho = radial_crossings(cand, level, dirs)
    radii = np.array([0.25, 0.5, 0.75, 0.9])
    pts = (
        cand.anchor[None, None, :]
        + (rho[:, None] * radii[None, :])[..., None] * dirs[:, None, :]
    )
    return pts.reshape(-1, cand.n)


def _third_order_fd(cand, pts, step) -> float:
    """Largest entry of inv(D2u) contracted with the spatial derivative of
    inv(D2u); identically zero exactly for quadratics. Probes with a
    near-singular Hessian are skipped (degenerate directions carry no
    usable contraction)."""
    H0 = cand.hess(pts)
    w = np.linalg.eigvalsh(H0)
    keep = w[:, 0] > 1e-8 * np.maximum(w[:, -1], 1e-30)
    if not keep.any():
        return math.nan
    pts = pts[keep]
    H0 = H0[keep]
    inv = np.linalg.inv(H0)
    n = cand.n
    T = np.zeros((pts.shape[0], n, n, n))
    for l in range(n):
        e = np.zeros(n)
        e[l] = step
        dH = (cand.hess(pts + e) - cand.hess(pts - e)) / (2.0 * step)
        dinv = -inv @ dH @ inv
        T += inv[:, :, l, None, None] * dinv[:, None, :, :]
    return float(np.max(np.abs(T)))


def _third_order_field(f, pick, H_all) -> float:
    mask = f.mask
    h = f.grid.h
    unknown = mask.unknown
    idxs = mask.inside_idx
    worst = 0.0
    n = mask.n
    count = 0
    for r in pick:
        idx = idxs[r]
        H0 = H_all[r]
        try:
            inv = np.linalg.inv(H0)
        except np.linalg.LinAlgError:
            continue
        ok = True
        T = np.zeros((n, n, n))
        for l in range(n):
            e = np.zeros(n, dtype=int)
            e[l] = 1
            rp = unknown[tuple(idx + e)]
            rm = unknown[tuple(idx - e)]
            if rp < 0 or rm < 0:
                ok = False
                break
            dH = (H_all[rp] - H_all[rm]) / (2.0 * h)
            dinv = -inv @ dH @ inv
            T += inv[:, l, None, None] * dinv[None, :, :]
        if not ok:
            continue
        worst = max(worst, float(np.max(np.abs(T))))
        count += 1
    return worst if count else math.nan


def analyze(cand: AnalyticCandidate, config: AnalyzeConfig | None = None) -> ConditionReport:
    config = config or AnalyzeConfig()
    t_grid = config.t_grid()
    verdicts = {}
    errors = {}
    for cond in (Condition.REVERSE_ISO, Condition.VOLUME_GROWTH):
        try:
            verdicts[cond.value] = functionals.condition_sweep(
                cand, cond, t_grid, m_dirs=config.m_dirs, eps_slope=config.eps_slope
            )
        except HessianLabError as exc:
            errors[cond.value] = str(exc)
    for p in config.p_list:
        key = f"lp:{p:g}"
        try:
            verdicts[key] = functionals.condition_sweep(
                cand, Condition.LP_INTEGRABILITY, t_grid, p=p,
                m_dirs=config.m_dirs, eps_slope=config.eps_slope,
            )
        except HessianLabError as exc:
            errors[key] = str(exc)

    gamma_samples, aspect_samples = [], []
    try:
        for t in np.geomspace(config.t_min, config.t_max, config.gamma_points):
            body = geometry.extract_body(cand, float(t), m_dirs=config.m_dirs)
            gamma_samples.append((float(t), geometry.ball_fit(body).gamma))
            aspect_samples.append((float(t), geometry.john_fit(body).aspect()))
    except HessianLabError as exc:
        errors["roundness"] = str(exc)
    if len(gamma_samples) >= 3:
        ts = np.log([a for a, _ in gamma_samples])
        gs = np.log([b for _, b in gamma_samples])
        gamma_slope = functionals._ols_slope(ts, gs)[0]
    else:
        gamma_slope = math.nan

    try:
        qscore, tscore = quadratic_test(cand)
    except HessianLabError as exc:
        errors["quadratic_test"] = str(exc)
        qscore = tscore = math.nan

    decided = [v.verdict for v in verdicts.values()]
    agreement = len(set(decided)) == 1 if decided else False
    return ConditionReport(
        candidate=cand.name,
        verdicts=verdicts,
        gamma_samples=gamma_samples,
        john_aspect_samples=aspect_samples,
        gamma_slope=float(gamma_slope),
        quadratic_score=float(qscore),
        third_order_score=float(tscore),
        agreement=agreement,
        errors=errors,
        calibration=calibration_hash(),
    )


# ---------------------------------------------------------------------------
# chain: level-wise gradient-integral bound to roundness


def iso_to_roundness_chain(
    cand: AnalyticCandidate,
    t: float,
    gamma_claim: float,
    interval: tuple = (1.0 / 3.0, 0.5),
    m_dirs: int = 360,
    n_levels: int = 30,
    calib: dict | None = None,
) -> ChainReport:
    """Walk the chain: premise at level t, first normalization, profile
    bound, mean-value level, perimeter bound there, enclosing-ellipsoid
    aspect bound, and the roundness of the intermediate sub-level set."""
    calib = calib or get_constants()
    n = cand.n
    a, b = interval
    if not 0 < a < b <= 1:
        raise PreconditionError("interval must satisfy 0 < a < b <= 1")
    links = []

    # normalize first: the premise is invariant, and the body aspect sets
    # the angular resolution every quadrature below needs (polygonal errors
    # grow with the square of the aspect)
    norm = functionals.pogorelov_normalize(cand, t)
    m_eff = _adaptive_dirs(norm, m_dirs)
    sample = functionals.iso_ratio(norm, 1.0, m_dirs=m_eff)
    links.append(
        ChainLink(
            "premise-gradient-integral-bound",
            lhs=sample.numerator,
            rhs=gamma_claim * sample.denominator,
            passed=sample.numerator <= gamma_claim * sample.denominator,
            params={"t": t, "gamma": gamma_claim},
        )
    )
    if not links[-1].passed:
        return ChainReport(
            label=cand.name, links=links,
            meta=_chain_meta(t, gamma_claim, interval, violated="premise"),
        )

    levels = np.linspace(0.0, 1.0, n_levels + 1)[1:] ** 2
    profile = geometry.level_profile(norm, levels, m_dirs=m_eff)

    # profile form of the premise: integral of nu against the weighted
    # volume integral, with the exact dimensional factor
    lhs_p = np.trapezoid(profile.nu, profile.levels) + profile.nu[0] * profile.levels[0] * (2.0 / 3.0)
    wint = np.trapezoid((1.0 - profile.levels) ** (1.0 / (n - 1.0)) * profile.mu, profile.levels)
    rhs_p = profile_integral_bound(n) * gamma_claim * wint ** ((n - 1.0) / n)
    links.append(
        ChainLink(
            "profile-integral-bound",
            lhs=float(lhs_p), rhs=float(rhs_p),
            passed=bool(lhs_p <= rhs_p * (1.0 + 1e-3)),
        )
    )

    s_star = geometry.mean_value_level(profile, a, b)
    resid = abs(
        profile.nu_at(s_star) * (b - a) - profile.integrate_nu(a, b)
    ) / max(profile.integrate_nu(a, b), 1e-300)
    links.append(
        ChainLink(
            "mean-value-level",
            lhs=resid, rhs=1e-6,
            passed=bool(a <= s_star <= b and resid <= 1e-6),
            params={"s_star": s_star, "a": a, "b": b},
        )
    )

    C_peri = level_perimeter_bound(n, a, b)
    lhs_nu = profile.nu_at(s_star)
    rhs_nu = C_peri * gamma_claim * profile.mu_at(s_star) ** ((n - 1.0) / n)
    links.append(
        ChainLink(
            "level-perimeter-bound",
            lhs=float(lhs_nu), rhs=float(rhs_nu),
            passed=bool(lhs_nu <= rhs_nu * (1.0 + 1e-3)),
        )
    )

    body = geometry.extract_body(norm, s_star, m_dirs=m_eff)
    ell = geometry.john_fit(body)
    C_asp = calib["john_aspect_bound_C"][str(n)]
    lhs_mu = float(ell.mu[-1])
    rhs_mu = C_asp * gamma_claim**n * float(ell.mu[0])
    links.append(
        ChainLink(
            "ellipsoid-aspect-bound",
            lhs=lhs_mu, rhs=rhs_mu,
            passed=bool(lhs_mu <= rhs_mu),
            params={"aspect": ell.aspect()},
        )
    )

    fit = geometry.ball_fit(body)
    Cp = calib["ball_ratio_bound_Cp"][str(n)]
    rhs_g = Cp * gamma_claim ** (n / 2.0)
    links.append(
        ChainLink(
            "roundness-bound",
            lhs=float(fit.gamma), rhs=float(rhs_g),
            passed=bool(fit.gamma <= rhs_g),
            params={"s_star": s_star},
        )
    )
    return ChainReport(
        label=cand.name, links=links, meta=_chain_meta(t, gamma_claim, interval)
    )


def _adaptive_dirs(norm_cand, m_dirs: int) -> int:
    fit = geometry.ball_fit(geometry.extract_body(norm_cand, 1.0, m_dirs=m_dirs))
    return int(min(8192, m_dirs * max(1.0, fit.gamma**2 / 6.0)))


def measured_iso_claim(cand, t: float, m_dirs: int = 360, headroom: float = 1.01) -> float:
    """Aspect-adaptive measurement of the gradient-integral ratio at one
    level, padded with headroom so it is a valid premise constant."""
    norm = functionals.pogorelov_normalize(cand, t)
    m_eff = _adaptive_dirs(norm, m_dirs)
    return functionals.iso_ratio(norm, 1.0, m_dirs=m_eff).ratio * headroom


def _chain_meta(t, gamma_claim, interval, violated=None) -> dict:
    meta = {
        "t": t,
        "gamma_claim": gamma_claim,
        "interval": list(interval),
        "calibration": calibration_hash(),
    }
    if violated:
        meta["violated"] = violated
    return meta


# ---------------------------------------------------------------------------
# solver-backed experiment: volume controls roundness


def volume_to_roundness_experiment(
    domains: list,
    k: int,
    l: int = 0,
    opts: solver.SolveOptions | None = None,
    calib: dict | None = None,
) -> list:
    """For each (label, mask): solve, compare against both ellipsoid
    barriers, check the radius sandwich and the volume-to-roundness bound."""
    calib = calib or get_constants()
    reports = []
    for label, mask in domains:
        n = mask.n
        h = mask.grid.h
        links = []
        meta = {"label": label, "calibration": calibration_hash(), "h": h}
        try:
            rep = solver.solve(solver.DirichletProblem(mask=mask, k=k, l=l), opts)
        except HessianLabError as exc:
            reports.append(
                ChainReport(label=label, links=[], meta={**meta, "error": str(exc)})
            )
            continue
        meta["converged"] = rep.converged
        meta["residual_max"] = rep.residual_max
        upper, lower = solver.barrier_pair_for_report(rep)
        tol_b = 5.0 * h**2
        for bar in (upper, lower):
            chk = solver.comparison_check(rep, bar)
            links.append(
                ChainLink(
                    f"{bar.sign}-barrier-violation",
                    lhs=chk["max_violation"], rhs=tol_b,
                    passed=bool(chk["max_violation"] <= tol_b),
                )
            )
            slack_tol = 20.0 * h**2 * max(chk["R"], 1.0) ** 2
            links.append(
                ChainLink(
                    f"{bar.sign}-radius-sandwich",
                    lhs=-chk["scalar_slack"], rhs=slack_tol,
                    passed=bool(chk["scalar_slack"] >= -slack_tol),
                    params={"normalizer": chk["normalizer"], "R": chk["R"]},
                )
            )
        body = geometry.body_from_mask(mask)
        fit = geometry.ball_fit(body)
        C_vol = calib["volume_gamma_bound_C"][str(n)]
        rhs_v = C_vol * body.volume() ** ((n - 1.0) / 2.0)
        links.append(
            ChainLink(
                "volume-roundness-bound",
                lhs=float(fit.gamma), rhs=float(rhs_v),
                passed=bool(fit.gamma <= rhs_v),
                params={"volume": body.volume()},
            )
        )
        rc = solver.radius_estimate_check(rep, fit)
        links.append(
            ChainLink(
                "radius-estimate",
                lhs=rc["R_observed"], rhs=rc["bound"] * (1.0 + 4.0 * h),
                passed=rc["passed"],
                params={"gamma": rc["gamma"], "coeff": rc["coeff"]},
            )
        )
        reports.append(ChainReport(label=label, links=links, meta=meta))
    return reports


# ---------------------------------------------------------------------------
# invariance drivers


def recenter_invariance(
    cand: AnalyticCandidate,
    n_centers: int = 5,
    seed: int = 7,
    config: AnalyzeConfig | None = None,
    radius: float = 1.0,
) -> bool:
    """Boundedness verdicts survive subtracting tangent planes at random
    points; returns True when every verdict matches the base run."""
    config = config or AnalyzeConfig(t_points=12, m_dirs=180)
    rng = np.random.default_rng(seed)
    base = analyze(cand, config)
    base_verdicts = {k: v.verdict for k, v in base.verdicts.items()}
    for _ in range(n_centers):
        x0 = rng.uniform(-radius, radius, size=cand.n)
        moved = functionals.recenter(cand, x0)
        rep = analyze(moved, config)
        for key, v in rep.verdicts.items():
            if base_verdicts.get(key) != v.verdict:
                return False
    return True


def hessian_growth_trend(reports: list) -> dict:
    """Trend record across solved instances: largest Hessian operator norm
    against the cube of the largest gradient norm. Recorded, not asserted;
    the fitted coefficient bounds log sup|D2u| by c * max|Du|^3 + c0 over
    the family."""
    pts = []
    for rep in reports:
        f = rep.field
        H = f.hessian_stack()
        st = f.mask.stencils()
        opn = float(np.max(np.abs(np.linalg.eigvalsh(H[st.is_full]))))
        gmax = float(np.max(np.linalg.norm(f.gradient_stack(), axis=1)))
        pts.append({"sup_hess": opn, "max_grad": gmax, "h": f.grid.h})
    if len(pts) >= 2:
        x = np.array([p["max_grad"] ** 3 for p in pts])
        y = np.log(np.array([p["sup_hess"] for p in pts]))
        coeff = float(np.polyfit(x, y, 1)[0])
    else:
        coeff = math.nan
    return {"samples": pts, "log_hess_per_grad_cubed": coeff}


def write_report_json(report, path):
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
