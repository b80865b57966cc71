"""Elementary symmetric polynomial calculus on eigenvalue spectra.

Dimension-generic evaluation of the symmetric polynomials S_j, membership
tests for the elliptic cones Gamma_k, Hessian and Hessian-quotient
operators on symmetric matrices, and the first spectral derivatives that
feed the Newton solver. All functions are pure; the batched helpers accept
stacked spectra (leading axes arbitrary) so a solver can process a whole
grid of Hessians per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AdmissibilityError,
    NumericError,
    PreconditionError,
    SingularQuotientError,
)

MIN_DIM = 2
MAX_DIM = 16


def binomial(n: int, k: int) -> int:
    return math.comb(n, k)


def esym_table(lam) -> np.ndarray:
    """All values S_0..S_n for spectra stacked along the last axis.

    Uses the characteristic-coefficient recurrence (expand the product of
    (x + lam_i) one factor at a time): O(n^2) work, numerically stable,
    never subset enumeration.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    out = np.zeros(lam.shape[:-1] + (n + 1,), dtype=float)
    out[..., 0] = 1.0
    for i in range(n):
        # descend j so that out[..., j-1] is still the previous factor's value
        for j in range(i + 1, 0, -1):
            out[..., j] += lam[..., i] * out[..., j - 1]
    return out


def esym(lam, j: int) -> np.ndarray | float:
    """S_j of one spectrum or a stack of spectra."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 0 <= j <= n:
        raise PreconditionError(f"symmetric polynomial order {j} outside 0..{n}")
    val = esym_table(lam)[..., j]
    return float(val) if val.ndim == 0 else val


def complementary_table(lam) -> np.ndarray:
    """S_j of the spectrum with entry i deleted, for every i.

    Returns shape (..., n, n): entry [..., i, j] equals S_j(lam minus i),
    j = 0..n-1. Recomputed per deletion rather than deflated, which stays
    stable for spectra with large dynamic range.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    out = np.empty(lam.shape[:-1] + (n, n), dtype=float)
    for i in range(n):
        out[..., i, :] = esym_table(np.delete(lam, i, axis=-1))
    return out


def pair_complementary_esym(lam, p: int, q: int, j: int) -> float:
    """S_j of a single spectrum with entries p and q removed."""
    lam = np.asarray(lam, dtype=float)
    keep = [i for i in range(lam.shape[-1]) if i not in (p, q)]
    red = lam[..., keep]
    if not 0 <= j <= red.shape[-1]:
        return 0.0
    return float(esym_table(red)[..., j])


@dataclass(frozen=True)
class SymmetricSpectrum:
    """An eigenvalue vector with its cached symmetric polynomial values."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if lam.ndim != 1:
            raise PreconditionError("spectrum must be a flat vector")
        if not MIN_DIM <= lam.size <= MAX_DIM:
            raise PreconditionError(
                f"spectrum dimension {lam.size} outside {MIN_DIM}..{MAX_DIM}"
            )
        if not np.all(np.isfinite(lam)):
            raise PreconditionError("spectrum entries must be finite")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "_table", esym_table(lam))

    @property
    def n(self) -> int:
        return self.lam.size

    def esym(self, j: int) -> float:
        if not 0 <= j <= self.n:
            raise PreconditionError(f"order {j} outside 0..{self.n}")
        return float(self._table[j])

    def table(self) -> np.ndarray:
        return np.array(self._table)

    def cache_consistent(self, rtol: float = 1e-14) -> bool:
        fresh = esym_table(self.lam)
        scale = np.maximum(np.abs(fresh), 1.0)
        return bool(np.all(np.abs(fresh - self._table) <= rtol * scale))


def _as_spectrum(s) -> SymmetricSpectrum:
    if isinstance(s, SymmetricSpectrum):
        return s
    return SymmetricSpectrum(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class SymmetricMatrix:
    """Exactly symmetric n x n matrix stored as a packed upper triangle."""

    tri: np.ndarray
    n: int

    @classmethod
    def from_array(cls, M, sym_rtol: float = 1e-12) -> "SymmetricMatrix":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise PreconditionError("matrix must be square")
        n = M.shape[0]
        if not MIN_DIM <= n <= MAX_DIM:
            raise PreconditionError(f"dimension {n} outside {MIN_DIM}..{MAX_DIM}")
        scale = np.linalg.norm(M)
        if np.linalg.norm(M - M.T) > sym_rtol * max(scale, 1.0):
            raise PreconditionError("matrix is not symmetric within tolerance")
        sym = 0.5 * (M + M.T)
        iu = np.triu_indices(n)
        return cls(tri=sym[iu].copy(), n=n)

    @property
    def array(self) -> np.ndarray:
        M = np.zeros((self.n, self.n))
        iu = np.triu_indices(self.n)
        M[iu] = self.tri
        il = np.tril_indices(self.n, -1)
        M[il] = M.T[il]
        return M

    def eig(self):
        """Eigenvalues ascending plus orthonormal eigenvectors.

        Raises NumericError if Q diag(w) Q^T fails to reconstruct the
        matrix to 1e-12 relative.
        """
        M = self.array
        w, Q = np.linalg.eigh(M)
        recon = (Q * w) @ Q.T
        if np.linalg.norm(recon - M) > 1e-12 * max(np.linalg.norm(M), 1.0):
            raise NumericError("eigendecomposition reconstruction out of tolerance")
        return w, Q

    def spectrum(self) -> SymmetricSpectrum:
        w, _ = self.eig()
        return SymmetricSpectrum(w)


def _as_matrix(M) -> SymmetricMatrix:
    if isinstance(M, SymmetricMatrix):
        return M
    return SymmetricMatrix.from_array(M)


def elementary_symmetric(s, j: int) -> float:
    """S_j of a spectrum; S_0 is identically 1."""
    return _as_spectrum(s).esym(j)


def gamma_cone_member(s, k: int) -> bool:
    """Strict test that S_1..S_k are all positive (zero tolerance)."""
    sp = _as_spectrum(s)
    if not 1 <= k <= sp.n:
        raise PreconditionError(f"cone order {k} outside 1..{sp.n}")
    return bool(np.all(sp.table()[1 : k + 1] > 0.0))


def gamma_cone_member_relaxed(s, k: int, eps: float) -> bool:
    """Cone test allowing S_j > -eps, for data sitting near the cone boundary."""
    sp = _as_spectrum(s)
    if not 1 <= k <= sp.n:
        raise PreconditionError(f"cone order {k} outside 1..{sp.n}")
    if eps < 0:
        raise PreconditionError("eps must be nonnegative")
    return bool(np.all(sp.table()[1 : k + 1] > -eps))


def _check_orders(n: int, k: int, l: int):
    if not (0 <= l < k <= n):
        raise PreconditionError(f"need 0 <= l < k <= n, got k={k}, l={l}, n={n}")


def hessian_operator(M, k: int, l: int = 0) -> float:
    """S_k(lambda(M)) for l=0, otherwise the quotient S_k/S_l."""
    sm = _as_matrix(M)
    _check_orders(sm.n, k, l)
    t = sm.spectrum().table()
    if l == 0:
        return float(t[k])
    if t[l] == 0.0:
        raise SingularQuotientError(f"S_{l} vanishes; quotient undefined")
    return float(t[k] / t[l])


def log_quotient_operator(M, k: int, l: int) -> float:
    """log S_k - log S_l, the concave form the solver iterates on."""
    sm = _as_matrix(M)
    _check_orders(sm.n, k, l)
    t = sm.spectrum().table()
    if t[k] <= 0.0 or t[l] <= 0.0:
        raise AdmissibilityError("log form requires S_k and S_l positive")
    return float(np.log(t[k]) - np.log(t[l]))


def spectral_gradient(lam, k: int, l: int = 0, log_form: bool = False) -> np.ndarray:
    """d/d(lambda_i) of the operator, batched over leading axes.

    Raw form differentiates S_k (or S_k/S_l); log form differentiates
    log S_k - log S_l. The partial of S_k in lambda_i is S_{k-1} of the
    spectrum with entry i removed, which is smooth across eigenvalue
    collisions, so no divided differences are needed here.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    _check_orders(n, k, l)
    comp = complementary_table(lam)  # (..., i, j)
    dSk = comp[..., :, k - 1]
    if l == 0:
        if not log_form:
            return dSk
        Sk = esym_table(lam)[..., k]
        return dSk / Sk[..., None]
    T = esym_table(lam)
    Sk = T[..., k][..., None]
    Sl = T[..., l][..., None]
    dSl = comp[..., :, l - 1]
    if log_form:
        return dSk / Sk - dSl / Sl
    return (dSk * Sl - Sk * dSl) / Sl**2


def operator_gradient(M, k: int, l: int = 0, log_form: bool = False) -> SymmetricMatrix:
    """Matrix derivative of the operator at M, via the eigenbasis.

    Positive definite whenever lambda(M) lies in Gamma_k (ellipticity).
    Convention: d Op = sum_{p,q} G[p,q] dM[p,q] over all n^2 entries.
    """
    sm = _as_matrix(M)
    _check_orders(sm.n, k, l)
    w, Q = sm.eig()
    if l > 0:
        t = SymmetricSpectrum(w).table()
        if t[l] == 0.0:
            raise SingularQuotientError(f"S_{l} vanishes; quotient undefined")
        if log_form and (t[k] <= 0.0 or t[l] <= 0.0):
            raise AdmissibilityError("log form requires S_k and S_l positive")
    g = spectral_gradient(w, k, l, log_form=log_form)
    G = (Q * g) @ Q.T
    return SymmetricMatrix.from_array(0.5 * (G + G.T))


def divided_difference_coefficients(M, k: int, l: int = 0) -> np.ndarray:
    """Off-diagonal second-derivative coefficients (f_p - f_q)/(lambda_p - lambda_q).

    Diagnostic API only; the Newton solver never consumes these. Evaluated
    through the closed form in terms of pair-deleted symmetric polynomials,
    which coincides with the coalescence limit, so repeated eigenvalues
    need no special casing. Diagonal entries are set to zero.
    """
    sm = _as_matrix(M)
    n = sm.n
    _check_orders(n, k, l)
    w, _ = sm.eig()
    T = SymmetricSpectrum(w).table()
    out = np.zeros((n, n))
    for p in range(n):
        for q in range(p + 1, n):
            skm2 = pair_complementary_esym(w, p, q, k - 2) if k >= 2 else 0.0
            if l == 0:
                val = -skm2
            else:
                if T[l] == 0.0:
                    raise SingularQuotientError(f"S_{l} vanishes; quotient undefined")
                slm2 = pair_complementary_esym(w, p, q, l - 2) if l >= 2 else 0.0
                val = -(skm2 * T[l] - T[k] * slm2) / T[l] ** 2
            out[p, q] = out[q, p] = val
    return out


def newton_maclaurin_ratio(s, k: int) -> float:
    """(S_k / C(n,k))^(1/k); requires the spectrum to lie in Gamma_k."""
    sp = _as_spectrum(s)
    if not 1 <= k <= sp.n:
        raise PreconditionError(f"order {k} outside 1..{sp.n}")
    if not gamma_cone_member(sp, k):
        raise AdmissibilityError("spectrum not in the admissible cone")
    return float((sp.esym(k) / binomial(sp.n, k)) ** (1.0 / k))


def maclaurin_trace_bound(n: int, k: int) -> float:
    """Coefficient n * C(n,k)^(-1/k): lower bound on the Laplacian of a
    unit k-Hessian solution, feeding the radial comparison barrier."""
    return n * binomial(n, k) ** (-1.0 / k)


def maclaurin_det_bound(n: int, k: int) -> float:
    """Coefficient C(n,k)^(-n/k): upper bound on det D2u for unit S_k."""
    return binomial(n, k) ** (-float(n) / k)


def radius_bound_coeff(n: int, k: int) -> float:
    """sqrt(2n / maclaurin_trace_bound): the universal factor in the
    normalized-domain radius estimate R <= coeff * gamma."""
    return math.sqrt(2.0 * n / maclaurin_trace_bound(n, k))
