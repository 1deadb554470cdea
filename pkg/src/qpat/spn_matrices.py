"""Constant matrices of the SP_N moment system and checks of their bounds.

Every builder is a pure function of the order ``N`` (and the anisotropy
``g`` where it enters).  Double factorials and Gamma-function ratios are
accumulated as running products of ratios so nothing overflows for the
orders used here (N <= 33 is exercised in the tests).

Index conventions follow the moment system: block ``n = 1 .. (N+1)/2`` is
stored at array position ``n - 1``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (IdentityViolationError, InvalidOrderError,
                     InvalidParameterError, LemmaViolationError)

__all__ = [
    "SpnOrder", "SpnMatrices", "BoundReport",
    "build_M", "build_S_closed_form", "build_L", "build_AB", "build_R",
    "build_k", "build_PQ", "build_matrices", "legendre_half_moment",
    "verify_bounds", "verify_cauchy_toeplitz_inverse",
    "half_gamma_ratio", "inverse_half_gamma_ratio",
]


@dataclass(frozen=True)
class SpnOrder:
    """Odd moment order N together with the block count (N+1)/2."""

    N: int

    def __post_init__(self):
        N = self.N
        if isinstance(N, bool) or not isinstance(N, (int, np.integer)):
            raise InvalidOrderError(f"order must be an integer, got {N!r}")
        if N < 1 or N % 2 == 0:
            raise InvalidOrderError(f"order must be odd and >= 1, got {N}")
        object.__setattr__(self, "N", int(N))

    @property
    def n_half(self):
        return (self.N + 1) // 2


def _as_order(order):
    return order if isinstance(order, SpnOrder) else SpnOrder(order)


def _check_g(g):
    if not (-1.0 < g < 1.0):
        raise InvalidParameterError(f"anisotropy g must lie in (-1, 1), got {g}")


def half_gamma_ratio(m):
    """Gamma(i + 1/2) / Gamma(i) for i = 1..m."""
    out = np.empty(m)
    r = np.sqrt(np.pi) / 2.0
    for i in range(1, m + 1):
        out[i - 1] = r
        r *= (i + 0.5) / i
    return out


def inverse_half_gamma_ratio(m):
    """Gamma(j - 1/2) / Gamma(j) for j = 1..m."""
    out = np.empty(m)
    t = np.sqrt(np.pi)
    for j in range(1, m + 1):
        out[j - 1] = t
        t *= (j - 0.5) / j
    return out


def _even_odd_ratio(m):
    """(2l-2)!! / (2l-1)!! for l = 1..m."""
    out = np.empty(m)
    a = 1.0
    for l in range(1, m + 1):
        out[l - 1] = a
        a *= (2.0 * l) / (2.0 * l + 1.0)
    return out


def build_M(order):
    """Upper bidiagonal map from even Legendre moments to combined moments."""
    n = _as_order(order).n_half
    M = np.zeros((n, n))
    k = np.arange(1, n + 1)
    M[k - 1, k - 1] = 2 * k - 1
    M[k[:-1] - 1, k[:-1]] = 2 * k[:-1]
    return M


def build_S_closed_form(order):
    """Inverse of ``build_M`` from the explicit double-factorial formula."""
    n = _as_order(order).n_half
    a = _even_odd_ratio(n)
    S = np.zeros((n, n))
    for k in range(1, n + 1):
        for l in range(k, n + 1):
            S[k - 1, l - 1] = (-1.0) ** (l - k) * a[l - 1] / (a[k - 1] * (2 * k - 1))
    return S


def build_L(order):
    n = _as_order(order).n_half
    return np.diag(1.0 / (4.0 * np.arange(1, n + 1) - 3.0))


def build_AB(order):
    """Diffusion constants A_n, B_n (B_1 = 0)."""
    n = np.arange(1, _as_order(order).n_half + 1, dtype=float)
    return (2 * n - 1) / (4 * n - 3), (2 * n - 2) / (4 * n - 3)


def build_R(order):
    """Boundary matrix R_ij = mu_{2i-1, 2j-2} from the Gamma-ratio closed form."""
    n = _as_order(order).n_half
    r = half_gamma_ratio(n)
    t = inverse_half_gamma_ratio(n)
    i = np.arange(1, n + 1)[:, None]
    j = np.arange(1, n + 1)[None, :]
    sign = np.where((i + j - 1) % 2 == 0, 1.0, -1.0)
    return (sign * r[:, None] * t[None, :] / (np.pi * (i + j - 1))
            * (4 * j - 3) / (2 * j - 2 * i - 1))


def build_k(order):
    """Boundary source constants k_{2m-1}, m = 1..(N+1)/2."""
    n = _as_order(order).n_half
    a = _even_odd_ratio(n)  # (2m-2)!!/(2m-1)!!
    m = np.arange(1, n + 1)
    sign = np.where(m % 2 == 1, 1.0, -1.0)
    return sign / (a * (2 * m - 1) * (2 * m))


def build_PQ(order, g):
    """Row-stacked p_n, q_n of the rescaled moment equations, and kappa_N.

    Returns ``(P, Q, kappa)`` where row ``n`` of ``P`` multiplies sigma_a and
    row ``n`` of ``Q`` multiplies sigma_s once equation ``n`` is scaled by
    (4n-1)(1-g^{2n-1}) and the coefficients are simplified.
    """
    _check_g(g)
    order = _as_order(order)
    n_half = order.n_half
    S = build_S_closed_form(order)
    n = np.arange(1, n_half + 1)
    w_odd = (4 * n - 1) * (1.0 - g ** (2 * n - 1))
    w_even = (4 * n - 3) * (1.0 - g ** (2 * n - 2))
    # u_{k,n} = s_{k,n} s_k  (n-th row of s_k^T s_k)
    P = w_odd[:, None] * S[0][:, None] * S[0][None, :]
    Q = np.zeros((n_half, n_half))
    for k in range(2, n_half + 1):
        s = S[k - 1]
        Q += w_even[k - 1] * s[:, None] * s[None, :]
    Q = w_odd[:, None] * Q
    kappa = float(np.sum(w_odd * S[0] ** 2))
    return P, Q, kappa


def legendre_half_moment(a, b, weight_x=False, n_points=64):
    """Gauss-Legendre value of int_0^1 [x] P_a(x) P_b(x) dx.

    Independent of the closed forms above; used as a cross-check.
    """
    from numpy.polynomial import legendre as leg
    xs, ws = leg.leggauss(n_points)
    x = 0.5 * (xs + 1.0)
    w = 0.5 * ws
    ca = np.zeros(a + 1)
    ca[a] = 1.0
    cb = np.zeros(b + 1)
    cb[b] = 1.0
    f = leg.legval(x, ca) * leg.legval(x, cb)
    if weight_x:
        f = f * x
    return float(np.sum(w * f))


@dataclass(frozen=True)
class SpnMatrices:
    """All order-dependent constants of the SP_N system for one (N, g)."""

    order: SpnOrder
    g: float
    M: np.ndarray
    S: np.ndarray
    L: np.ndarray
    R: np.ndarray
    kvec: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    kappaN: float
    A: np.ndarray
    B: np.ndarray
    RMinv: np.ndarray = field(repr=False)

    @property
    def N(self):
        return self.order.N

    @property
    def n_half(self):
        return self.order.n_half

    @property
    def s1(self):
        return self.S[0]

    def volume_weights(self):
        """Matrices W_k = (4k-3) s_k^T s_k so that M^-T L^-1 Sigma_e M^-1 = sum sigma_{2k-2} W_k."""
        n = self.n_half
        return [(4 * k - 3) * np.outer(self.S[k - 1], self.S[k - 1])
                for k in range(1, n + 1)]


def build_matrices(N, g):
    """Assemble every constant for order ``N`` and anisotropy ``g``."""
    _check_g(g)
    order = _as_order(N)
    M = build_M(order)
    S = build_S_closed_form(order)
    R = build_R(order)
    P, Q, kappa = build_PQ(order, g)
    A, B = build_AB(order)
    RMinv = R @ S
    asym = np.max(np.abs(RMinv - RMinv.T))
    if asym > 1e-12 * max(1.0, np.max(np.abs(RMinv))):
        raise LemmaViolationError("symmetric-boundary-form", f"R M^-1 asymmetric by {asym:.2e}")
    # the congruence M^-T (M^T R) M^-1 is symmetric; drop rounding noise
    RMinv = 0.5 * (RMinv + RMinv.T)
    return SpnMatrices(order=order, g=float(g), M=M, S=S, L=build_L(order), R=R,
                       kvec=build_k(order), P=P, Q=Q, kappaN=kappa, A=A, B=B,
                       RMinv=RMinv)


@dataclass
class BoundReport:
    N: int
    lambda_min_R: float
    lambda_min_bound: float
    lambda_min_RMinv: float
    lambda_max_M: float
    frob_sq: float
    det_Rinv: float
    det_Rinv_bound: float
    sQ_l1: float
    sQ_l2: float
    singular_values_R: np.ndarray = field(repr=False)

    def as_row(self, kappa_N=float("nan")):
        return {
            "N": self.N,
            "lambda_min_R": self.lambda_min_R,
            "lambda_min_bound": self.lambda_min_bound,
            "frob_sq": self.frob_sq,
            "det_Rinv": self.det_Rinv,
            "kappa_N": kappa_N,
        }


def verify_bounds(order, R=None, g=0.8):
    """Evaluate the singular-value, determinant and Frobenius bounds for R.

    ``R`` may be supplied to audit a modified matrix (fault injection);
    by default it is built from the closed form.  Raises
    ``LemmaViolationError`` naming the first violated statement.
    """
    order = _as_order(order)
    N, n = order.N, order.n_half
    M = build_M(order)
    S = build_S_closed_form(order)
    if R is None:
        R = build_R(order)
    R = np.asarray(R, dtype=float)

    MtR = M.T @ R
    asym = np.max(np.abs(MtR - MtR.T))
    if asym > 1e-12 * max(1.0, np.max(np.abs(MtR))):
        raise LemmaViolationError("gram-symmetry", f"M^T R not symmetric (|A-A^T|={asym:.3e})")
    if np.linalg.eigvalsh(0.5 * (MtR + MtR.T)).min() <= 0.0:
        raise LemmaViolationError("gram-positivity", "M^T R not positive definite")

    sv_R = np.linalg.svd(R, compute_uv=False)
    lam_R = float(sv_R[-1])
    lam_RMinv = float(np.linalg.svd(R @ S, compute_uv=False)[-1])
    lam_M = float(np.linalg.svd(M, compute_uv=False)[0])
    frob_sq = float(np.sum(R ** 2))
    det_R = float(np.linalg.det(R))
    exponent = (N - 1) / 4.0
    bound = ((n - 1) / frob_sq) ** exponent * abs(det_R) if exponent > 0 else abs(det_R)
    i = np.arange(1, n + 1)
    det_bound = float(np.prod(np.sqrt((4 * i - 2) * (4 * i - 1)) / (4 * i - 3)))
    _, Q, _ = build_PQ(order, g)
    sQ = S[0] @ Q

    report = BoundReport(N=N, lambda_min_R=lam_R, lambda_min_bound=float(bound),
                         lambda_min_RMinv=lam_RMinv, lambda_max_M=lam_M,
                         frob_sq=frob_sq, det_Rinv=1.0 / abs(det_R),
                         det_Rinv_bound=det_bound,
                         sQ_l1=float(np.sum(np.abs(sQ))),
                         sQ_l2=float(np.linalg.norm(sQ)), singular_values_R=sv_R)

    if frob_sq > (N + 1) / 2.0 + 1e-12:
        raise LemmaViolationError("frobenius-bound",
                                  f"||R||_F^2 = {frob_sq:.6g} > {(N + 1) / 2}")
    if lam_R < bound * (1.0 - 1e-12):
        raise LemmaViolationError("singular-value-bound",
                                  f"sigma_min(R) = {lam_R:.6g} < {bound:.6g}")
    if lam_RMinv < lam_R / lam_M * (1.0 - 1e-12):
        raise LemmaViolationError("product-singular-value-bound",
                                  f"sigma_min(RM^-1) = {lam_RMinv:.6g} < {lam_R / lam_M:.6g}")
    if report.det_Rinv > det_bound * (1.0 + 1e-12):
        raise LemmaViolationError("determinant-bound", f"det(R^-1) = {report.det_Rinv:.6g} "
                                  f"> {det_bound:.6g}")
    return report


def cauchy_toeplitz(order):
    """G_ij = 1/(x_i - y_j), x_i = (i-1/4)^2, y_j = (j-3/4)^2, and its scaling vectors."""
    n = _as_order(order).n_half
    idx = np.arange(1, n + 1, dtype=float)
    x = (idx - 0.25) ** 2
    y = (idx - 0.75) ** 2
    G = 1.0 / (x[:, None] - y[None, :])
    p = np.empty(n)
    q = np.empty(n)
    for i in range(n):
        others = np.arange(n) != i
        p[i] = np.prod(x - y[i]) / np.prod(y[others] - y[i])
        q[i] = np.prod(x[i] - y) / np.prod(x[i] - x[others])
    return G, p, q


def verify_cauchy_toeplitz_inverse(order, tol=1e-9):
    """Check G^-1 = diag(p) G^T diag(q) and G p = 1 for the Cauchy-Toeplitz factor of R."""
    G, p, q = cauchy_toeplitz(order)
    Ginv = np.linalg.inv(G)
    candidate = p[:, None] * G.T * q[None, :]
    rel = np.linalg.norm(candidate - Ginv) / np.linalg.norm(Ginv)
    if rel > tol:
        raise IdentityViolationError("cauchy-toeplitz-inverse",
                                     f"G^-1 != P G^T Q (rel. err {rel:.2e})")
    res_p = np.max(np.abs(G @ p - 1.0))
    res_q = np.max(np.abs(G.T @ q - 1.0))
    if max(res_p, res_q) > tol * max(1.0, np.abs(G).sum(axis=1).max() * np.abs(p).max()):
        raise IdentityViolationError("cauchy-toeplitz-inverse",
                                     f"G p = 1 residual {max(res_p, res_q):.2e}")
    return True
