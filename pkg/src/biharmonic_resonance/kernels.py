"""Free resolvent kernels of -Delta and (-Delta)^2 in R^d and their small-mu series.

Conventions
-----------
The biharmonic resolvent is evaluated at ``z = mu**4`` with ``mu`` in the closed
first quadrant. It is built from two Laplacian resolvents through the splitting

    ((-Delta)^2 - mu^4)^{-1} = (2 mu^2)^{-1} [(-Delta - mu^2)^{-1} - (-Delta + mu^2)^{-1}],

i.e. Laplacian kernels at ``k1 = mu`` and ``k2 = i mu``. Both wave numbers lie in
the closed upper half plane so every kernel is the outgoing one.

Small-mu expansions are written as

    R0(mu^4; r) = sum_n mu^n r^(n+4-d) [alpha_n + beta_n log(mu r)],

where ``beta_n`` is non-zero only in even dimensions. The coefficients follow
from the power-log series of ``x^nu H^(1)_nu(x)`` with ``nu = (d-2)/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import DomainError, SingularityError

# |mu| * distance below which the series replaces the splitting identity
SERIES_SWITCH = 1.0
# highest power of mu kept in series evaluations
SERIES_ORDER = 44
# below this |mu| the kernel is the mu = 0 Riesz kernel
MU_FLOOR = 1e-150


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def riesz_constant(d: int, order: float) -> float:
    """Constant c in the kernel c|x|^(order-d) of (-Delta)^(-order/2) on R^d."""
    if not 0 < order < d:
        raise DomainError(f"Riesz order must lie in (0, d), got {order} for d={d}")
    return math.gamma((d - order) / 2.0) / (
        2.0 ** order * math.pi ** (d / 2.0) * math.gamma(order / 2.0)
    )


# ---------------------------------------------------------------------------
# spectral parameter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter mu with z = mu^4.

    Parameters
    ----------
    mu : complex
        Point in the closed first quadrant.
    boundary_side : {"interior", "upper", "lower"}
        Interior points have ``0 < arg mu < pi/2``. Boundary points sit at
        ``arg mu = eps`` (``eps = 0`` is the analytic boundary value itself).
        Lower-side values are obtained by complex conjugation.
    eps : float
        Angular offset used by boundary extrapolation.
    """

    mu: complex
    boundary_side: str = "interior"
    eps: float = 0.0

    def __post_init__(self):
        mu = complex(self.mu)
        object.__setattr__(self, "mu", mu)
        if self.boundary_side not in ("interior", "upper", "lower"):
            raise DomainError(f"unknown boundary side {self.boundary_side!r}")
        arg = math.atan2(mu.imag, mu.real)
        if self.boundary_side == "interior":
            if mu == 0 or not (0.0 < arg < math.pi / 2):
                raise DomainError(f"interior point needs 0 < arg(mu) < pi/2, got {arg}")
        else:
            if self.eps < 0 or mu.real <= 0:
                raise DomainError("boundary points need Re mu > 0 and eps >= 0")

    @property
    def z(self) -> complex:
        z = self.mu ** 4
        return z.conjugate() if self.boundary_side == "lower" else z

    @property
    def ray_angle(self) -> float:
        return math.atan2(self.mu.imag, self.mu.real)

    @property
    def modulus(self) -> float:
        return abs(self.mu)

    @classmethod
    def on_ray(cls, modulus: float, angle: float = math.pi / 8) -> "SpectralPoint":
        return cls(modulus * complex(math.cos(angle), math.sin(angle)))

    @classmethod
    def boundary(cls, lam: float, eps: float = 0.0, side: str = "upper") -> "SpectralPoint":
        if lam <= 0:
            raise DomainError("boundary energy parameter must be positive")
        mu = lam * complex(math.cos(eps), math.sin(eps))
        return cls(mu, boundary_side=side, eps=eps)


# ---------------------------------------------------------------------------
# Laplacian kernel
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _odd_recursion_coefficients(d: int) -> tuple:
    """Coefficients c_j with G_d(k; r) = e^{ikr} sum_j c_j k^j r^(j-(d-2))."""
    coeffs = [1.0 / (4.0 * math.pi) + 0j]
    for dd in range(3, d, 2):
        new = []
        for j in range(len(coeffs) + 1):
            cj = coeffs[j] if j < len(coeffs) else 0.0
            cprev = coeffs[j - 1] if j >= 1 else 0.0
            new.append(-((j - dd + 2) * cj + 1j * cprev) / (2.0 * math.pi))
        coeffs = new
    return tuple(coeffs)


def _check_radius(r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise SingularityError("kernel evaluated at zero distance")
    return r


def laplace_kernel(d: int, k: complex, r) -> np.ndarray:
    """Kernel of (-Delta - k^2)^{-1} on R^d at distance r.

    Odd dimensions use the closed form generated by the recursion
    G_{d+2} = -(2 pi r)^{-1} dG_d/dr starting from e^{ikr}/(4 pi r); even
    dimensions use the outgoing Hankel function.

    Parameters
    ----------
    d : int
        Dimension, at least 3.
    k : complex
        Wave number with Im k >= 0.
    r : float or array_like
        Positive distances.
    """
    if d < 3:
        raise DomainError("laplace_kernel supports d >= 3")
    k = complex(k)
    if k.imag < 0:
        raise DomainError("outgoing kernel needs Im k >= 0")
    r = _check_radius(r)
    if k == 0:
        return (r ** (2.0 - d) / ((d - 2) * sphere_area(d))).astype(complex)
    if d % 2 == 1:
        coeffs = _odd_recursion_coefficients(d)
        kr = k * r
        poly = np.zeros_like(kr)
        for j in range(len(coeffs) - 1, -1, -1):
            poly = poly * kr + coeffs[j]
        return np.exp(1j * kr) * poly * r ** (2.0 - d)
    nu = (d - 2) / 2.0
    kr = k * r
    return 0.25j * (k / (2.0 * math.pi * r)) ** nu * special.hankel1e(nu, kr) * np.exp(1j * kr)


# ---------------------------------------------------------------------------
# series coefficients
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def hankel_power_log_series(d: int, mmax: int = SERIES_ORDER + 2):
    """Power-log series F(x) = sum_m x^m (g_m + h_m log x) of the scaled kernel.

    F(x) = (i/4) (2 pi)^{-nu} x^nu H^(1)_nu(x), so that G_d(k; r) = r^(2-d) F(kr).
    """
    nu2 = d - 2
    nu = nu2 / 2.0
    cj = np.zeros(mmax + 1, dtype=complex)
    cy = np.zeros(mmax + 1, dtype=complex)
    hy = np.zeros(mmax + 1, dtype=complex)
    jterms = []
    j = 0
    while 2 * j + nu2 <= mmax:
        c = (-1) ** j * 2.0 ** (-2 * j - nu) / (math.factorial(j) * math.gamma(j + nu + 1))
        cj[2 * j + nu2] += c
        jterms.append((2 * j + nu2, c))
        j += 1
    if nu2 % 2 == 1:
        sign = (-1) ** ((d - 1) // 2)
        j = 0
        while 2 * j <= mmax:
            cy[2 * j] += sign * (-1) ** j * 2.0 ** (-2 * j + nu) / (
                math.factorial(j) * math.gamma(j - nu + 1)
            )
            j += 1
    else:
        n = nu2 // 2
        for j in range(n):
            if 2 * j <= mmax:
                cy[2 * j] += -math.factorial(n - j - 1) / math.factorial(j) * 2.0 ** (n - 2 * j) / math.pi
        for m, c in jterms:
            hy[m] += 2.0 / math.pi * c
            cy[m] += -2.0 / math.pi * math.log(2.0) * c
        j = 0
        while 2 * j + 2 * n <= mmax:
            psi = special.digamma(j + 1) + special.digamma(n + j + 1)
            cy[2 * j + 2 * n] += -psi * (-1) ** j * 2.0 ** (-2 * j - n) / (
                math.pi * math.factorial(j) * math.factorial(n + j)
            )
            j += 1
    pref = 0.25j * (2.0 * math.pi) ** (-nu)
    g = pref * (cj + 1j * cy)
    h = pref * 1j * hy
    return g, h


@lru_cache(maxsize=None)
def biharm_series(d: int, nmax: int = SERIES_ORDER):
    """Coefficients (alpha_n, beta_n), n = 0..nmax, of the biharmonic series.

    R0(mu^4; r) = sum_n mu^n r^(n+4-d) [alpha_n + beta_n log(mu r)].
    """
    if d < 5:
        raise DomainError("biharmonic series implemented for d >= 5")
    g, h = hankel_power_log_series(d, nmax + 2)
    alpha = np.zeros(nmax + 1, dtype=complex)
    beta = np.zeros(nmax + 1, dtype=complex)
    for n in range(nmax + 1):
        m = n + 2
        im = 1j ** m
        alpha[n] = 0.5 * (g[m] * (1 - im) - h[m] * im * 0.5j * math.pi)
        beta[n] = 0.5 * h[m] * (1 - im)
    # exact zeros where the series has no term
    alpha[np.abs(alpha) < 1e-300] = 0
    beta[np.abs(beta) < 1e-300] = 0
    return alpha, beta


# ---------------------------------------------------------------------------
# biharmonic kernel
# ---------------------------------------------------------------------------


def _series_point(d, mu, r):
    alpha, beta = biharm_series(d)
    x = mu * r
    logx = np.log(x)
    total = np.zeros_like(x)
    for n in range(len(alpha) - 1, -1, -1):
        total = total * x + (alpha[n] + beta[n] * logx)
    return total * r ** (4.0 - d)


def _closed_point(d, mu, r):
    return (laplace_kernel(d, mu, r) - laplace_kernel(d, 1j * mu, r)) / (2.0 * mu * mu)


def biharm_kernel(d: int, p: SpectralPoint, r, branch: str = "auto") -> np.ndarray:
    """Kernel of ((-Delta)^2 - mu^4)^{-1} at distance r.

    Parameters
    ----------
    d : int
        Dimension, at least 5.
    p : SpectralPoint
        Spectral parameter; lower boundary points return the conjugate value.
    r : float or array_like
        Positive distances.
    branch : {"auto", "series", "closed"}
        ``auto`` uses the series when ``|mu| r < SERIES_SWITCH`` and the
        splitting identity otherwise.
    """
    if d < 5:
        raise DomainError("biharmonic kernel implemented for d >= 5")
    r = _check_radius(r)
    mu = p.mu
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    if abs(mu) < MU_FLOOR:
        out = riesz_constant(d, 4) * r ** (4.0 - d) + 0j
    elif branch == "series":
        out = _series_point(d, mu, r.astype(complex))
    elif branch == "closed":
        out = _closed_point(d, mu, r)
    elif branch == "auto":
        out = np.empty(r.shape, dtype=complex)
        small = abs(mu) * r < SERIES_SWITCH
        if np.any(small):
            out[small] = _series_point(d, mu, r[small].astype(complex))
        if np.any(~small):
            out[~small] = _closed_point(d, mu, r[~small])
    else:
        raise DomainError(f"unknown branch {branch!r}")
    if p.boundary_side == "lower":
        out = np.conj(out)
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# kernel descriptions and expansion tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLogKernel:
    """Radial kernel sum_i c_i D^{p_i} (log D)^{q_i} of the distance D."""

    terms: tuple

    def __call__(self, dist):
        dist = np.asarray(dist, dtype=float)
        out = np.zeros(dist.shape, dtype=complex)
        logd = None
        for c, p, q in self.terms:
            val = dist ** p
            if q:
                if logd is None:
                    logd = np.log(dist)
                val = val * logd ** q
            out = out + c * val
        return out

    @property
    def min_power(self) -> float:
        return min(p for _, p, _ in self.terms)

    @property
    def is_real(self) -> bool:
        return all(abs(complex(c).imag) == 0 for c, _, _ in self.terms)


@dataclass(frozen=True)
class ExpansionGroup:
    """One additive group of the small-mu kernel expansion.

    ``terms`` holds (coefficient, mu power, carries log mu, r power, carries log r).
    ``next_order`` is the mu power of the first omitted term and
    ``next_has_log`` flags a log(mu) factor on it.
    """

    label: str
    terms: tuple
    next_order: int
    next_has_log: bool

    def evaluate(self, mu: complex, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape, dtype=complex)
        for c, k, lmu, pr, lr in self.terms:
            val = c * mu ** k * r ** pr
            if lmu:
                val = val * np.log(mu)
            if lr:
                val = val * np.log(r)
            out = out + val
        return out


@dataclass(frozen=True)
class KernelTable:
    """Expansion data for one dimension.

    Attributes
    ----------
    dimension : int
    alpha, beta : ndarray
        Full series coefficients.
    coefficients : dict
        Named scalar coefficients of the leading expansion terms.
    groups : tuple of ExpansionGroup
        Leading expansion terms in order of increasing mu power.
    g0, g1, g2, g3 : PowerLogKernel or None
        Kernels entering the resonance ladder.
    stages : tuple
        Kernels defining T1, T2, T3 in order; ``"P"`` marks the projection.
    """

    dimension: int
    alpha: np.ndarray
    beta: np.ndarray
    coefficients: dict
    groups: tuple
    g0: PowerLogKernel
    g1: PowerLogKernel | None = None
    g2: PowerLogKernel | None = None
    g3: PowerLogKernel | None = None
    stages: tuple = field(default_factory=tuple)
    real_coefficients: tuple = field(default_factory=tuple)
    complex_coefficients: tuple = field(default_factory=tuple)

    def c_of_mu(self, mu):
        """Log-carrying scalar c(mu) (d=6) or d(mu) (d=8) multiplying mu^4."""
        if self.dimension not in (6, 8):
            raise DomainError("c(mu) is defined for d = 6 and d = 8 only")
        return self.beta[4] * np.log(mu) + self.alpha[4]


def _next_term(alpha, beta, start):
    for n in range(start, len(alpha)):
        if alpha[n] != 0 or beta[n] != 0:
            return n, beta[n] != 0
    raise DomainError("series exhausted")


def expansion_coefficients(d: int) -> KernelTable:
    """Small-mu expansion data of the biharmonic resolvent kernel in R^d."""
    if d < 5:
        raise DomainError("expansion tables exist for d >= 5 only")
    alpha, beta = biharm_series(d)
    a = alpha
    b = beta
    p0 = 4 - d
    g0 = PowerLogKernel(((a[0], float(p0), 0),))
    if d == 5:
        coeffs = {"a0": a[0], "a1": a[1], "a2": a[3], "a3": a[4]}
        groups = (
            ExpansionGroup("a0", ((a[0], 0, False, -1.0, False),), 1, False),
            ExpansionGroup("a1", ((a[1], 1, False, 0.0, False),), 3, False),
            ExpansionGroup("a2", ((a[3], 3, False, 2.0, False),), 4, False),
            ExpansionGroup("a3", ((a[4], 4, False, 3.0, False),), 5, False),
        )
        g2 = PowerLogKernel(((1.0, 2.0, 0),))
        g3 = PowerLogKernel(((a[4], 3.0, 0),))
        return KernelTable(d, alpha, beta, coeffs, groups, g0, None, g2, g3,
                           ("P", g2, g3), ("a0", "a3"), ("a1", "a2"))
    if d == 6:
        coeffs = {"c0": a[0], "c1": a[2], "c2": b[4], "c3": a[4], "c4": b[4]}
        n_next, _ = _next_term(alpha, beta, 5)
        groups = (
            ExpansionGroup("c0", ((a[0], 0, False, -2.0, False),), 2, False),
            ExpansionGroup("c1", ((a[2], 2, False, 0.0, False),), 4, True),
            ExpansionGroup(
                "c(mu),c4",
                ((b[4], 4, True, 2.0, False), (a[4], 4, False, 2.0, False), (b[4], 4, False, 2.0, True)),
                n_next,
                True,
            ),
        )
        g2 = PowerLogKernel(((1.0, 2.0, 0),))
        g3 = PowerLogKernel(((b[4], 2.0, 1),))
        return KernelTable(d, alpha, beta, coeffs, groups, g0, None, g2, g3,
                           ("P", g2, g3), ("c0", "c2", "c4"), ("c1", "c3"))
    if d == 7:
        coeffs = {"b0": a[0], "b1": a[3], "b2": a[4]}
        groups = (
            ExpansionGroup("b0", ((a[0], 0, False, -3.0, False),), 3, False),
            ExpansionGroup("b1", ((a[3], 3, False, 0.0, False),), 4, False),
            ExpansionGroup("b2", ((a[4], 4, False, 1.0, False),), 5, False),
        )
        g2 = PowerLogKernel(((a[4], 1.0, 0),))
        return KernelTable(d, alpha, beta, coeffs, groups, g0, None, g2, None,
                           ("P", g2), ("b0", "b2"), ("b1",))
    if d == 8:
        coeffs = {"d0": a[0], "d1": b[4], "d2": a[4], "d3": b[4]}
        n_next, _ = _next_term(alpha, beta, 5)
        groups = (
            ExpansionGroup("d0", ((a[0], 0, False, -4.0, False),), 4, True),
            ExpansionGroup(
                "d(mu),d3",
                ((b[4], 4, True, 0.0, False), (a[4], 4, False, 0.0, False), (b[4], 4, False, 0.0, True)),
                n_next,
                True,
            ),
        )
        g2 = PowerLogKernel(((b[4], 0.0, 1),))
        return KernelTable(d, alpha, beta, coeffs, groups, g0, None, g2, None,
                           ("P", g2), ("d0", "d1", "d3"), ("d2",))
    # d >= 9: one group per non-vanishing power up to mu^(d-4), then the next
    coeffs = {"c1(d)": a[0], "c2(d)": a[4], "C(d)": a[d - 4]}
    groups = []
    n = 0
    while n <= d - 4:
        if a[n] != 0 or b[n] != 0:
            terms = [(a[n], n, False, float(n + 4 - d), False)]
            if b[n] != 0:
                terms.append((b[n], n, True, float(n + 4 - d), False))
                terms.append((b[n], n, False, float(n + 4 - d), True))
            nxt, nlog = _next_term(alpha, beta, n + 1)
            groups.append(ExpansionGroup(f"mu^{n}", tuple(terms), nxt, bool(nlog)))
        n += 1
    g1 = PowerLogKernel(((a[4], float(8 - d), 0),))
    return KernelTable(d, alpha, beta, coeffs, tuple(groups), g0, g1, None, None,
                       (g1,), ("c1(d)", "c2(d)"), ("C(d)",))


# ---------------------------------------------------------------------------
# angular averages
# ---------------------------------------------------------------------------


def channel_weight(d: int, l: int, cos_theta):
    """Normalised Gegenbauer polynomial C_l^{(d-2)/2}(t) / C_l^{(d-2)/2}(1)."""
    if l == 0:
        return np.ones_like(cos_theta)
    if l == 1:
        return np.asarray(cos_theta)
    lam = (d - 2) / 2.0
    return special.eval_gegenbauer(l, lam, cos_theta) / special.eval_gegenbauer(l, lam, 1.0)


@lru_cache(maxsize=None)
def angular_rule(d: int, l: int = 0, theta0: float = 1e-6, ratio: float = 3.0, order: int = 12):
    """Polar-angle quadrature for averages over S^{d-1}.

    Geometrically graded Gauss-Legendre panels accumulate at theta = 0, where
    |r omega - s e1| is smallest. Weights include sin^{d-2}(theta), the channel
    polynomial and the normalisation of the uniform measure.

    Returns
    -------
    theta, weights : ndarray
    """
    edges = [0.0, theta0]
    while edges[-1] * ratio < math.pi:
        edges.append(edges[-1] * ratio)
    edges.append(math.pi)
    x, w = np.polynomial.legendre.leggauss(order)
    thetas, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        thetas.append(0.5 * (b - a) * x + 0.5 * (b + a))
        weights.append(0.5 * (b - a) * w)
    theta = np.concatenate(thetas)
    wt = np.concatenate(weights) * np.sin(theta) ** (d - 2)
    norm = math.sqrt(math.pi) * math.gamma((d - 1) / 2.0) / math.gamma(d / 2.0)
    wt = wt * channel_weight(d, l, np.cos(theta)) / norm
    return theta, wt


def pair_distance(rho, big, theta):
    """|x - y| for |x| = big, |y| = rho at polar angle theta (stable form)."""
    return np.sqrt((big - rho) ** 2 + 4.0 * big * rho * np.sin(0.5 * theta) ** 2)


def radial_average(d: int, kernel, r, s, l: int = 0, singular_power: float | None = None):
    """Average of kernel(|r omega - s e1|) P_l(cos theta) over omega in S^{d-1}.

    Parameters
    ----------
    d : int
        Dimension.
    kernel : PowerLogKernel or callable
        Function of the distance.
    r, s : float or array_like
        Radii (broadcast); the result is exactly symmetric under r <-> s.
    l : int
        Angular channel; ``l = 0`` is the spherical mean.
    singular_power : float, optional
        Leading power of a callable kernel at zero distance, used for the
        integrability check. Read from the kernel when it is a PowerLogKernel.
    """
    r, s = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(s, dtype=float))
    if np.any(r < 0) or np.any(s < 0):
        raise DomainError("radii must be non-negative")
    rho = np.minimum(r, s)
    big = np.maximum(r, s)
    if np.any(big == 0):
        raise SingularityError("both radii vanish")
    power = kernel.min_power if isinstance(kernel, PowerLogKernel) else singular_power
    if power is not None and power <= -(d - 1) and np.any((rho == big) & (rho > 0)):
        raise SingularityError(
            f"kernel singularity |x|^{power} is not integrable on S^{d - 1}"
        )
    theta, wt = angular_rule(d, l)
    shape = rho.shape
    rho_f = rho.reshape(-1, 1)
    big_f = big.reshape(-1, 1)
    dist = pair_distance(rho_f, big_f, theta[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = kernel(dist)
    vals = np.where(dist > 0, vals, 0.0)
    return (vals @ wt).reshape(shape)


def riesz_mean(d: int, p: float, r, s):
    """Closed-form spherical mean of |x - y|^p via a terminating or convergent 2F1.

    mean = R^p 2F1(-p/2, 1 - p/2 - d/2; d/2; (rho/R)^2) with R = max, rho = min.
    """
    r, s = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(s, dtype=float))
    rho = np.minimum(r, s)
    big = np.maximum(r, s)
    t = (rho / big) ** 2
    return big ** p * special.hyp2f1(-p / 2.0, 1.0 - p / 2.0 - d / 2.0, d / 2.0, t)


# ---------------------------------------------------------------------------
# channel Green's functions of the biharmonic resolvent
# ---------------------------------------------------------------------------


def _regular_part(order, k, rho, nu):
    """rho^{-nu} J_order(k rho) with its exponential scale factor removed.

    Returns (value, exponent) with J = value * exp(exponent).
    """
    z = k * rho
    val = special.jve(order, z) * rho ** (-nu)
    small = np.abs(z) < 1e-12
    if np.any(small):
        lead = (k / 2.0) ** order * rho ** (order - nu) / math.gamma(order + 1)
        val = np.where(small, lead, val)
    return val, np.abs(z.imag)


def laplace_channel_green(d: int, l: int, k: complex, rho, big):
    """Channel-l kernel of (-Delta - k^2)^{-1} averaged over S^{d-1}.

    The radial reduction gives (i pi / (2 sigma)) rho^{-nu} J_{nu+l}(k rho)
    R^{-nu} H_{nu+l}(k R) with nu = (d-2)/2 and sigma the sphere area.
    """
    nu = (d - 2) / 2.0
    order = nu + l
    rho = np.asarray(rho, dtype=float)
    big = np.asarray(big, dtype=float)
    jv, jexp = _regular_part(order, k, rho, nu)
    hv = special.hankel1e(order, k * big) * big ** (-nu)
    phase = jexp + 1j * k * big
    return 0.5j * math.pi / sphere_area(d) * jv * hv * np.exp(phase)


def biharm_channel_green(d: int, l: int, mu: complex, rho, big):
    """Channel-l averaged biharmonic resolvent kernel via the splitting identity."""
    g1 = laplace_channel_green(d, l, mu, rho, big)
    g2 = laplace_channel_green(d, l, 1j * mu, rho, big)
    return (g1 - g2) / (2.0 * mu * mu)


def series_channel_delta(d: int, mu: complex, pow_avg, log_avg):
    """Averaged kernel minus its mu = 0 value from precomputed angular moments.

    Parameters
    ----------
    pow_avg, log_avg : ndarray, shape (nterms, ...)
        Channel averages of D^(n+4-d) and D^(n+4-d) log D for n = 0..nterms-1.
    """
    alpha, beta = biharm_series(d)
    nterms = pow_avg.shape[0]
    logmu = np.log(mu)
    out = np.zeros(pow_avg.shape[1:], dtype=complex)
    mun = 1.0 + 0j
    for n in range(1, nterms):
        mun = mun * mu
        if alpha[n] != 0 or beta[n] != 0:
            term = (alpha[n] + beta[n] * logmu) * pow_avg[n]
            if beta[n] != 0:
                term = term + beta[n] * log_avg[n]
            out = out + mun * term
    return out


def log_corrected_slope(mu, residual, with_log: bool) -> float:
    """Power p of a residual sampled along a fixed ray.

    Without ``with_log`` this is the least-squares slope of log|residual|
    against log|mu|. With ``with_log`` the residual is modelled as
    mu^p (A log mu + B) with complex A, B; p minimises the relative misfit
    of the linear (A, B) fit, so a mixed log/non-log term is handled exactly.
    """
    mu = np.abs(np.asarray(mu, dtype=complex))
    res = np.asarray(residual, dtype=complex)
    x = np.log(mu)
    p0 = float(np.polyfit(x, np.log(np.abs(res)), 1)[0])
    if not with_log:
        return p0
    X = np.column_stack([x, np.ones_like(x)]).astype(complex)

    def misfit(p):
        y = res * np.exp(-p * x)
        coef = np.linalg.lstsq(X, y, rcond=None)[0]
        return float(np.linalg.norm(y - X @ coef) / np.linalg.norm(y))

    # the misfit can have shallow local minima; seed the bounded search on a grid
    grid = np.linspace(p0 - 2.0, p0 + 2.0, 81)
    best = grid[int(np.argmin([misfit(p) for p in grid]))]
    out = optimize.minimize_scalar(misfit, bounds=(best - 0.05, best + 0.05), method="bounded",
                                   options={"xatol": 1e-10})
    return float(out.x)


@dataclass(frozen=True)
class OrderLawRow:
    """Residual order after subtracting expansion groups up to ``label``.

    ``slope`` is NaN when fewer than ``min_points`` samples sit above the
    rounding floor; ``decades`` is the span of |mu| actually fitted.
    """

    label: str
    next_order: int
    next_has_log: bool
    slope: float
    decades: float

    @property
    def resolved(self) -> bool:
        return math.isfinite(self.slope)

    def to_dict(self) -> dict:
        return {"label": self.label, "next_order": self.next_order, "next_has_log": self.next_has_log,
                "slope": self.slope, "decades": self.decades}


def _mp_biharm(d: int, mu, r):
    import mpmath as mp

    nu = mp.mpf(d - 2) / 2

    def lap(k):
        return mp.mpc(0, 1) / 4 * (k / (2 * mp.pi * r)) ** nu * mp.hankel1(nu, k * r)

    return (lap(mu) - lap(mp.mpc(0, 1) * mu)) / (2 * mu ** 2)


def kernel_order_law(d: int, r: float, mus, angle: float = math.pi / 8, dps: int = 40,
                     floor: float = 1e4 * np.finfo(float).eps, min_points: int = 5) -> list:
    """Residual slopes of the kernel after successive removal of expansion groups.

    The kernel is evaluated from the splitting identity in ``dps``-digit
    arithmetic so the residual is limited only by the double-precision
    coefficients; samples whose residual is below ``floor`` times |kernel|
    are dropped before fitting.

    Returns
    -------
    list of OrderLawRow
        One row per group of :func:`expansion_coefficients`.
    """
    import mpmath as mp

    table = expansion_coefficients(d)
    mus = np.asarray(mus, dtype=float)
    res = np.zeros((len(mus), len(table.groups)), dtype=complex)
    size = np.zeros(len(mus))
    with mp.workdps(dps):
        rr = mp.mpf(r)
        for i, m in enumerate(mus):
            mu = mp.mpc(SpectralPoint.on_ray(float(m), angle).mu)
            acc = _mp_biharm(d, mu, rr)
            size[i] = abs(complex(acc))
            logmu, logr = mp.log(mu), mp.log(rr)
            for j, g in enumerate(table.groups):
                for c, k, lmu, pr, lr in g.terms:
                    t = mp.mpc(complex(c)) * mu ** k * rr ** pr
                    if lmu:
                        t *= logmu
                    if lr:
                        t *= logr
                    acc -= t
                res[i, j] = complex(acc)
    rows = []
    for j, g in enumerate(table.groups):
        ok = np.abs(res[:, j]) > floor * size
        if ok.sum() < min_points:
            rows.append(OrderLawRow(g.label, g.next_order, g.next_has_log, math.nan, 0.0))
            continue
        slope = log_corrected_slope(mus[ok], res[ok, j], g.next_has_log)
        span = float(np.log10(mus[ok].max() / mus[ok].min()))
        rows.append(OrderLawRow(g.label, g.next_order, g.next_has_log, slope, span))
    return rows


__all__ = [
    "SERIES_SWITCH",
    "SpectralPoint",
    "PowerLogKernel",
    "ExpansionGroup",
    "KernelTable",
    "sphere_area",
    "riesz_constant",
    "laplace_kernel",
    "biharm_kernel",
    "biharm_series",
    "hankel_power_log_series",
    "expansion_coefficients",
    "radial_average",
    "riesz_mean",
    "angular_rule",
    "channel_weight",
    "laplace_channel_green",
    "biharm_channel_green",
    "series_channel_delta",
    "log_corrected_slope",
    "OrderLawRow",
    "kernel_order_law",
]
