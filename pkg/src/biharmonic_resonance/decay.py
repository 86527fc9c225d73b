"""Spectral density, propagator matrix elements and decay-rate fits.

Test functions are f = h(r) Y_l with h(r) = r^l exp(-(r - c)^2 / (2 w^2)) and
Y_l normalised on the sphere. With the unitary Hankel transform

    h^(k) = k^(1 - d/2) int h(r) J_nu(k r) r^(d/2) dr,   nu = l + d/2 - 1,

the free resolvent is a one-dimensional integral in k,

    (R0 f)_l(r) = r^(1 - d/2) int F_r(k) / (k^4 - mu^4) dk,
    F_r(k) = J_nu(k r) k^(d/2) h^(k).

The pole at k = mu is removed by subtracting F_r(mu) and adding back
int_0^inf dk / (k^4 - mu^4) = pi (i - 1) / (4 mu^3), valid for mu in the
closed first quadrant. One fixed k-grid therefore serves every mu, real or
complex.

The density of the spectral measure in u = lambda^4 follows from Stone's
formula and the symmetric resolvent identity,

    rho(u) = rho_free(lambda) - pi^-1 Im b_f^T M(lambda)^{-1} b_g,

with b_i = sqrt(w_i / sigma) v_i (R0 f)_l(r_i). The propagator element
int e^{itu} rho(u) du is integrated with Filon-Legendre panels that are
geometric in u and fixed in t, so density values are shared by all times.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import optimize, special

from . import kernels as K
from .discretization import Discretization, RadialGrid, RadialProblem
from .errors import BoundaryLimitError, ContractionError, DomainError, NumericalFailure, ValidationError
from .expansion import invert_M
from .ladder import DEFAULT_TAU, LadderState, build_ladder

RICHARDSON_EPS = (1e-2, 5e-3, 2.5e-3)
STRUCTURED_MAX = 0.1
LAMBDA_MIN = 1e-4
# with a zero eigenvalue the density is the imaginary part of a term of size
# <f,P0 f> / lambda^4; rounding in the projected series delta leaks into it
# at relative size ~1e-9, which limits the trustworthy range
LAMBDA_MIN_EIGEN = 1e-3
PANEL_NODES = 20


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Gaussian shell test function h(r) Y_l.

    Parameters
    ----------
    width : float
    center : float
        Radius of the Gaussian peak; 0 gives closed-form transforms.
    channel : int
        Angular momentum l.
    """

    __test__ = False  # not a pytest class

    width: float = 1.0
    center: float = 0.0
    channel: int = 0

    def __post_init__(self):
        if self.width <= 0:
            raise ValidationError("test function width must be positive")
        if self.center < 0:
            raise ValidationError("test function center must be non-negative")
        if self.channel < 0:
            raise ValidationError("channel must be non-negative")

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return r ** self.channel * np.exp(-(r - self.center) ** 2 / (2 * self.width ** 2))

    @cached_property
    def _radial_rule(self):
        lo = max(0.0, self.center - 14 * self.width)
        hi = self.center + 14 * self.width
        edges = np.linspace(lo, hi, 57)
        x, w = np.polynomial.legendre.leggauss(24)
        mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
        half = 0.5 * np.diff(edges)[:, None]
        return (mid + half * x).ravel(), (half * w).ravel()

    def norm2(self, d: int) -> float:
        """int h(r)^2 r^(d-1) dr, the squared L^2 norm of h Y_l."""
        l = self.channel
        if self.center == 0:
            return float(self.width ** (2 * l + d) * special.gamma(l + d / 2) / 2)
        r, w = self._radial_rule
        return float(np.sum(w * self.radial(r) ** 2 * r ** (d - 1)))

    def hankel(self, d: int, k) -> np.ndarray:
        """Unitary Hankel transform of order l + d/2 - 1; accepts complex k."""
        k = np.asarray(k)
        l = self.channel
        nu = l + d / 2 - 1
        if self.center == 0:
            return k ** l * self.width ** (2 * nu + 2) * np.exp(-(k * self.width) ** 2 / 2)
        r, w = self._radial_rule
        kk = k[..., None]
        vals = (kk * r) ** (1 - d / 2) * special.jv(nu, kk * r) * self.radial(r) * r ** (d - 1)
        return np.sum(w * vals, axis=-1)

    def free_density(self, d: int, lam, other: "TestFunction | None" = None) -> np.ndarray:
        """Density of <f, E0'(u) g> at u = lam^4 for the free operator."""
        g = other or self
        lam = np.asarray(lam, dtype=float)
        if g.channel != self.channel:
            return np.zeros_like(lam)
        return lam ** (d - 4) * np.real(self.hankel(d, lam) * g.hankel(d, lam)) / 4.0

    def to_dict(self) -> dict:
        return {"width": self.width, "center": self.center, "channel": self.channel}


# ---------------------------------------------------------------------------
# free resolvent applied to test functions
# ---------------------------------------------------------------------------


def _k_grid(width: float, lam_max: float, k_lo: float):
    """Gauss nodes geometric from k_lo to 1, then uniform to K."""
    x, w = np.polynomial.legendre.leggauss(16)
    geo = np.geomspace(k_lo, 1.0, int(math.ceil(math.log2(1.0 / k_lo))) + 1)
    K_hi = max(14.0 / width, 2.0 * lam_max, 2.0)
    lin = np.linspace(1.0, K_hi, int(math.ceil((K_hi - 1.0) / 0.5)) + 1)
    edges = np.concatenate([geo, lin[1:]])
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * np.diff(edges)[:, None]
    return (mid + half * x).ravel(), (half * w).ravel(), float(edges[0]), float(edges[-1])


def _tail_low(mu, k_lo, nterms=12):
    """int_0^k_lo dk / (k^4 - mu^4) for k_lo < |mu|."""
    q = (k_lo / mu) ** 4
    n = np.arange(nterms)
    return -np.sum(q ** n / (4 * n + 1)) * k_lo / mu ** 4


def _tail_high(mu, K_hi, nterms=24):
    """int_K^inf dk / (k^4 - mu^4) for K > |mu|."""
    q = (mu / K_hi) ** 4
    n = np.arange(nterms)
    return np.sum(q ** n / (4 * n + 3)) / K_hi ** 3


class FreeResolventMap:
    """(R0 f)_l at fixed radii for any mu in the closed first quadrant.

    Parameters
    ----------
    d : int
    tf : TestFunction
    radii : ndarray
    lam_max : float
        Largest |mu| that will be requested.
    """

    def __init__(self, d: int, tf: TestFunction, radii, lam_max: float = 16.0,
                 k_lo: float = 1e-3 * LAMBDA_MIN):
        self.d = d
        self.tf = tf
        self.r = np.asarray(radii, dtype=float)
        self.nu = tf.channel + d / 2 - 1
        k, w, self.k_lo, self.K_hi = _k_grid(tf.width, lam_max, k_lo)
        self.k, self.w = k, w
        self.lam_max = lam_max
        pref = self.r[:, None] ** (1 - d / 2)
        self.F = pref * special.jv(self.nu, np.outer(self.r, k)) * (k ** (d / 2) * tf.hankel(d, k))[None, :]
        self.Fw = self.F * w[None, :]

    def F_at(self, mu) -> np.ndarray:
        d = self.d
        return self.r ** (1 - d / 2) * special.jv(self.nu, mu * self.r) * mu ** (d / 2) * self.tf.hankel(d, mu)

    def __call__(self, mu: complex) -> np.ndarray:
        mu = complex(mu)
        if abs(mu) == 0:
            return self.static()
        if not self.k_lo < abs(mu) < self.K_hi:
            raise DomainError(f"|mu| = {abs(mu):.3e} outside the transform grid")
        if mu.real < 0 or mu.imag < 0:
            raise DomainError("mu must lie in the closed first quadrant")
        z = mu ** 4
        g = 1.0 / (self.k ** 4 - z)
        Fm = self.F_at(mu)
        total = math.pi * (1j - 1) / (4 * mu ** 3) - _tail_low(mu, self.k_lo) - _tail_high(mu, self.K_hi)
        return self.Fw @ g - Fm * (self.w @ g) + Fm * total

    def static(self) -> np.ndarray:
        """(G0 f)_l, the mu = 0 value."""
        return (self.Fw @ (1.0 / self.k ** 4)).astype(complex)


# ---------------------------------------------------------------------------
# spectral engine
# ---------------------------------------------------------------------------


def smooth_cutoff(lam, kind: str = "smooth") -> np.ndarray:
    """Cutoff chi(lambda): 1 for lambda <= 1/2, 0 for lambda >= 1.

    ``kind`` is "smooth" (C^infinity, exponential blend) or "poly"
    (degree-7 smoothstep, C^3).
    """
    lam = np.asarray(lam, dtype=float)
    x = np.clip((1.0 - lam) / 0.5, 0.0, 1.0)
    if kind == "smooth":
        with np.errstate(divide="ignore", over="ignore"):
            a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
            b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
        return a / (a + b)
    if kind == "poly":
        return x ** 4 * (35 - 84 * x + 70 * x ** 2 - 20 * x ** 3)
    raise ValidationError(f"unknown cutoff kind {kind!r}")


def _eigen_basis(state: LadderState) -> np.ndarray:
    """Kernel vectors of T0 that carry zero-energy eigenfunctions."""
    if state.classification != "Eigenvalue":
        return np.zeros((state.stages[0].operator.shape[0], 0))
    return state.stages[-1].basis


class SpectralEngine:
    """Boundary values, densities and zero projections for one channel.

    Parameters
    ----------
    problem : RadialProblem
    grid : RadialGrid
    f, g : TestFunction
        Must share a channel; g defaults to f.
    tau : float
        Ladder threshold for the channel problem.
    boundary : {"direct", "richardson"}
        Evaluate at mu = lambda directly (the kernels are analytic up to the
        real axis) or extrapolate mu = lambda e^{i eps} over ``RICHARDSON_EPS``.
    lam_max : float
        Largest energy parameter that will be requested.
    """

    def __init__(self, problem: RadialProblem, grid: RadialGrid, f: TestFunction,
                 g: TestFunction | None = None, tau: float = DEFAULT_TAU,
                 boundary: str = "direct", lam_max: float = 16.0):
        g = g or f
        if boundary not in ("direct", "richardson"):
            raise ValidationError(f"unknown boundary mode {boundary!r}")
        self.d = problem.dimension
        self.f, self.g = f, g
        self.boundary = boundary
        self.same_channel = f.channel == g.channel
        self.problem = problem.with_channels((f.channel,))
        self.grid = grid
        self.disc = Discretization(self.problem, grid)
        self.state = build_ladder(self.problem, grid, tau, disc=self.disc)
        d = self.d
        scale = np.sqrt(self.disc.w / K.sphere_area(d)) * self.disc.v
        self._scale = scale
        self.map_f = FreeResolventMap(d, f, self.disc.r, lam_max)
        self.map_g = self.map_f if g == f else FreeResolventMap(d, g, self.disc.r, lam_max)
        self._cache: dict = {}

    # -- resolvent pieces ---------------------------------------------------

    def _inverse(self, p: K.SpectralPoint) -> np.ndarray:
        if abs(p.mu) <= STRUCTURED_MAX and self.state.classification != "Regular":
            try:
                return invert_M(self.state, self.problem, self.grid, p, self.disc).entries
            except (ContractionError, np.linalg.LinAlgError):
                pass
        return np.linalg.inv(self.disc.M(p).entries)

    def perturbation(self, mu: complex) -> complex:
        """b_f^T M(mu)^{-1} b_g at one mu in the closed first quadrant."""
        p = K.SpectralPoint(mu) if complex(mu).imag > 0 else K.SpectralPoint.boundary(abs(mu))
        bf = self._scale * self.map_f(mu)
        bg = bf if self.map_g is self.map_f else self._scale * self.map_g(mu)
        return complex(bf @ (self._inverse(p) @ bg))

    def boundary_perturbation(self, lam: float) -> complex:
        """Boundary value of b_f^T M^{-1} b_g from the upper side."""
        if self.boundary == "direct":
            return self.perturbation(lam)
        vals = [self.perturbation(lam * complex(math.cos(e), math.sin(e))) for e in RICHARDSON_EPS]
        return richardson_limit(vals)

    @property
    def lambda_floor(self) -> float:
        """Smallest lambda at which the density is trusted."""
        return LAMBDA_MIN_EIGEN if self.state.classification == "Eigenvalue" else LAMBDA_MIN

    def density(self, lam: float) -> float:
        """<f, E'(u) g> at u = lam^4 (density in u)."""
        if lam <= 0:
            raise DomainError("density needs lambda > 0")
        if not self.same_channel:
            return 0.0
        key = float(lam)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        free = float(self.f.free_density(self.d, lam, self.g))
        val = free - self.boundary_perturbation(lam).imag / math.pi
        self._cache[key] = val
        return val

    def densities(self, lams, threads: int = 1) -> np.ndarray:
        """Density at many lambda; nodes are independent and may run in a thread pool."""
        lams = [float(x) for x in np.asarray(lams).ravel()]
        if threads <= 1:
            return np.array([self.density(x) for x in lams])
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(self.density, lams)))

    # -- zero-energy eigenfunctions -----------------------------------------

    def zero_projection(self) -> float:
        """<f, P0 g> for the zero-energy eigenspace of the channel.

        psi = -G0 v phi for phi in the eigen-carrying kernel of T0; overlaps
        and the Gram matrix are integrated in k-space on the transform grid.
        """
        X = _eigen_basis(self.state)
        if X.shape[1] == 0 or not self.same_channel:
            return 0.0
        ghat = self.eigen_transforms(X)
        kf = self.map_f.k
        wk = self.map_f.w
        d = self.d
        gram = (ghat * (wk * kf ** (d - 9))[None, :]) @ ghat.T
        of = -(ghat * (wk * kf ** (d - 5) * self.f.hankel(d, kf))[None, :]).sum(axis=1)
        og = -(ghat * (wk * kf ** (d - 5) * self.g.hankel(d, kf))[None, :]).sum(axis=1)
        return float(of @ np.linalg.solve(gram, og))

    def eigen_transforms(self, X) -> np.ndarray:
        """Hankel transforms of v phi for the columns of X (rows: vectors)."""
        d = self.d
        k = self.map_f.k
        r = self.disc.r
        kern = special.jv(self.map_f.nu, np.outer(k, r)) * np.outer(k, r) ** (1 - d / 2)
        coeff = (self.disc.vhat[:, None] * X) / K.sphere_area(d)
        return (kern @ coeff).T

    def psi_overlap_xspace(self, radii) -> tuple:
        """Independent route: psi on radii by the Nystrom kernel, for tests."""
        from .ladder import psi_values

        X = _eigen_basis(self.state)
        return [psi_values(self.disc, self.f.channel, X[:, j], radii) for j in range(X.shape[1])]


def richardson_limit(vals: Sequence[complex]) -> complex:
    """Order-2 Richardson extrapolation of values at eps, eps/2, eps/4.

    Raises
    ------
    BoundaryLimitError
        When the first-level extrapolants do not improve on the raw
        differences by at least a factor 3.
    """
    v1, v2, v3 = (complex(v) for v in vals)
    r1 = 2 * v2 - v1
    r2 = 2 * v3 - v2
    raw = abs(v2 - v1)
    if raw > 0 and abs(r2 - r1) * 3 > raw:
        raise BoundaryLimitError(
            f"boundary extrapolation not converging: |dR| = {abs(r2 - r1):.3e}, |dV| = {raw:.3e}"
        )
    return (4 * r2 - r1) / 3


def spectral_density(problem: RadialProblem, grid: RadialGrid, lam: float, f: TestFunction,
                     g: TestFunction | None = None, boundary: str = "richardson",
                     engine: SpectralEngine | None = None) -> float:
    """<f, E'(u) g> at u = lam^4 from boundary values of the resolvent.

    Raises
    ------
    BoundaryLimitError
        When the epsilon extrapolation does not settle.
    """
    engine = engine or SpectralEngine(problem, grid, f, g, boundary=boundary, lam_max=max(2 * lam, 4.0))
    return engine.density(lam)


# ---------------------------------------------------------------------------
# oscillatory quadrature
# ---------------------------------------------------------------------------


def spherical_moments(order: int, omega) -> np.ndarray:
    """int_{-1}^{1} e^{i omega x} P_k(x) dx = 2 i^k j_k(omega) for k < order."""
    omega = np.asarray(omega, dtype=float)
    # scipy returns nan for subnormal arguments; j_k(omega) = omega^k/(2k+1)!! there
    omega = np.where(np.abs(omega) < 1e-150, 0.0, omega)
    k = np.arange(order)
    shape = (order,) + omega.shape
    jk = special.spherical_jn(k.reshape((order,) + (1,) * omega.ndim), np.broadcast_to(omega, shape))
    return 2.0 * (1j ** k).reshape((order,) + (1,) * omega.ndim) * jk


@dataclass
class FilonRule:
    """Gauss-Legendre panels with Legendre coefficients for Filon integration."""

    edges: np.ndarray
    order: int = PANEL_NODES

    def __post_init__(self):
        x, w = np.polynomial.legendre.leggauss(self.order)
        self._x, self._w = x, w
        self.mid = 0.5 * (self.edges[1:] + self.edges[:-1])
        self.half = 0.5 * np.diff(self.edges)
        self.nodes = (self.mid[:, None] + self.half[:, None] * x[None, :])
        V = np.polynomial.legendre.legvander(x, self.order - 1)
        # coefficients c_k = (2k+1)/2 sum_j w_j f_j P_k(x_j)
        self._proj = (V * w[:, None]).T * ((2 * np.arange(self.order) + 1) / 2.0)[:, None]

    def integrate(self, values: np.ndarray, t) -> np.ndarray:
        """int e^{i t u} f(u) du over all panels for each t (values on nodes)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        coef = values @ self._proj.T  # (panels, order)
        out = np.empty(t.shape, dtype=complex)
        for i, tt in enumerate(t):
            mom = spherical_moments(self.order, tt * self.half)  # (order, panels)
            out[i] = np.sum(self.half * np.exp(1j * tt * self.mid) * np.sum(coef.T * mom, axis=0))
        return out


def _fit_low_tail(u, rho):
    """Model of rho on the first panels: power law or 1/(u log^2) family."""
    lu = np.log(u)
    pos = rho > 0
    if pos.sum() < 4:
        return {"model": "none", "integral": 0.0}
    A = np.stack([np.ones(pos.sum()), lu[pos]], axis=1)
    cpow, res_pow, *_ = np.linalg.lstsq(A, np.log(rho[pos]), rcond=None)
    res_pow = float(np.sum((A @ cpow - np.log(rho[pos])) ** 2))

    def log_model(par):
        L1, L2 = par
        base = 1.0 / (u * ((lu - L1) ** 2 + L2 ** 2))
        Kc = np.sum(rho * base) / np.sum(base * base)
        return Kc, base

    def resid(par):
        Kc, base = log_model(par)
        return np.log(np.abs(Kc * base) + 1e-300) - np.log(np.abs(rho) + 1e-300)

    best = None
    for L1 in (0.0, 10.0, -10.0):
        try:
            sol = optimize.least_squares(resid, [L1, 3.0])
        except ValueError:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    res_log = 2 * best.cost if best is not None else math.inf
    a = cpow[1]
    if res_pow <= res_log or best is None:
        C = math.exp(cpow[0])
        if a <= -1:
            raise NumericalFailure("density not integrable at the threshold")
        return {"model": "power", "exponent": float(a), "coefficient": C, "residual": res_pow,
                "integral": lambda umin: C * umin ** (a + 1) / (a + 1)}
    L1, L2 = best.x
    Kc, _ = log_model(best.x)
    L2 = abs(L2)
    return {"model": "inverse_log_squared", "L1": float(L1), "L2": float(L2), "coefficient": float(Kc),
            "residual": res_log,
            "integral": lambda umin: Kc / L2 * (math.atan((math.log(umin) - L1) / L2) + math.pi / 2)}


def _fit_high_tail(u, rho):
    pos = np.abs(rho) > 0
    A = np.stack([np.ones(pos.sum()), np.log(u[pos])], axis=1)
    c, *_ = np.linalg.lstsq(A, np.log(np.abs(rho[pos])), rcond=None)
    a = -c[1]
    C = math.copysign(math.exp(c[0]), float(np.mean(rho[pos])))
    return {"exponent": float(a), "coefficient": C}


@dataclass
class PropagatorTable:
    """Density on the Filon nodes plus the pieces needed to evaluate I(t).

    Attributes
    ----------
    rule : FilonRule
    lam : ndarray
        lambda = u^(1/4) on the nodes.
    rho : ndarray
        Density on the nodes.
    chi : ndarray
        Cutoff on the nodes.
    low_tail, high_tail : dict
        Models used below the first and above the last node.
    """

    rule: FilonRule
    lam: np.ndarray
    rho: np.ndarray
    chi: np.ndarray
    u_min: float
    u_max: float
    low_tail: dict
    high_tail: dict
    norm_f: float
    norm_g: float
    zero_projection: float
    cutoff: str

    def element(self, t, part: str = "total") -> np.ndarray:
        """<f, e^{itH} P_ac g>; ``part`` selects "low", "high" or "total"."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo = self.rule.integrate(self.rho * self.chi, t)
        hi = self.rule.integrate(self.rho * (1 - self.chi), t)
        ltail = self.low_tail["integral"](self.u_min) if callable(self.low_tail.get("integral")) else 0.0
        a, C = self.high_tail["exponent"], self.high_tail["coefficient"]
        U = self.u_max
        htail = np.where(
            t * U > 1.0,
            1j * C * U ** (-a) * np.exp(1j * t * U) / np.where(t > 0, t, 1.0),
            C * U ** (1 - a) / (a - 1) if a > 1 else 0.0,
        )
        # below u_min the phase t u is < 1e-9 for every t used, so the tail is a constant
        low = lo + ltail
        high = hi + htail
        if part == "low":
            return low
        if part == "high":
            return high
        return low + high

    def normalization_defect(self) -> float:
        """|I(0) - (<f,g> - <f, P0 g>)| relative to ||f|| ||g||."""
        target = self.overlap - self.zero_projection
        return float(abs(self.element(0.0)[0] - target) / math.sqrt(self.norm_f * self.norm_g))

    overlap: float = 0.0


def propagator_table(engine: SpectralEngine, cutoff: str = "smooth", lam_min: float | None = None,
                     lam_max: float | None = None, order: int = PANEL_NODES,
                     threads: int = 1) -> PropagatorTable:
    """Evaluate the density on geometric panels in u and fit both tails."""
    d = engine.d
    lam_min = lam_min or engine.lambda_floor
    lam_max = lam_max or min(engine.map_f.lam_max, max(11.0, 12.0 / engine.f.width))
    n_lo = int(math.ceil(-math.log(lam_min ** 4) / math.log(4.0)))
    low = 4.0 ** np.arange(-n_lo, 1)
    n_hi = int(math.ceil(math.log(lam_max ** 4) / math.log(2.0)))
    high = 2.0 ** np.arange(1, n_hi + 1)
    edges = np.concatenate([low, high])
    rule = FilonRule(edges, order)
    u = rule.nodes
    lam = u ** 0.25
    rho = engine.densities(lam, threads).reshape(u.shape)
    chi = smooth_cutoff(lam, cutoff)
    low_tail = _fit_low_tail(u[:2].ravel(), rho[:2].ravel())
    high_tail = _fit_high_tail(u[-1].ravel(), rho[-1].ravel())
    nf = engine.f.norm2(d)
    ng = engine.g.norm2(d)
    overlap = _overlap(engine.f, engine.g, d)
    tab = PropagatorTable(rule, lam, rho, chi, float(edges[0]), float(edges[-1]), low_tail, high_tail,
                          nf, ng, engine.zero_projection(), cutoff)
    tab.overlap = overlap
    return tab


def _overlap(f: TestFunction, g: TestFunction, d: int) -> float:
    if f.channel != g.channel:
        return 0.0
    if f == g:
        return f.norm2(d)
    r, w = f._radial_rule
    r2, w2 = g._radial_rule
    rr = np.concatenate([r, r2])
    ww = np.concatenate([w, w2]) * 0.5
    return float(np.sum(ww * f.radial(rr) * g.radial(rr) * rr ** (d - 1)))


def propagator_element(problem: RadialProblem, grid: RadialGrid, t, f: TestFunction,
                       g: TestFunction | None = None, cutoff: str = "smooth",
                       table: PropagatorTable | None = None) -> np.ndarray:
    """<f, e^{itH} P_ac g> for t >= 0 (negative t by conjugation when f = g)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if table is None:
        table = propagator_table(SpectralEngine(problem, grid, f, g), cutoff)
    out = np.empty(t.shape, dtype=complex)
    pos = t >= 0
    out[pos] = table.element(t[pos])
    if np.any(~pos):
        if g is not None and g != f:
            raise DomainError("negative times need f = g")
        out[~pos] = np.conj(table.element(-t[~pos]))
    return out


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------


DECAY_MODELS = ("power", "power_log", "inverse_log", "inverse_log_squared")


@dataclass(frozen=True)
class DecayPrediction:
    model: str
    exponent: float | None
    note: str = ""


def predicted_decay(d: int, classification: str) -> DecayPrediction:
    """Kato-Jensen rate for (d, class)."""
    if classification == "Regular":
        return DecayPrediction("power", d / 4.0)
    if d == 5:
        return DecayPrediction("power", 0.75 if classification == "FirstKind" else 0.25)
    if d == 6:
        if classification == "FirstKind":
            return DecayPrediction("power", 0.5)
        return DecayPrediction("inverse_log", None)
    if d == 7:
        return DecayPrediction("power", 0.25)
    if d == 8:
        return DecayPrediction("inverse_log", None)
    return DecayPrediction("power", (d - 8) / 4.0,
                           "the leading time order stated alongside the expansion is (d-2)/4; "
                           "the density integrates to (d-8)/4")


def admissible_models(prediction: DecayPrediction) -> tuple:
    if prediction.model == "power":
        return ("power", "power_log")
    return ("inverse_log", "inverse_log_squared", "power")


def _fit_one(model, lt, ly):
    """Least squares in log|I| for one two-parameter model; returns (params, rss)."""
    L = lt  # ln t
    if model == "power":
        A = np.stack([np.ones_like(lt), -lt], axis=1)
        c, *_ = np.linalg.lstsq(A, ly, rcond=None)
        return {"log_C": c[0], "p": c[1]}, float(np.sum((A @ c - ly) ** 2))
    if model == "power_log":
        y = ly - np.log(L)
        A = np.stack([np.ones_like(lt), -lt], axis=1)
        c, *_ = np.linalg.lstsq(A, y, rcond=None)
        return {"log_C": c[0], "p": c[1]}, float(np.sum((A @ c - y) ** 2))
    q = 1.0 if model == "inverse_log" else 2.0

    def rss(s):
        if np.any(L + s <= 0):
            return math.inf
        y = ly + q * np.log(L + s)
        return float(np.sum((y - y.mean()) ** 2))

    sol = optimize.minimize_scalar(rss, bounds=(-0.9 * L.min(), 50.0), method="bounded")
    s = float(sol.x)
    y = ly + q * np.log(L + s)
    return {"log_C": float(y.mean()), "shift": s, "q": q}, rss(s)


@dataclass
class DecayFitReport:
    """Fitted decay of |<f, e^{itH} P_ac g>| over a t-window."""

    t: np.ndarray
    values: np.ndarray
    model: str
    exponent: float | None
    exponent_stderr: float | None
    parameters: dict
    residuals: dict
    predicted: DecayPrediction
    envelope_applied: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def matches_prediction(self) -> bool | None:
        return self.diagnostics.get("matches_prediction")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "exponent": self.exponent,
            "exponent_stderr": self.exponent_stderr,
            "parameters": self.parameters,
            "residuals": self.residuals,
            "predicted_model": self.predicted.model,
            "predicted_exponent": self.predicted.exponent,
            "prediction_note": self.predicted.note,
            "envelope_applied": self.envelope_applied,
            "diagnostics": self.diagnostics,
        }


def upper_envelope(t, y) -> np.ndarray:
    """Running maximum from the right: the smallest non-increasing majorant."""
    return np.maximum.accumulate(np.asarray(y)[::-1])[::-1]


def fit_decay(t, values, models: Sequence[str] = ("power",), prediction: DecayPrediction | None = None,
              tolerance: float = 0.1) -> DecayFitReport:
    """Fit |values| against the admissible decay models and pick the best.

    Raises
    ------
    ValidationError
        If the t-range is shorter than 3 decades for power fits or 1.5
        decades for logarithmic ones, or a model name is unknown.
    """
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(values))
    if np.any(t <= 1) or len(t) < 4:
        raise ValidationError("decay fits need at least four times t > 1")
    for m in models:
        if m not in DECAY_MODELS:
            raise ValidationError(f"unknown decay model {m!r}")
    decades = math.log10(t.max() / t.min())
    need = 3.0 if any(m.startswith("power") for m in models) and all(m.startswith("power") for m in models) else 1.5
    if decades < need - 1e-9:
        raise ValidationError(f"t-range spans {decades:.2f} decades, need {need}")
    order = np.argsort(t)
    t, y = t[order], y[order]
    envelope = False
    if np.any(np.diff(y) > 1e-12 * y[:-1]):
        y = upper_envelope(t, y)
        envelope = True
    lt, ly = np.log(t), np.log(y)
    fits = {m: _fit_one(m, lt, ly) for m in models}
    residuals = {m: math.sqrt(r / len(t)) for m, (_, r) in fits.items()}
    best = min(residuals, key=residuals.get)
    params = fits[best][0]
    exponent = stderr = None
    diag = {"rms_log_residual": residuals[best], "t_decades": decades, "samples": int(len(t))}
    if best in ("power", "power_log"):
        exponent = float(params["p"])
        A = np.stack([np.ones_like(lt), -lt], axis=1)
        dof = max(len(t) - 2, 1)
        cov = np.linalg.inv(A.T @ A) * (fits[best][1] / dof)
        stderr = float(math.sqrt(max(cov[1, 1], 0.0)))
    else:
        L = lt
        q = params["q"]
        prod = y * L ** q
        last = L >= L.max() - math.log(10.0)
        diag["value_log_t_ratio"] = float(prod[last].max() / prod[last].min())
    if prediction is not None:
        if prediction.model == "power":
            ok = best in ("power", "power_log") and exponent is not None and abs(exponent - prediction.exponent) <= tolerance
            bound = exponent is not None and exponent >= prediction.exponent - tolerance
        else:
            ok = best.startswith("inverse_log")
            bound = ok or (exponent is not None and exponent > 0)
        diag["matches_prediction"] = bool(ok)
        # predicted rates are upper bounds on |I(t)|; faster decay is consistent
        diag["consistent_with_bound"] = bool(bound)
    return DecayFitReport(t, y, best, exponent, stderr, params, residuals,
                          prediction or DecayPrediction("unknown", None), envelope, diag)


def decay_times(prediction: DecayPrediction, count: int = 40) -> np.ndarray:
    """Default t-window: [1e2, 1e5] for power laws, [1e2, 1e6] for logarithmic decay."""
    hi = 1e5 if prediction.model == "power" else 1e6
    return np.geomspace(1e2, hi, count)


@dataclass
class DecayRun:
    """Everything produced by :func:`run_decay`."""

    table: PropagatorTable
    report: DecayFitReport
    classification: str
    normalization_defect: float
    unitarity_excess: float


def run_decay(problem: RadialProblem, grid: RadialGrid, f: TestFunction, cutoff: str = "smooth",
              count: int = 40, engine: SpectralEngine | None = None,
              table: PropagatorTable | None = None, threads: int = 1,
              part: str = "low") -> DecayRun:
    """Density table, propagator samples and rate fit for one fixture.

    The fit uses the low-energy piece int e^{itu} chi rho du by default; the
    high-energy piece decays faster than any power for a smooth cutoff and
    its size relative to the low piece is reported in the diagnostics.
    """
    if part not in ("low", "total"):
        raise ValidationError(f"unknown propagator part {part!r}")
    engine = engine or SpectralEngine(problem, grid, f)
    table = table or propagator_table(engine, cutoff, threads=threads)
    cls = engine.state.classification
    pred = predicted_decay(problem.dimension, cls)
    t = decay_times(pred, count)
    low = table.element(t, "low")
    high = table.element(t, "high")
    vals = low if part == "low" else low + high
    rep = fit_decay(t, vals, admissible_models(pred), pred)
    rep.diagnostics["fitted_part"] = part
    rep.diagnostics["high_to_low_max"] = float(np.max(np.abs(high) / np.abs(low)))
    bound = math.sqrt(table.norm_f * table.norm_g)
    check_t = np.concatenate([[0.0], np.geomspace(1e-2, 1e6, 50)])
    excess = float(max(0.0, np.max(np.abs(table.element(check_t))) - bound) / bound)
    return DecayRun(table, rep, cls, table.normalization_defect(), excess)


__all__ = [
    "TestFunction",
    "FreeResolventMap",
    "SpectralEngine",
    "spectral_density",
    "richardson_limit",
    "smooth_cutoff",
    "spherical_moments",
    "FilonRule",
    "PropagatorTable",
    "propagator_table",
    "propagator_element",
    "DecayPrediction",
    "predicted_decay",
    "admissible_models",
    "DecayFitReport",
    "fit_decay",
    "upper_envelope",
    "decay_times",
    "DecayRun",
    "run_decay",
]
