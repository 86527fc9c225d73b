"""Radial grids, bump potentials and Nystrom assembly of vGv-type operators.

Discrete vectors
----------------
An operator is represented on the active quadrature nodes of every angular
channel it carries. A function phi in channel l is stored as
``x_i = sqrt(w_i) phi(r_i)`` where ``w_i`` already contains the sphere area
and ``r_i^(d-1)``. With ``vhat_i = v(r_i) sqrt(w_i)`` the kernel operator
v K v becomes the complex-symmetric matrix ``vhat_i Kbar_l(r_i, r_j) vhat_j``
with ``Kbar_l`` the channel average of the kernel. Channels are stacked as
diagonal blocks in the order of ``problem.channels``.
"""

from __future__ import annotations

import hashlib
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels as K
from ._backend import power_log_moments
from .errors import DomainError, SingularityError, ValidationError

# minimal decay exponent of V per dimension
BETA_REQUIREMENT = {5: 11.0, 6: 14.0, 7: 9.0, 8: 8.0}


def beta_requirement(d: int) -> float:
    """Decay exponent that V must exceed in dimension d."""
    return BETA_REQUIREMENT.get(d, float(d))


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialGrid:
    """Radial quadrature nodes with weights carrying sigma_{d-1} r^{d-1}.

    Attributes
    ----------
    nodes : ndarray
        Strictly increasing radii in (0, R].
    weights : ndarray
        Volume weights, so that sum(weights * f(nodes)) integrates a radial f
        over the ball of radius R.
    outer_radius : float
    scheme : str
    dimension : int
    panels : tuple
        Panel edges used to build the rule.
    """

    nodes: np.ndarray
    weights: np.ndarray
    outer_radius: float
    scheme: str
    dimension: int
    panels: tuple = ()

    def __post_init__(self):
        if np.any(np.diff(self.nodes) <= 0) or self.nodes[0] <= 0:
            raise DomainError("grid nodes must be positive and strictly increasing")
        if np.any(self.weights <= 0):
            raise DomainError("grid weights must be positive")

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def key(self) -> str:
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(str(self.dimension).encode())
        return h.hexdigest()

    def scaled(self, factor: float) -> "RadialGrid":
        """Same nodes with weights multiplied by a constant."""
        return RadialGrid(self.nodes, self.weights * factor, self.outer_radius,
                          self.scheme, self.dimension, self.panels)


def _panel_edges(R, scheme, breakpoints, n_panels, grading):
    cuts = sorted({0.0, float(R)} | {float(b) for b in breakpoints if 0 < b < R})
    intervals = list(zip(cuts[:-1], cuts[1:]))
    lengths = np.array([b - a for a, b in intervals])
    counts = np.maximum(1, np.round(lengths / lengths.sum() * n_panels).astype(int))
    edges = [0.0]
    for (a, b), c in zip(intervals, counts):
        if scheme == "graded":
            # geometric refinement toward both ends of every interval
            half = max(1, c // 2)
            left = [a + (b - a) * 0.5 * grading ** (half - k) for k in range(half)]
            right = [b - (b - a) * 0.5 * grading ** (k + 1) for k in range(half - 1, -1, -1)]
            pts = [a] + [x for x in left if x > a] + [x for x in right if x < b] + [b]
            pts = sorted(set(pts))
            edges.extend(pts[1:])
        else:
            edges.extend(list(np.linspace(a, b, c + 1)[1:]))
    return np.array(edges)


def build_grid(N: int, R: float, scheme: str = "gauss", dimension: int = 5,
               breakpoints: Sequence[float] = (), order: int = 12,
               grading: float = 0.35) -> RadialGrid:
    """Composite Gauss-Legendre grid on (0, R].

    Parameters
    ----------
    N : int
        Total number of nodes, at least 2.
    R : float
        Outer radius.
    scheme : {"gauss", "graded"}
        ``gauss`` uses uniform panels inside each interval between breakpoints;
        ``graded`` refines geometrically toward 0 and toward every breakpoint.
    dimension : int
        Space dimension, enters the weights through sigma_{d-1} r^{d-1}.
    breakpoints : sequence of float
        Radii where the potential is not smooth (bump edges).
    order : int
        Target number of nodes per panel.
    """
    if not isinstance(N, (int, np.integer)) or N < 2:
        raise DomainError("N must be an integer >= 2")
    if not R > 0:
        raise DomainError("R must be positive")
    if scheme not in ("gauss", "graded"):
        raise DomainError(f"unknown grid scheme {scheme!r}")
    n_panels = max(1, int(round(N / order)))
    edges = _panel_edges(R, scheme, breakpoints, n_panels, grading)
    n_panels = len(edges) - 1
    if n_panels > N // 2:
        raise DomainError("too few nodes for the requested breakpoints")
    per = np.full(n_panels, N // n_panels)
    per[: N - per.sum()] += 1
    sigma = K.sphere_area(dimension)
    nodes, weights = [], []
    for (a, b), q in zip(zip(edges[:-1], edges[1:]), per):
        x, w = np.polynomial.legendre.leggauss(int(q))
        r = 0.5 * (b - a) * x + 0.5 * (a + b)
        nodes.append(r)
        weights.append(0.5 * (b - a) * w * sigma * r ** (dimension - 1))
    return RadialGrid(np.concatenate(nodes), np.concatenate(weights), float(R),
                      scheme, dimension, tuple(edges))


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bump:
    """Radial bump profile.

    ``poly`` is the compact bump (1 - ((r - c)/h)^2)^4 on |r - c| < h;
    ``gaussian`` is exp(-((r - c)/h)^2).
    """

    kind: str
    center: float
    width: float

    def __post_init__(self):
        if self.kind not in ("poly", "gaussian"):
            raise ValidationError(f"unknown bump kind {self.kind!r}")
        if not self.width > 0 or self.center < 0:
            raise ValidationError("bump needs width > 0 and center >= 0")

    def __call__(self, r):
        x = (np.asarray(r, dtype=float) - self.center) / self.width
        if self.kind == "poly":
            return np.where(np.abs(x) < 1, (1 - x * x) ** 4, 0.0)
        return np.exp(-x * x)

    @property
    def support(self) -> tuple:
        if self.kind == "poly":
            return (max(0.0, self.center - self.width), self.center + self.width)
        return (0.0, self.center + 6.5 * self.width)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": self.center, "width": self.width}


@dataclass(frozen=True)
class RadialProblem:
    """Radial potential V = sum_k alpha_k W_k in dimension d.

    Parameters
    ----------
    dimension : int
    bumps : tuple of Bump
    alpha : tuple of float
        Couplings multiplying the bumps.
    beta : float
        Declared decay exponent of V; compact and Gaussian profiles decay
        faster than any power.
    weight_exponent : float
        Exponent s of the weighted L^2_s norms used in reports.
    channels : tuple of int
        Angular channels carried by the discrete operators.
    """

    dimension: int
    bumps: tuple
    alpha: tuple
    beta: float = math.inf
    weight_exponent: float = 0.0
    channels: tuple = (0,)

    def __post_init__(self):
        d = self.dimension
        if not isinstance(d, (int, np.integer)) or d < 5:
            raise DomainError("dimension must be an integer >= 5")
        object.__setattr__(self, "bumps", tuple(self.bumps))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.bumps) != len(self.alpha):
            raise ValidationError("one coupling per bump is required")
        if len(self.bumps) == 0:
            raise ValidationError("at least one bump is required")
        if not self.beta > beta_requirement(d):
            raise ValidationError(
                f"decay exponent {self.beta} must exceed {beta_requirement(d)} in d={d}"
            )
        if not self.channels or any(c < 0 for c in self.channels) or len(set(self.channels)) != len(self.channels):
            raise ValidationError("channels must be distinct non-negative integers")

    def V(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        for a, b in zip(self.alpha, self.bumps):
            out = out + a * b(r)
        return out

    def v(self, r):
        return np.sqrt(np.abs(self.V(r)))

    def U(self, r):
        return np.sign(self.V(r))

    @property
    def support_radius(self) -> float:
        return max(b.support[1] for b in self.bumps)

    @property
    def breakpoints(self) -> tuple:
        pts = set()
        for b in self.bumps:
            if b.kind == "poly":
                pts.update(x for x in b.support if x > 0)
        return tuple(sorted(pts))

    def with_alpha(self, alpha) -> "RadialProblem":
        return RadialProblem(self.dimension, self.bumps, tuple(alpha), self.beta,
                             self.weight_exponent, self.channels)

    def with_channels(self, channels) -> "RadialProblem":
        return RadialProblem(self.dimension, self.bumps, self.alpha, self.beta,
                             self.weight_exponent, tuple(channels))

    def to_dict(self) -> dict:
        return {
            "dimension": int(self.dimension),
            "bumps": [b.to_dict() for b in self.bumps],
            "alpha": [float(a) for a in self.alpha],
            "beta": None if math.isinf(self.beta) else float(self.beta),
            "weight_exponent": float(self.weight_exponent),
            "channels": list(self.channels),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RadialProblem":
        beta = data.get("beta")
        return cls(
            int(data["dimension"]),
            tuple(Bump(**b) for b in data["bumps"]),
            tuple(data["alpha"]),
            math.inf if beta is None else float(beta),
            float(data.get("weight_exponent", 0.0)),
            tuple(data.get("channels", (0,))),
        )


def default_grid(problem: RadialProblem, N: int = 160, scheme: str = "gauss") -> RadialGrid:
    """Grid covering the support of the potential with breakpoints at bump edges."""
    return build_grid(N, problem.support_radius, scheme, problem.dimension, problem.breakpoints)


# ---------------------------------------------------------------------------
# operator matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense complex-symmetric matrix with a provenance tag."""

    entries: np.ndarray
    provenance: str = ""
    symmetric: bool = True

    @property
    def shape(self):
        return self.entries.shape

    def symmetry_defect(self) -> float:
        a = self.entries
        scale = max(np.max(np.abs(a)), 1e-300)
        return float(np.max(np.abs(a - a.T)) / scale)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        a = self.entries
        scale = max(np.max(np.abs(a)), 1e-300)
        return bool(np.max(np.abs(a - a.conj().T)) <= tol * scale)


# ---------------------------------------------------------------------------
# angular moments cache
# ---------------------------------------------------------------------------

_MOMENT_CACHE: OrderedDict = OrderedDict()
# least recently used entries are evicted above this many bytes
MOMENT_CACHE_BYTES = 256 * 2 ** 20
_MOMENT_LOCK = threading.Lock()
THREADS = 1


def set_threads(n: int) -> None:
    """Number of OpenMP threads used by the compiled moment kernel."""
    global THREADS
    THREADS = max(1, int(n))


def _array_key(a):
    return hashlib.sha1(np.ascontiguousarray(a, dtype=float).tobytes()).hexdigest()


@dataclass(frozen=True)
class ChannelMoments:
    """Channel averages of D^(n+4-d) and D^(n+4-d) log D on a set of radius pairs.

    ``pow_avg[n]`` and ``log_avg[n]`` have shape (len(rows), len(cols)).
    """

    dimension: int
    channel: int
    rows: np.ndarray
    cols: np.ndarray
    pow_avg: np.ndarray
    log_avg: np.ndarray

    @property
    def nterms(self) -> int:
        return self.pow_avg.shape[0]


def channel_moments(d: int, l: int, rows, cols, nterms: int = K.SERIES_ORDER + 1) -> ChannelMoments:
    """Cached channel moments for all pairs (rows[i], cols[j])."""
    rows = np.ascontiguousarray(rows, dtype=float)
    cols = np.ascontiguousarray(cols, dtype=float)
    key = (d, l, nterms, _array_key(rows), _array_key(cols))
    with _MOMENT_LOCK:
        hit = _MOMENT_CACHE.get(key)
        if hit is not None:
            _MOMENT_CACHE.move_to_end(key)
    if hit is not None:
        return hit
    same = rows.shape == cols.shape and np.array_equal(rows, cols)
    if same:
        iu = np.triu_indices(len(rows))
        a, b = rows[iu[0]], cols[iu[1]]
    else:
        R, S = np.meshgrid(rows, cols, indexing="ij")
        a, b = R.ravel(), S.ravel()
    rho = np.ascontiguousarray(np.minimum(a, b))
    big = np.ascontiguousarray(np.maximum(a, b))
    if np.any(big <= 0):
        raise SingularityError("both radii vanish")
    theta, wt = K.angular_rule(d, l)
    with_log = d % 2 == 0
    pw, lg = power_log_moments(rho, big, theta, wt, float(4 - d), nterms, with_log, THREADS)
    shape = (nterms, len(rows), len(cols))
    if same:
        P = np.zeros(shape)
        L = np.zeros(shape)
        P[:, iu[0], iu[1]] = pw
        P[:, iu[1], iu[0]] = pw
        L[:, iu[0], iu[1]] = lg
        L[:, iu[1], iu[0]] = lg
    else:
        P = pw.reshape(shape)
        L = lg.reshape(shape)
    out = ChannelMoments(d, l, rows, cols, P, L)
    with _MOMENT_LOCK:
        _MOMENT_CACHE[key] = out
        total = sum(m.pow_avg.nbytes + m.log_avg.nbytes for m in _MOMENT_CACHE.values())
        while total > MOMENT_CACHE_BYTES and len(_MOMENT_CACHE) > 1:
            _, old = _MOMENT_CACHE.popitem(last=False)
            total -= old.pow_avg.nbytes + old.log_avg.nbytes
    return out


def clear_moment_cache() -> None:
    with _MOMENT_LOCK:
        _MOMENT_CACHE.clear()


def averaged_powerlog(mom: ChannelMoments, kernel: K.PowerLogKernel) -> np.ndarray:
    """Channel average of a power-log kernel assembled from cached moments."""
    d = mom.dimension
    out = np.zeros(mom.pow_avg.shape[1:], dtype=complex)
    for c, p, q in kernel.terms:
        n = p - (4 - d)
        if abs(n - round(n)) > 1e-12 or not 0 <= round(n) < mom.nterms or q > 1:
            R, S = np.meshgrid(mom.rows, mom.cols, indexing="ij")
            single = K.PowerLogKernel(((c, p, q),))
            out = out + K.radial_average(d, single, R, S, mom.channel)
            continue
        n = int(round(n))
        out = out + c * (mom.log_avg[n] if q else mom.pow_avg[n])
    return out


def averaged_resolvent_delta(mom: ChannelMoments, p: K.SpectralPoint) -> np.ndarray:
    """Channel average of R0(mu^4) minus its mu = 0 value, without cancellation
    on the series pairs."""
    d = mom.dimension
    alpha, _ = K.biharm_series(d)
    mu = p.mu
    R, S = np.meshgrid(mom.rows, mom.cols, indexing="ij")
    rho = np.minimum(R, S)
    big = np.maximum(R, S)
    small = abs(mu) * (rho + big) < K.SERIES_SWITCH
    out = np.empty(rho.shape, dtype=complex)
    if np.any(small):
        out[small] = K.series_channel_delta(d, mu, mom.pow_avg[:, small], mom.log_avg[:, small])
    if np.any(~small):
        closed = K.biharm_channel_green(d, mom.channel, mu, rho[~small], big[~small])
        out[~small] = closed - alpha[0] * mom.pow_avg[0][~small]
    if p.boundary_side == "lower":
        out = np.conj(out)
    return out


def averaged_resolvent(mom: ChannelMoments, p: K.SpectralPoint | None) -> np.ndarray:
    """Channel average of the biharmonic resolvent kernel.

    ``p = None`` gives the mu = 0 kernel. Pairs with |mu| (r + s) below the
    series switch use the cached moments; the rest use the Bessel closed form.
    """
    d = mom.dimension
    alpha, _ = K.biharm_series(d)
    static = alpha[0] * mom.pow_avg[0]
    if p is None or abs(p.mu) < K.MU_FLOOR:
        return static.astype(complex)
    mu = p.mu
    R, S = np.meshgrid(mom.rows, mom.cols, indexing="ij")
    rho = np.minimum(R, S)
    big = np.maximum(R, S)
    small = abs(mu) * (rho + big) < K.SERIES_SWITCH
    out = np.empty(rho.shape, dtype=complex)
    if np.any(small):
        delta = K.series_channel_delta(d, mu, mom.pow_avg[:, small], mom.log_avg[:, small])
        out[small] = static[small] + delta
    if np.any(~small):
        out[~small] = K.biharm_channel_green(d, mom.channel, mu, rho[~small], big[~small])
    if p.boundary_side == "lower":
        out = np.conj(out)
    return out


# ---------------------------------------------------------------------------
# discretised problem
# ---------------------------------------------------------------------------


@dataclass
class Discretization:
    """Active-set discretisation of a radial problem on a grid.

    Attributes
    ----------
    r, w : ndarray
        Active nodes and their volume weights.
    V, v, U, vhat : ndarray
        Potential, |V|^(1/2), sign V and v sqrt(w) on the active nodes.
    channels : tuple of int
    """

    problem: RadialProblem
    grid: RadialGrid
    r: np.ndarray = field(init=False)
    w: np.ndarray = field(init=False)
    V: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    U: np.ndarray = field(init=False)
    vhat: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.grid.dimension != self.problem.dimension:
            raise ValidationError("grid and problem dimensions differ")
        Vn = self.problem.V(self.grid.nodes)
        active = Vn != 0
        self.r = self.grid.nodes[active]
        self.w = self.grid.weights[active]
        self.V = Vn[active]
        self.v = np.sqrt(np.abs(self.V))
        self.U = np.sign(self.V)
        self.vhat = self.v * np.sqrt(self.w)

    @property
    def d(self) -> int:
        return self.problem.dimension

    @property
    def channels(self) -> tuple:
        return self.problem.channels

    @property
    def n_active(self) -> int:
        return len(self.r)

    @property
    def size(self) -> int:
        return self.n_active * len(self.channels)

    @property
    def key(self) -> str:
        h = hashlib.sha1()
        h.update(self.grid.key.encode())
        h.update(repr(self.problem.to_dict()).encode())
        return h.hexdigest()

    def block(self, ch_index: int) -> slice:
        n = self.n_active
        return slice(ch_index * n, (ch_index + 1) * n)

    def stacked(self, per_channel: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate(per_channel)

    def _require_active(self):
        if self.n_active == 0:
            raise DomainError("potential vanishes on every node")

    def moments(self, l: int) -> ChannelMoments:
        self._require_active()
        return channel_moments(self.d, l, self.r, self.r)

    def block_diag(self, blocks, provenance: str) -> OperatorMatrix:
        n = self.n_active
        dtype = complex if any(np.iscomplexobj(b) for b in blocks) else float
        out = np.zeros((self.size, self.size), dtype=dtype)
        for k, b in enumerate(blocks):
            out[k * n:(k + 1) * n, k * n:(k + 1) * n] = b
        return OperatorMatrix(out, provenance)

    def sandwich(self, kbar: np.ndarray) -> np.ndarray:
        return self.vhat[:, None] * kbar * self.vhat[None, :]

    def vGv(self, kernel: K.PowerLogKernel, provenance: str = "vGv") -> OperatorMatrix:
        """v K v for a power-log kernel, one block per channel."""
        blocks = []
        for l in self.channels:
            kb = averaged_powerlog(self.moments(l), kernel)
            if kernel.is_real:
                kb = kb.real
            blocks.append(self.sandwich(kb))
        return self.block_diag(blocks, provenance)

    def vR0v(self, p: K.SpectralPoint | None) -> OperatorMatrix:
        blocks = [self.sandwich(averaged_resolvent(self.moments(l), p)) for l in self.channels]
        return self.block_diag(blocks, f"vR0v(mu={None if p is None else p.mu})")

    def M_minus_T0(self, p: K.SpectralPoint) -> np.ndarray:
        """M(mu) - T0 computed directly from the small-mu series where it applies."""
        self._require_active()
        blocks = [self.sandwich(averaged_resolvent_delta(self.moments(l), p)) for l in self.channels]
        return self.block_diag(blocks, "M-T0").entries.astype(complex)

    def U_matrix(self) -> OperatorMatrix:
        self._require_active()
        return OperatorMatrix(np.diag(np.tile(self.U, len(self.channels))), "U")

    def T0(self) -> OperatorMatrix:
        self._require_active()
        g0 = K.expansion_coefficients(self.d).g0
        A = self.vGv(g0, "vG0v").entries.real
        return OperatorMatrix(np.diag(np.tile(self.U, len(self.channels))) + A, "T0")

    def radial_vector(self, values: np.ndarray, channel: int = 0) -> np.ndarray:
        """Embed a per-node vector into the stacked channel space."""
        out = np.zeros(self.size, dtype=np.result_type(values, float))
        k = self.channels.index(channel)
        out[self.block(k)] = values
        return out

    def P(self) -> OperatorMatrix:
        self._require_active()
        if 0 not in self.channels:
            raise DomainError("the projection P lives in the radial channel")
        vv = self.radial_vector(self.vhat, 0)
        nrm = vv @ vv
        if nrm <= 0:
            raise DomainError("degenerate projection: v vanishes")
        return OperatorMatrix(np.outer(vv, vv) / nrm, "P")

    def moment_vector(self, power: float, channel: int) -> np.ndarray:
        """Discrete functional phi -> integral of r^power v phi in a channel."""
        if channel not in self.channels:
            return np.zeros(self.size)
        return self.radial_vector(self.r ** power * self.vhat, channel)

    @property
    def L1_norm(self) -> float:
        return float(np.sum(self.w * np.abs(self.V)))

    def M(self, p: K.SpectralPoint) -> OperatorMatrix:
        """M(mu) = U + v R0(mu^4) v."""
        self._require_active()
        A = self.vR0v(p).entries
        return OperatorMatrix(np.diag(np.tile(self.U, len(self.channels))).astype(complex) + A,
                              f"M(mu={p.mu})")

    def kernel_to_points(self, l: int, points, p: K.SpectralPoint | None) -> np.ndarray:
        """Channel resolvent average between arbitrary radii and the active nodes."""
        # the mu = 0 kernel needs only the leading moment
        nterms = 1 if p is None else K.SERIES_ORDER + 1
        mom = channel_moments(self.d, l, np.asarray(points, dtype=float), self.r, nterms)
        return averaged_resolvent(mom, p)


def assemble_vGv(problem: RadialProblem, grid: RadialGrid, kernel) -> OperatorMatrix:
    """Nystrom matrix v_i sqrt(w_i) Kbar(r_i, r_j) sqrt(w_j) v_j.

    ``kernel`` is a PowerLogKernel or a SpectralPoint (resolvent kernel).
    """
    disc = Discretization(problem, grid)
    if isinstance(kernel, K.SpectralPoint):
        return disc.vR0v(kernel)
    return disc.vGv(kernel)


def assemble_P(problem: RadialProblem, grid: RadialGrid) -> OperatorMatrix:
    """Orthogonal projection onto v in the radial channel."""
    return Discretization(problem, grid).P()


def assemble_U(problem: RadialProblem, grid: RadialGrid) -> OperatorMatrix:
    """Diagonal sign matrix on the active set."""
    return Discretization(problem, grid).U_matrix()


__all__ = [
    "RadialGrid",
    "RadialProblem",
    "Bump",
    "OperatorMatrix",
    "Discretization",
    "ChannelMoments",
    "build_grid",
    "default_grid",
    "beta_requirement",
    "channel_moments",
    "averaged_powerlog",
    "averaged_resolvent",
    "averaged_resolvent_delta",
    "assemble_vGv",
    "assemble_P",
    "assemble_U",
    "set_threads",
    "clear_moment_cache",
]
