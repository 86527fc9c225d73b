"""Construction of potentials with a prescribed threshold type.

Couplings are written alpha = s * a(theta) with a fixed sign pattern per bump.
For fixed direction a the operator T0(s) = U + s * A with A = |a W|^(1/2)
G0 |a W|^(1/2) >= 0 has eigenvalues that never decrease in s, so the first
zero crossing of the largest initially negative eigenvalue of a channel block
is a bracketed scalar root. That crossing is the first one in the chosen
channel, so no negative eigenvalue exists there. For classes that also need a
vanishing moment, an outer root in theta nulls <v, phi> of the kernel vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import kernels as K
from .discretization import Bump, Discretization, RadialGrid, RadialProblem, build_grid
from .errors import TuningFailure, ValidationError
from .ladder import DEFAULT_TAU, LadderState, admissible_classes, build_ladder


@dataclass(frozen=True)
class TuneTarget:
    """Tuning request.

    Parameters
    ----------
    dimension : int
    classification : str
        One of the admissible classes for the dimension.
    bumps : tuple of Bump
    signs : tuple of int
        Sign of each coupling (-1 attractive, +1 repulsive).
    channel : int
        Angular channel whose block is made singular.
    channels : tuple of int
        Channels carried by the resulting problem.
    angle_bracket : tuple of float
        Search interval for the mixing angle of two-bump targets.
    """

    dimension: int
    classification: str
    bumps: tuple
    signs: tuple
    channel: int = 0
    channels: tuple = (0,)
    angle_bracket: tuple = (0.02, math.pi / 2 - 0.02)

    def __post_init__(self):
        if self.classification not in admissible_classes(self.dimension):
            raise ValidationError(
                f"class {self.classification} is not admissible in d={self.dimension}"
            )
        if len(self.bumps) != len(self.signs):
            raise ValidationError("one sign per bump is required")
        if self.channel not in self.channels:
            raise ValidationError("tuned channel must be carried by the problem")

    @property
    def objective_depth(self) -> int:
        """Number of stacked objectives (singular value, then moments)."""
        if self.classification == "Regular":
            return 0
        if self.classification == "Eigenvalue" and self.dimension <= 8 and self.channel == 0:
            return 2
        return 1


@dataclass
class TuneResult:
    """Tuned problem, its ladder and the objective trace."""

    problem: RadialProblem
    grid: RadialGrid
    ladder: LadderState
    scale: float
    angle: float | None
    sigma_min: float
    moment: float
    trace: list = field(default_factory=list)

    def diagnostics(self) -> dict:
        return {
            "scale": self.scale,
            "angle": self.angle,
            "sigma_min_T0": self.sigma_min,
            "relative_moment": self.moment,
            "classification": self.ladder.classification,
            "evaluations": len(self.trace),
        }


class _Channel:
    """Unit-coupling pieces of T0 in one channel block."""

    def __init__(self, d, bumps, grid, channel):
        probe = RadialProblem(d, bumps, tuple(1.0 for _ in bumps), channels=(channel,))
        disc = Discretization(probe, grid)
        self.r = disc.r
        self.w = disc.w
        self.profiles = np.array([b(disc.r) for b in bumps])
        mom = disc.moments(channel)
        self.kbar = (K.biharm_series(d)[0][0] * mom.pow_avg[0]).real
        self.channel = channel

    def pieces(self, a):
        V = a @ self.profiles
        U = np.sign(V)
        vh = np.sqrt(np.abs(V) * self.w)
        A = vh[:, None] * self.kbar * vh[None, :]
        return U, vh, A

    def crossing_eigenvalue(self, a, s):
        U, _, A = self.pieces(a)
        n_neg = int(np.sum(U < 0))
        ev = np.linalg.eigvalsh(np.diag(U) + s * A)
        return ev[n_neg - 1]

    def kernel_vector(self, a, s):
        U, vh, A = self.pieces(a)
        ev, vec = np.linalg.eigh(np.diag(U) + s * A)
        k = int(np.argmin(np.abs(ev)))
        phi = vec[:, k]
        # sign convention: positive overlap with the attractive part of v
        ref = np.sum(phi * vh * (U < 0)) or np.sum(phi * vh)
        if ref < 0:
            phi = -phi
        return phi, np.sqrt(s) * vh, ev[k]


def _first_crossing(ch: _Channel, a, trace, s_max=1e8):
    U, _, _ = ch.pieces(a)
    if not np.any(U < 0):
        raise TuningFailure("no attractive component: T0 cannot become singular", trace)
    lo, hi = 0.0, 1.0
    f_hi = ch.crossing_eigenvalue(a, hi)
    trace.append({"s": hi, "eigenvalue": float(f_hi)})
    while f_hi < 0:
        lo, hi = hi, hi * 2.0
        if hi > s_max:
            raise TuningFailure("no zero crossing of T0 in the search box", trace)
        f_hi = ch.crossing_eigenvalue(a, hi)
        trace.append({"s": hi, "eigenvalue": float(f_hi)})
    s = optimize.brentq(lambda x: ch.crossing_eigenvalue(a, x), lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    return s


def _direction(signs, theta):
    if len(signs) == 1:
        return np.array([float(signs[0])])
    return np.array([signs[0] * math.cos(theta), signs[1] * math.sin(theta)])


def tune(target: TuneTarget, N: int = 160, tau: float = DEFAULT_TAU,
         scan: int = 24, scheme: str = "gauss") -> TuneResult:
    """Find couplings realising the target class and verify with the ladder.

    Raises
    ------
    TuningFailure
        When no crossing or no sign change of the moment is found; the
        exception carries the objective trace.
    """
    d = target.dimension
    bumps = tuple(target.bumps)
    R = max(b.support[1] for b in bumps)
    breaks = sorted({x for b in bumps if b.kind == "poly" for x in b.support if x > 0})
    grid = build_grid(N, R, scheme, d, breaks)
    trace: list = []
    depth = target.objective_depth

    if depth == 0:
        a = np.array([0.1 * s for s in target.signs])
        problem = RadialProblem(d, bumps, tuple(a), channels=target.channels)
        ladder = build_ladder(problem, grid, tau)
        return TuneResult(problem, grid, ladder, 0.1, None, float(ladder.stages[0].null.singular_values[0]), 0.0, trace)

    ch = _Channel(d, bumps, grid, target.channel)
    theta = None
    if depth == 1:
        theta = 0.0 if len(bumps) == 1 else 0.5 * sum(target.angle_bracket)
        a = _direction(target.signs, theta)
        s = _first_crossing(ch, a, trace)
    else:
        if len(bumps) < 2:
            raise TuningFailure("moment nulling needs at least two bumps", trace)

        def moment(th):
            a = _direction(target.signs, th)
            s = _first_crossing(ch, a, trace)
            phi, vh, _ = ch.kernel_vector(a, s)
            m = float(vh @ phi / np.linalg.norm(vh))
            trace.append({"theta": th, "s": s, "moment": m})
            return m

        grid_th = np.linspace(*target.angle_bracket, scan)
        vals = []
        bracket = None
        for th in grid_th:
            try:
                vals.append(moment(th))
            except TuningFailure:
                vals.append(np.nan)
            if len(vals) > 1 and np.isfinite(vals[-1]) and np.isfinite(vals[-2]) and vals[-1] * vals[-2] < 0:
                bracket = (grid_th[len(vals) - 2], grid_th[len(vals) - 1])
                break
        if bracket is None:
            raise TuningFailure("moment does not change sign over the angle bracket", trace)
        theta = optimize.brentq(moment, *bracket, xtol=1e-15, rtol=1e-15, maxiter=200)
        a = _direction(target.signs, theta)
        s = _first_crossing(ch, a, trace)

    alpha = s * a
    problem = RadialProblem(d, bumps, tuple(float(x) for x in alpha), channels=target.channels)
    ladder = build_ladder(problem, grid, tau)
    phi, vh, ev = ch.kernel_vector(a, s)
    if target.channel == 0:
        mom = float(vh @ phi / np.linalg.norm(vh))
    else:
        rv = ch.r * vh
        mom = float(rv @ phi / np.linalg.norm(rv))
    result = TuneResult(problem, grid, ladder, float(s), theta, float(abs(ev)), mom, trace)
    if ladder.classification != target.classification:
        raise TuningFailure(
            f"tuned problem classifies as {ladder.classification}, wanted {target.classification}",
            trace,
        )
    return result


def crossing_couplings(d: int, bump: Bump, grid: RadialGrid, channel: int = 0, count: int = 3):
    """Couplings 1/e_k at which -s W becomes critical, from the eigenvalues of W^(1/2) G0 W^(1/2)."""
    ch = _Channel(d, (bump,), grid, channel)
    _, vh, A = ch.pieces(np.array([-1.0]))
    ev = np.sort(np.linalg.eigvalsh(A))[::-1]
    return 1.0 / ev[:count]


# fixture presets: bump layouts known to bracket each target
def preset_target(d: int, classification: str) -> TuneTarget:
    """Default bump layout and channel for a (dimension, class) pair."""
    inner = Bump("poly", 1.0, 0.8)
    outer = Bump("poly", 2.6, 0.8)
    if classification == "Regular":
        return TuneTarget(d, "Regular", (inner,), (-1,), 0, _channels(d))
    if classification == "FirstKind" or (classification == "Eigenvalue" and d >= 9):
        return TuneTarget(d, classification, (inner,), (-1,), 0, _channels(d))
    if classification == "SecondKind":
        return TuneTarget(d, classification, (inner,), (-1,), 1, (0, 1))
    return TuneTarget(d, "Eigenvalue", (inner, outer), (-1, 1), 0, _channels(d))


def _channels(d):
    return (0, 1) if d in (5, 6) else (0,)


__all__ = [
    "TuneTarget",
    "TuneResult",
    "tune",
    "crossing_couplings",
    "preset_target",
]
