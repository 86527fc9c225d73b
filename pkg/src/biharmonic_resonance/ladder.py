"""Threshold classification through the chain T0 -> S1 -> T1 -> ... -> T3.

Each stage restricts a kernel operator to the numerical kernel of the
previous stage. The first invertible stage fixes the class:

===========  ====================================  =====================
dimension    stages                                 classes
===========  ====================================  =====================
5, 6         T0, S1 P S1, S2 vG2v S2, S3 vG3v S3    all four
7, 8         T0, S1 P S1, S2 vG2v S2                Regular, FirstKind,
                                                    Eigenvalue
>= 9         T0, S1 vG1v S1                         Regular, Eigenvalue
===========  ====================================  =====================

With several angular channels the operators are block diagonal and the same
recursion runs on the direct sum. P lives in the radial channel, so in the
dipole channel the first-stage operator vanishes and G2 decides between the
second kind and an eigenvalue.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import kernels as K
from .discretization import Discretization, OperatorMatrix, RadialGrid, RadialProblem
from .errors import DomainError, InvariantViolation

CLASSES = ("Regular", "FirstKind", "SecondKind", "Eigenvalue")
DEFAULT_TAU = 1e-8


def admissible_classes(d: int) -> tuple:
    if d in (5, 6):
        return CLASSES
    if d in (7, 8):
        return ("Regular", "FirstKind", "Eigenvalue")
    return ("Regular", "Eigenvalue")


@dataclass(frozen=True)
class NullspaceResult:
    """Orthogonal projection onto the numerical kernel of a symmetric matrix.

    Attributes
    ----------
    projection : ndarray
        Full-size projection matrix.
    basis : ndarray
        Orthonormal columns spanning the kernel.
    rank : int
    singular_values : ndarray
        Singular values of the restricted operator, ascending.
    threshold : float
        Absolute cutoff used.
    gap_warning : bool
        True when a singular value lies within a factor 10 of the cutoff.
    """

    projection: np.ndarray
    basis: np.ndarray
    rank: int
    singular_values: np.ndarray
    threshold: float
    gap_warning: bool


def nullspace_projection(T, tau: float = DEFAULT_TAU, basis: np.ndarray | None = None,
                         scale: float | None = None) -> NullspaceResult:
    """Projection onto span of singular vectors with sigma < tau * scale.

    Parameters
    ----------
    T : OperatorMatrix or ndarray
        Real-symmetric (or Hermitian) matrix.
    tau : float
        Relative threshold.
    basis : ndarray, optional
        Orthonormal columns of the subspace T acts on; defaults to the whole space.
    scale : float, optional
        Reference size for the threshold; defaults to the largest singular value
        of the restricted operator.
    """
    A = T.entries if isinstance(T, OperatorMatrix) else np.asarray(T)
    n = A.shape[0]
    Q = np.eye(n) if basis is None else basis
    k = Q.shape[1]
    if k == 0:
        return NullspaceResult(np.zeros((n, n)), Q, 0, np.zeros(0), 0.0, False)
    B = Q.conj().T @ A @ Q
    B = 0.5 * (B + B.conj().T)
    evals, evecs = np.linalg.eigh(B)
    sv = np.abs(evals)
    order = np.argsort(sv)
    sv = sv[order]
    evecs = evecs[:, order]
    ref = scale if scale is not None else (sv[-1] if sv[-1] > 0 else 1.0)
    thr = tau * ref
    small = sv < thr
    near = np.any((sv > thr / 10) & (sv < thr * 10))
    null = Q @ evecs[:, small]
    if np.isrealobj(A):
        null = null.real
    proj = null @ null.conj().T
    if near:
        warnings.warn("singular values straddle the nullspace threshold", RuntimeWarning)
    return NullspaceResult(proj, null, int(small.sum()), sv, float(thr), bool(near))


@dataclass
class LadderStage:
    """One rung of the ladder: operator, kernel projection and restricted inverse."""

    name: str
    operator: np.ndarray
    basis: np.ndarray
    null: NullspaceResult
    D: np.ndarray

    @property
    def rank(self) -> int:
        return self.null.rank


@dataclass
class LadderState:
    """Result of the ladder recursion.

    Attributes
    ----------
    stages : list of LadderStage
        T0, T1, ... with S_{j+1} = stages[j].null.projection.
    classification : str
    tau : float
    dimension : int
    flagged : bool
        True when any stage reported a near-threshold singular value.
    """

    stages: list
    classification: str
    tau: float
    dimension: int
    flagged: bool = False
    notes: list = field(default_factory=list)

    @property
    def T(self) -> list:
        return [s.operator for s in self.stages]

    @property
    def S(self) -> list:
        """Projections S1, S2, ... (full-size matrices)."""
        return [s.null.projection for s in self.stages]

    @property
    def D(self) -> list:
        return [s.D for s in self.stages]

    def projection(self, j: int) -> np.ndarray:
        """S_j for j >= 1 (zero matrix past the computed depth)."""
        n = self.stages[0].operator.shape[0]
        if j - 1 < len(self.stages):
            return self.stages[j - 1].null.projection
        return np.zeros((n, n))

    def basis(self, j: int) -> np.ndarray:
        n = self.stages[0].operator.shape[0]
        if j - 1 < len(self.stages):
            return self.stages[j - 1].null.basis
        return np.zeros((n, 0))

    def to_dict(self, max_sv: int = 6) -> dict:
        out = {
            "classification": self.classification,
            "tau": self.tau,
            "dimension": self.dimension,
            "flagged": self.flagged,
            "stages": [],
            "notes": list(self.notes),
        }
        for s in self.stages:
            out["stages"].append({
                "name": s.name,
                "rank": s.rank,
                "threshold": s.null.threshold,
                "smallest_singular_values": [float(x) for x in s.null.singular_values[:max_sv]],
                "gap_warning": s.null.gap_warning,
            })
        return out


def _restricted_inverse(T: np.ndarray, Q: np.ndarray, S_next: np.ndarray) -> np.ndarray:
    """(T + S_next)^{-1} on ran Q, extended by zero."""
    B = Q.conj().T @ (T + S_next) @ Q
    return Q @ np.linalg.solve(B, Q.conj().T)


def ladder_operators(disc: Discretization) -> dict:
    """Kernel operators used at each rung for the problem's dimension."""
    d = disc.d
    table = K.expansion_coefficients(d)
    ops = {"T0": disc.T0().entries}
    if d >= 9:
        ops["G1"] = disc.vGv(table.g1, "vG1v").entries.real
        return ops
    ops["P"] = disc.P().entries if 0 in disc.channels else np.zeros_like(ops["T0"])
    ops["G2"] = disc.vGv(table.g2, "vG2v").entries.real
    if d in (5, 6):
        ops["G3"] = disc.vGv(table.g3, "vG3v").entries.real
    return ops


def build_ladder(problem: RadialProblem, grid: RadialGrid, tau: float = DEFAULT_TAU,
                 disc: Discretization | None = None) -> LadderState:
    """Run the ladder recursion and classify the threshold.

    Raises
    ------
    InvariantViolation
        If the last rung (T3 in d = 5, 6; T2 in d = 7, 8; T1 in d >= 9) is
        numerically singular.
    """
    disc = disc or Discretization(problem, grid)
    d = problem.dimension
    ops = ladder_operators(disc)
    n = disc.size
    if d >= 9:
        sequence = [("T1", ops["G1"])]
        outcome = ["Eigenvalue"]
    elif d in (7, 8):
        sequence = [("T1", ops["P"]), ("T2", ops["G2"])]
        outcome = ["FirstKind", "Eigenvalue"]
    else:
        sequence = [("T1", ops["P"]), ("T2", ops["G2"]), ("T3", ops["G3"])]
        outcome = ["FirstKind", "SecondKind", "Eigenvalue"]

    T0 = ops["T0"]
    null0 = nullspace_projection(T0, tau)
    stages = [LadderStage("T0", T0, np.eye(n), null0, np.linalg.inv(T0 + null0.projection))]
    flagged = null0.gap_warning
    if null0.rank == 0:
        return LadderState(stages, "Regular", tau, d, flagged)

    for (name, kernel), cls in zip(sequence, outcome):
        prev = stages[-1].null
        Q = prev.basis
        S = prev.projection
        Tj = S @ kernel @ S
        # threshold relative to the size of the kernel operator itself
        scale = float(np.linalg.norm(kernel, 2)) or 1.0
        nj = nullspace_projection(Tj, tau, basis=Q, scale=scale)
        flagged = flagged or nj.gap_warning
        Dj = _restricted_inverse(Tj, Q, nj.projection)
        stages.append(LadderStage(name, Tj, Q, nj, Dj))
        if nj.rank == 0:
            return LadderState(stages, cls, tau, d, flagged)
    raise InvariantViolation(
        f"final ladder operator {sequence[-1][0]} is singular on its subspace; "
        "refine the grid"
    )


def projection_algebra_defect(state: LadderState) -> float:
    """Largest violation of S^2 = S, S^T = S, nesting and S_{j+1} D_j = S_{j+1}."""
    worst = 0.0
    S = [s.null.projection for s in state.stages]
    for j, Sj in enumerate(S):
        worst = max(worst, np.max(np.abs(Sj @ Sj - Sj)), np.max(np.abs(Sj - Sj.T)))
        if j > 0:
            worst = max(worst, np.max(np.abs(Sj @ S[j - 1] - Sj)))
        Dj = state.stages[j].D
        worst = max(worst, np.max(np.abs(Sj @ Dj - Sj)), np.max(np.abs(Dj @ Sj - Sj)))
    return float(worst)


# ---------------------------------------------------------------------------
# resonance function checks
# ---------------------------------------------------------------------------


@dataclass
class ResonanceFunctionReport:
    """Moments and decay of psi = -G0 v phi for each kernel vector of T0."""

    channel: list
    eigen_residual: list
    first_moment: list
    dipole_moment: list
    second_moment: list
    tail_exponent: list
    expected_tail: list
    L2_norm: list
    in_L2: list
    classification: str

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def weighted_space_member(d: int, tail_power: float, sigma: float) -> bool:
    """Whether r^tail_power at infinity lies in the weighted space W_sigma."""
    return d / 2.0 + tail_power < sigma


def resonance_functions(disc: Discretization, state: LadderState):
    """Split the kernel of T0 into channel components.

    Returns a list of (channel, phi) with phi restricted to that channel's block.
    """
    Q = state.stages[0].null.basis
    out = []
    n = disc.n_active
    for k, l in enumerate(disc.channels):
        blk = Q[k * n:(k + 1) * n, :]
        if Q.shape[1] == 0 or np.linalg.norm(blk) < 1e-8:
            continue
        # orthonormal basis of the channel component
        u, s, _ = np.linalg.svd(blk, full_matrices=False)
        for j in range(int(np.sum(s > 1e-8))):
            out.append((l, u[:, j]))
    return out


def psi_values(disc: Discretization, l: int, phi_block: np.ndarray, radii) -> np.ndarray:
    """psi(r) = -(G0 v phi)(r) at arbitrary radii for a channel-l vector."""
    kb = disc.kernel_to_points(l, radii, None).real
    return -kb @ (disc.vhat * phi_block)


def fit_tail(radii, values) -> float:
    """Slope of log|values| against log r."""
    return float(np.polyfit(np.log(radii), np.log(np.abs(values)), 1)[0])


def verify_resonance_function(state: LadderState, problem: RadialProblem, grid: RadialGrid,
                              disc: Discretization | None = None,
                              tail_range: tuple = (2.0, 100.0), n_tail: int = 24) -> ResonanceFunctionReport:
    """Moment and decay signatures of every resonance function.

    For each kernel vector phi of T0 (per channel) computes psi = -G0 v phi,
    the residual of psi + G0 V psi = 0 on the nodes, the moments
    <v, phi>, <r v, phi> (dipole channel) and <r^2 v, phi>, the fitted tail
    exponent over r in [tail_range[0] R, tail_range[1] R] and an L^2 norm
    estimate from the tail fit.
    """
    if state.classification == "Regular":
        raise DomainError("a regular threshold has no resonance functions")
    disc = disc or Discretization(problem, grid)
    d = problem.dimension
    Rs = problem.support_radius
    far = np.geomspace(tail_range[0] * Rs, tail_range[1] * Rs, n_tail)
    rep = ResonanceFunctionReport([], [], [], [], [], [], [], [], [], state.classification)
    for l, phi in resonance_functions(disc, state):
        psi_nodes = psi_values(disc, l, phi, disc.r)
        G0V = disc.kernel_to_points(l, disc.r, None).real * (disc.w * disc.V)[None, :]
        resid = psi_nodes + G0V @ psi_nodes
        rel = float(np.linalg.norm(resid) / max(np.linalg.norm(psi_nodes), 1e-300))
        first = float(disc.vhat @ phi)
        dip = float((disc.r * disc.vhat) @ phi)
        second = float((disc.r ** 2 * disc.vhat) @ phi)
        psi_far = psi_values(disc, l, phi, far)
        slope = fit_tail(far, psi_far)
        # L2 norm: interior quadrature plus tail integral of the fitted power law
        inner = np.linspace(1e-3 * Rs, far[0], 4000)
        psi_in = psi_values(disc, l, phi, inner)
        integrand = psi_in ** 2 * inner ** (d - 1)
        inner_norm = float(integrate.trapezoid(integrand, inner))
        q = 2 * slope + d - 1
        if q < -1:
            tail_norm = psi_far[0] ** 2 * far[0] ** (d - 1) * far[0] / (-(q + 1))
            l2 = math.sqrt(max(inner_norm + tail_norm, 0.0))
            in_l2 = True
        else:
            l2 = math.inf
            in_l2 = False
        rep.channel.append(l)
        rep.eigen_residual.append(rel)
        rep.first_moment.append(first if l == 0 else 0.0)
        rep.dipole_moment.append(dip if l == 1 else 0.0)
        rep.second_moment.append(second if l == 0 else 0.0)
        rep.tail_exponent.append(slope)
        if l == 0:
            relm = abs(first) / np.linalg.norm(disc.vhat)
        else:
            relm = abs(dip) / np.linalg.norm(disc.r * disc.vhat)
        rep.expected_tail.append(_expected_tail(d, l, relm))
        rep.L2_norm.append(l2)
        rep.in_L2.append(in_l2)
    return rep


def _expected_tail(d: int, l: int, relative_moment: float) -> float:
    """Tail power predicted by the channel and the vanishing of its moment."""
    if l == 0:
        return 4.0 - d if relative_moment > 1e-6 else 2.0 - d
    return 3.0 - d if relative_moment > 1e-6 else 1.0 - d


__all__ = [
    "CLASSES",
    "DEFAULT_TAU",
    "admissible_classes",
    "NullspaceResult",
    "nullspace_projection",
    "LadderStage",
    "LadderState",
    "build_ladder",
    "projection_algebra_defect",
    "ResonanceFunctionReport",
    "verify_resonance_function",
    "weighted_space_member",
    "psi_values",
]
