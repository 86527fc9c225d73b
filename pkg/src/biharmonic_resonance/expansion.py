"""M(mu) = U + v R0(mu^4) v, its structured inverse and fitted expansions.

The inverse follows the resonance ladder. At rung j the current operator A_j
(acting on ran S_j) is split as lambda_j (L_j + R_j) with L_j the ladder
operator and lambda_j a scalar. When L_j has a kernel S_{j+1}, the
Jensen-Nenciu step

    (L + R)^{-1} = (L + R + S)^{-1} + (L + R + S)^{-1} S Ttilde^{-1} S (L + R + S)^{-1},
    Ttilde = sum_k (-1)^k S R ((L + S)^{-1} R)^k S,

reduces the problem to Ttilde on ran S_{j+1}, which is the next rung's A.
The Neumann series computes the small operator Ttilde without the
cancellation of S - S (L + R + S)^{-1} S.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels as K
from .discretization import Discretization, OperatorMatrix, RadialGrid, RadialProblem
from .errors import ContractionError, NotInvertibleError, ValidationError
from .ladder import LadderState, build_ladder

NEUMANN_TOL = 1e-15
NEUMANN_MAX = 200


# ---------------------------------------------------------------------------
# inversion formulas
# ---------------------------------------------------------------------------


def _entries(A):
    return A.entries if isinstance(A, OperatorMatrix) else np.asarray(A)


def _range_basis(S, tol=1e-10):
    S = np.asarray(S)
    if S.size == 0:
        return np.zeros((S.shape[0], 0))
    w, V = np.linalg.eigh(0.5 * (S + S.conj().T))
    return V[:, w > 0.5]


def feshbach_invert(A, S, tol: float = 1e-13) -> np.ndarray:
    """Inverse of A through the Schur complement on ran S.

    A^{-1} = (A + S)^{-1} + (A + S)^{-1} S B^{-1} S (A + S)^{-1},
    B = S - S (A + S)^{-1} S, with B^{-1} taken on ran S.

    Raises
    ------
    NotInvertibleError
        If A + S or B restricted to ran S is numerically singular.
    """
    A = _entries(A)
    S = _entries(S)
    try:
        G = np.linalg.inv(A + S)
    except np.linalg.LinAlgError as exc:
        raise NotInvertibleError("A + S is singular") from exc
    Q = _range_basis(S)
    if Q.shape[1] == 0:
        return G
    B = Q.conj().T @ (S - S @ G @ S) @ Q
    sv = np.linalg.svd(B, compute_uv=False)
    if sv[-1] <= tol * max(1.0, sv[0]):
        raise NotInvertibleError(f"Schur complement singular on ran S (sigma_min={sv[-1]:.3e})")
    Binv = Q @ np.linalg.solve(B, Q.conj().T)
    return G + G @ S @ Binv @ S @ G


def neumann_ttilde(L, R, S, W=None):
    """sum_k (-1)^k W^T R ((L + S)^{-1} R)^k W, the reduced Schur complement.

    Parameters
    ----------
    L : ndarray
        Unperturbed operator with L S = 0.
    R : ndarray
        Perturbation.
    S : ndarray
        Orthogonal projection onto ker L.
    W : ndarray, optional
        Orthonormal basis of ran S; the result is expressed in it.

    Raises
    ------
    ContractionError
        If the series does not contract.
    """
    if W is None:
        W = _range_basis(S)
    DL = np.linalg.inv(L + S)
    X = DL @ R
    WR = W.conj().T @ R
    term = W
    total = WR @ term
    prev = np.linalg.norm(total)
    for k in range(1, NEUMANN_MAX + 1):
        term = -(X @ term)
        contrib = WR @ term
        size = np.linalg.norm(contrib)
        total = total + contrib
        if size <= NEUMANN_TOL * max(np.linalg.norm(total), 1e-300):
            return total
        if k > 3 and size > prev:
            raise ContractionError("Neumann series is not contracting; reduce |mu|")
        prev = size
    raise ContractionError("Neumann series did not converge in the allowed number of terms")


def jensen_nenciu_invert(T0, T1_of_z: Callable, z: complex, S, inner: Callable | None = None):
    """Inverse of T(z) = T0 + z T1(z) around an isolated zero of T0.

    Parameters
    ----------
    T0 : ndarray
        Operator whose kernel is ran S.
    T1_of_z : callable
        Returns T1(z).
    z : complex
    S : ndarray
        Orthogonal (Riesz) projection onto ker T0.
    inner : callable, optional
        Inverts the reduced operator Ttilde (given in a basis of ran S);
        defaults to a dense solve.

    Returns
    -------
    ndarray
        T(z)^{-1} = (T + S)^{-1} + z^{-1} (T + S)^{-1} S Ttilde(z)^{-1} S (T + S)^{-1}
        with Ttilde(z) = z^{-1}(S - S (T + S)^{-1} S) from its Neumann series.
    """
    T0 = _entries(T0)
    S = _entries(S)
    T1 = _entries(T1_of_z(z))
    R = z * T1
    G = np.linalg.inv(T0 + R + S)
    W = _range_basis(S)
    if W.shape[1] == 0:
        return G
    Tt = neumann_ttilde(T0, R, S, W) / z
    Tinv = inner(Tt) if inner is not None else np.linalg.inv(Tt)
    return G + G @ W @ (Tinv / z) @ W.conj().T @ G


# ---------------------------------------------------------------------------
# M(mu) and its inverse
# ---------------------------------------------------------------------------


def assemble_M(problem: RadialProblem, grid: RadialGrid, p: K.SpectralPoint,
               disc: Discretization | None = None) -> OperatorMatrix:
    """M(mu) = U + v R0(mu^4) v on the discretised channels."""
    disc = disc or Discretization(problem, grid)
    return disc.M(p)


@dataclass
class _Rung:
    basis: np.ndarray      # columns spanning ran S_j (full coordinates)
    L: np.ndarray          # ladder operator in basis coordinates
    W: np.ndarray          # ran S_{j+1} in basis coordinates


def _rungs(state: LadderState) -> list:
    rungs = []
    for j, st in enumerate(state.stages):
        Q = st.basis
        L = Q.conj().T @ st.operator @ Q
        Qn = st.null.basis
        W = Q.conj().T @ Qn
        rungs.append(_Rung(Q, 0.5 * (L + L.conj().T), W))
    return rungs


@dataclass
class InversionTrace:
    """Scales lambda_j and Neumann sizes of one structured inversion."""

    scales: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def _invert_level(rungs, j, A, R, trace):
    rung = rungs[j]
    k_next = rung.W.shape[1]
    if k_next == 0:
        return np.linalg.inv(A)
    k = A.shape[0]
    if k_next == k:
        # the rung operator vanishes on this subspace; pass A down unchanged
        trace.skipped.append(j)
        Wn = rung.W
        sub = _invert_level(rungs, j + 1, Wn.conj().T @ A @ Wn, None, trace)
        return Wn @ sub @ Wn.conj().T
    L = rung.L
    if R is None:
        lam = np.vdot(L, A) / np.vdot(L, L)
        Rh = A / lam - L
    else:
        lam = 1.0
        Rh = R
    trace.scales.append(complex(lam))
    Wn = rung.W
    S = Wn @ Wn.conj().T
    G = np.linalg.inv(L + Rh + S)
    Tt = neumann_ttilde(L, Rh, S, Wn)
    sub = _invert_level(rungs, j + 1, Tt, None, trace)
    return (G + G @ Wn @ sub @ Wn.conj().T @ G) / lam


def invert_M(state: LadderState, problem: RadialProblem, grid: RadialGrid, p: K.SpectralPoint,
             disc: Discretization | None = None, return_trace: bool = False):
    """M(mu)^{-1} by recursing the Jensen-Nenciu step through the ladder.

    Raises
    ------
    ContractionError
        If a Neumann stage does not contract (reduce |mu|).
    """
    disc = disc or Discretization(problem, grid)
    T0 = state.stages[0].operator
    E = disc.M_minus_T0(p)
    A = T0.astype(complex) + E
    trace = InversionTrace()
    rungs = _rungs(state)
    # rung 0 works in full coordinates with the exact perturbation E
    inv = _invert_level(rungs, 0, A, E, trace)
    out = OperatorMatrix(inv, f"M^-1(mu={p.mu})")
    return (out, trace) if return_trace else out


def direct_invert_M(disc: Discretization, p: K.SpectralPoint) -> np.ndarray:
    return np.linalg.inv(disc.M(p).entries)


def leading_coefficient(state: LadderState, disc: Discretization) -> tuple | None:
    """Ladder prediction of the leading coefficient of M(mu)^{-1}.

    Returns ``(label, variants)`` where ``variants`` maps a description of
    the constant to the predicted matrix multiplying the basis term
    ``label``; None for cases without a closed leading term.

    d = 5 first kind: both readings of the constant, (a mu)^{-1} and a/mu,
    with a = a1 ||V||_1, times S1 (S1 P S1)^{-1} S1.
    d >= 9 eigenvalue: S1 (S1 vG1v S1)^{-1} S1 on mu^-4.
    """
    d = disc.d
    cls = state.classification
    wanted = (d == 5 and cls == "FirstKind") or (d >= 9 and cls == "Eigenvalue")
    if not wanted or len(state.stages) < 2:
        return None
    st = state.stages[1]
    Q = st.basis
    core = Q @ np.linalg.inv(Q.conj().T @ st.operator @ Q) @ Q.conj().T
    if d == 5:
        a = K.expansion_coefficients(5).coefficients["a1"] * disc.L1_norm
        return "mu^-1", {"(a mu)^-1": core / a, "a/mu": a * core}
    return "mu^-4", {"mu^-4": core}


def leading_inverse_prediction(state: LadderState, disc: Discretization, p: K.SpectralPoint):
    """Leading term of M(mu)^{-1} at one point, or None (see :func:`leading_coefficient`)."""
    lead = leading_coefficient(state, disc)
    if lead is None:
        return None
    label, variants = lead
    coef = next(iter(variants.values()))
    power = -1 if label == "mu^-1" else -4
    return coef * p.mu ** power


def compare_leading(report, state: LadderState, disc: Discretization) -> dict:
    """Relative Frobenius distance of the fitted leading coefficient to each predicted variant.

    Stores the result in ``report.comparisons`` and returns it.
    """
    lead = leading_coefficient(state, disc)
    if lead is None:
        return {}
    label, variants = lead
    fitted = report.coefficient(label)
    out = {name: float(np.linalg.norm(fitted - m) / np.linalg.norm(m)) for name, m in variants.items()}
    best = min(out, key=out.get)
    report.comparisons.update({"term": label, "relative_error": out, "matching_variant": best})
    return report.comparisons


def rv_weighted(problem: RadialProblem, grid: RadialGrid, p: K.SpectralPoint,
                state: LadderState | None = None, disc: Discretization | None = None) -> OperatorMatrix:
    """w R_V(mu^4) w = U - M(mu)^{-1}."""
    disc = disc or Discretization(problem, grid)
    state = state or build_ladder(problem, grid, disc=disc)
    inv = invert_M(state, problem, grid, p, disc).entries
    U = np.diag(np.tile(disc.U, len(disc.channels))).astype(complex)
    return OperatorMatrix(U - inv, f"wRVw(mu={p.mu})")


def resolvent_element(disc: Discretization, Minv: np.ndarray, b: np.ndarray, free: complex) -> complex:
    """<f, R_V f> = <f, R0 f> - b^T M^{-1} b with b = vhat (R0 f) on the nodes."""
    return free - b @ (Minv @ b)


# ---------------------------------------------------------------------------
# expansion models and fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasisTerm:
    """Scalar basis function of mu with a label."""

    label: str
    func: Callable

    def __call__(self, mu):
        return self.func(mu)


@dataclass(frozen=True)
class ExpansionModel:
    """Basis of scalar functions of mu for an expansion of M(mu)^{-1}.

    The first omitted term is ``mu^next_order * ell(mu)^next_log_power`` with
    ell = c(mu) in d = 6, d(mu) in d = 8 and log(mu) otherwise.
    """

    dimension: int
    classification: str
    terms: tuple
    next_order: float
    next_log_power: int = 0

    @property
    def labels(self) -> list:
        return [t.label for t in self.terms]

    def design(self, mus) -> np.ndarray:
        mus = np.asarray(mus, dtype=complex)
        return np.stack([t(mus) for t in self.terms], axis=1)

    def log_family(self, mus) -> np.ndarray:
        mus = np.asarray(mus, dtype=complex)
        if self.dimension in (6, 8):
            return K.expansion_coefficients(self.dimension).c_of_mu(mus)
        return np.log(mus)

    def omitted(self, mus) -> np.ndarray:
        """The first omitted basis function evaluated at mus."""
        mus = np.asarray(mus, dtype=complex)
        return mus ** self.next_order * self.log_family(mus) ** self.next_log_power


def _pw(k):
    return lambda mu: mu ** k


def _pwlog(k):
    return lambda mu: mu ** k * np.log(mu)


def _pwc(k, j, table):
    return lambda mu: mu ** k * table.c_of_mu(mu) ** (-j)


def _regular_next_order(d: int, present: set) -> int:
    """Lowest order of the Neumann series of T0^{-1} not in ``present``.

    The orders of M(mu) - T0 are the indices of the nonzero free series
    coefficients; products of them give the orders of M(mu)^{-1}.
    """
    alpha, beta = K.biharm_series(d)
    gens = [n for n in range(1, len(alpha)) if alpha[n] != 0 or beta[n] != 0]
    reach = {0}
    for _ in range(4):
        reach |= {a + g for a in reach for g in gens if a + g < 4 * d}
    return min(n for n in reach if n not in present)


def expansion_model(d: int, classification: str, pure_power: bool = False) -> ExpansionModel:
    """Term list of the low-energy expansion of M(mu)^{-1} for (d, class).

    With ``pure_power`` the log-carrying terms of d = 6, 8 are replaced by the
    pure powers of the same order; used for model comparison. The omitted
    order is the one the data resolve, which in some cases is lower than the
    remainder claimed alongside the term list (see the notes on d = 6 second
    kind, d = 8 first kind and d = 9 eigenvalue).
    """
    T = BasisTerm
    table = K.expansion_coefficients(d) if d in (6, 8) else None
    if d == 5:
        terms = {
            "Regular": ([T("1", _pw(0)), T("mu", _pw(1)), T("mu^2", _pw(2))], 3, 0),
            "FirstKind": ([T("mu^-1", _pw(-1)), T("1", _pw(0)), T("mu", _pw(1))], 2, 0),
            "SecondKind": ([T("mu^-3", _pw(-3)), T("mu^-2", _pw(-2)), T("mu^-1", _pw(-1)), T("1", _pw(0))], 1, 0),
            "Eigenvalue": ([T("mu^-4", _pw(-4)), T("mu^-3", _pw(-3)), T("mu^-2", _pw(-2)),
                            T("mu^-1", _pw(-1)), T("1", _pw(0))], 1, 0),
        }
    elif d == 6 and pure_power:
        terms = {
            "Regular": ([T("1", _pw(0)), T("mu^2", _pw(2)), T("mu^4", _pw(4))], 4, 1),
            "FirstKind": ([T("mu^-2", _pw(-2)), T("1", _pw(0))], 0, 1),
            "SecondKind": ([T("mu^-4", _pw(-4)), T("mu^-2", _pw(-2)), T("1", _pw(0))], -4, -1),
            "Eigenvalue": ([T("mu^-4", _pw(-4)), T("mu^-2", _pw(-2)), T("1", _pw(0))], -4, -1),
        }
    elif d == 6:
        terms = {
            "Regular": ([T("1", _pw(0)), T("mu^2", _pw(2)), T("mu^4 log mu", _pwlog(4)), T("mu^4", _pw(4))], 6, 0),
            "FirstKind": ([T("mu^-2", _pw(-2)), T("log mu", _pwlog(0)), T("1", _pw(0))], 2, 2),
            "SecondKind": ([T("mu^-4 c^-1", _pwc(-4, 1, table)), T("mu^-4 c^-2", _pwc(-4, 2, table)),
                            T("mu^-2", _pw(-2)), T("mu^-2 c^-1", _pwc(-2, 1, table)), T("1", _pw(0))], -4, -3),
            "Eigenvalue": ([T("mu^-4", _pw(-4)), T("mu^-4 c^-1", _pwc(-4, 1, table)), T("mu^-2", _pw(-2)),
                            T("c^2", _pwc(0, -2, table)), T("c", _pwc(0, -1, table)), T("1", _pw(0))], -4, -2),
        }
    elif d == 7:
        terms = {
            "Regular": ([T("1", _pw(0)), T("mu^3", _pw(3)), T("mu^4", _pw(4))], 5, 0),
            "FirstKind": ([T("mu^-3", _pw(-3)), T("mu^-2", _pw(-2)), T("mu^-1", _pw(-1)), T("1", _pw(0))], 1, 0),
            "Eigenvalue": ([T("mu^-4", _pw(-4)), T("mu^-3", _pw(-3)), T("mu^-2", _pw(-2)),
                            T("mu^-1", _pw(-1)), T("1", _pw(0))], 1, 0),
        }
    elif d == 8 and pure_power:
        terms = {
            "Regular": ([T("1", _pw(0)), T("mu^4", _pw(4))], 4, 1),
            "FirstKind": ([T("mu^-4", _pw(-4)), T("mu^-2", _pw(-2)), T("1", _pw(0))], -4, -1),
            "Eigenvalue": ([T("mu^-4", _pw(-4)), T("mu^-2", _pw(-2)), T("1", _pw(0))], -4, -1),
        }
    elif d == 8:
        terms = {
            "Regular": ([T("1", _pw(0)), T("mu^4 log mu", _pwlog(4)), T("mu^4", _pw(4))], 6, 0),
            "FirstKind": ([T("mu^-4 d^-1", _pwc(-4, 1, table)), T("mu^-4 d^-2", _pwc(-4, 2, table)),
                           T("mu^-2 d^-2", _pwc(-2, 2, table)), T("1", _pw(0))], -4, -3),
            "Eigenvalue": ([T("mu^-4", _pw(-4)), T("mu^-4 d^-1", _pwc(-4, 1, table)), T("mu^-2", _pw(-2)),
                            T("mu^-2 d^-1", _pwc(-2, 1, table)), T("1", _pw(0))], -4, -2),
        }
    else:
        # second order of (S1 vG1v S1 + c0 mu^(d-8) P)^{-1} gives mu^(2d-20)
        nxt = min(2 * d - 20, d - 8)
        reg_next = _regular_next_order(d, {0, 4, 5, d - 4})
        terms = {
            "Regular": ([T("1", _pw(0)), T("mu^4", _pw(4)), T("mu^5", _pw(5)), T(f"mu^{d - 4}", _pw(d - 4))], reg_next,
                        int(K.biharm_series(d)[1][reg_next] != 0)),
            "Eigenvalue": ([T("mu^-4", _pw(-4)), T("mu^-3", _pw(-3)), T(f"mu^{d - 12}", _pw(d - 12)),
                            T("1", _pw(0))], nxt, 0),
        }
        if d == 9:
            # mu^(d-4) and mu^(d-12) coincide with mu^5 and mu^-3
            terms["Regular"] = ([T("1", _pw(0)), T("mu^4", _pw(4)), T("mu^5", _pw(5))], reg_next, 0)
            terms["Eigenvalue"] = ([T("mu^-4", _pw(-4)), T("mu^-3", _pw(-3)), T("1", _pw(0))], nxt, 0)
    if classification not in terms:
        raise ValidationError(f"class {classification} not admissible in d={d}")
    t, nxt, klog = terms[classification]
    return ExpansionModel(d, classification, tuple(t), nxt, klog)


@dataclass
class OrderLaw:
    """Sliding-window residual of an expansion model.

    Attributes
    ----------
    centers : ndarray
        Geometric mean of |mu| per window.
    residual : ndarray
        Least-squares residual of the model on the window.
    floor : ndarray
        Residual of the model augmented by the next two orders; an estimate
        of the noise left once the truncation error is removed.
    reference : ndarray
        Residual of the predicted omitted term alone under the same fit.
    resolved : ndarray of bool
        Windows where the truncation error dominates the floor.
    slope : float
        Log-corrected order, nan when fewer than three windows are resolved.
    """

    centers: np.ndarray
    residual: np.ndarray
    floor: np.ndarray
    reference: np.ndarray
    resolved: np.ndarray
    slope: float

    @property
    def resolved_decades(self) -> float:
        c = self.centers[self.resolved]
        return float(np.log10(c.max() / c.min())) if c.size > 1 else 0.0


def _ls_residual(X, Y):
    col = np.linalg.norm(X, axis=0)
    coef, *_ = np.linalg.lstsq(X / col, Y, rcond=None)
    return float(np.linalg.norm(Y - (X / col) @ coef))


def order_law(mus, matrices, model: ExpansionModel, window: int | None = None,
              resolve_factor: float = 30.0) -> OrderLaw:
    """Order of the first omitted term from local fits on sliding windows.

    On a window around mu_c the model terms are removed exactly by least
    squares; what is left of a pure power mu^K scales as mu_c^K. Log factors
    are corrected by dividing out the residual that the predicted omitted
    term itself leaves under the same fit.
    """
    mus = np.asarray(mus, dtype=complex)
    Y = np.stack([_entries(m) for m in matrices]).reshape(len(mus), -1)
    m = window or max(2 * len(model.terms) + 4, 10)
    if len(mus) < m:
        raise ValidationError(f"order law needs at least {m} samples")
    rows = []
    for i in range(len(mus) - m + 1):
        z = mus[i:i + m]
        X = model.design(z)
        f0 = model.omitted(z)
        extra = np.stack([f0, z * f0], axis=1)
        rows.append((
            float(np.exp(np.mean(np.log(np.abs(z))))),
            _ls_residual(X, Y[i:i + m]),
            _ls_residual(np.hstack([X, extra]), Y[i:i + m]),
            _ls_residual(X, f0[:, None]),
        ))
    c, r, fl, ref = (np.array(x) for x in zip(*rows))
    ok = r > resolve_factor * fl
    slope = math.nan
    if ok.sum() >= 3:
        y = np.log(r[ok]) - np.log(ref[ok]) + model.next_order * np.log(c[ok])
        slope = float(np.polyfit(np.log(c[ok]), y, 1)[0])
    return OrderLaw(c, r, fl, ref, ok, slope)


@dataclass
class ExpansionReport:
    """Fitted matrix coefficients of an expansion model.

    Attributes
    ----------
    labels : list of str
    coefficients : list of ndarray
    norms : list of float
        Frobenius norms of the fitted coefficients.
    residual_norms : ndarray
        Relative Frobenius residual per sample of the global fit.
    residual_slope : float
        Order of the first omitted term measured by :func:`order_law`; nan
        when the truncation error is below the rounding floor everywhere.
    predicted_order : float
    gram_condition : float
        Condition number of the column-scaled basis matrix.
    comparisons : dict
        Relative agreement with ladder-predicted leading operators.
    warnings : list of str
    """

    labels: list
    coefficients: list
    norms: list
    mus: np.ndarray
    residual_norms: np.ndarray
    residual_slope: float
    predicted_order: float
    gram_condition: float
    symmetry_defect: float
    resolved_decades: float = 0.0
    comparisons: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def coefficient(self, label: str) -> np.ndarray:
        return self.coefficients[self.labels.index(label)]

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "coefficient_norms": [float(x) for x in self.norms],
            "residual_slope": self.residual_slope,
            "predicted_order": self.predicted_order,
            "resolved_decades": self.resolved_decades,
            "gram_condition": self.gram_condition,
            "symmetry_defect": self.symmetry_defect,
            "comparisons": self.comparisons,
            "warnings": self.warnings,
        }


def fit_expansion(samples: Sequence, model: ExpansionModel, cond_warn: float = 1e12) -> ExpansionReport:
    """Entrywise complex least squares of sampled matrices in the model basis.

    Rows are weighted by the inverse sample norm so that every mu counts and
    columns are scaled to unit norm. The order of the omitted term comes from
    :func:`order_law` when enough samples are available.

    Parameters
    ----------
    samples : sequence of (SpectralPoint or complex, ndarray or OperatorMatrix)
    model : ExpansionModel

    Raises
    ------
    ValidationError
        With fewer than twice as many samples as basis terms.
    """
    nterm = len(model.terms)
    if len(samples) < 2 * nterm:
        raise ValidationError("need at least twice as many samples as basis terms")
    samples = sorted(samples, key=lambda s: abs(s[0].mu if isinstance(s[0], K.SpectralPoint) else s[0]))
    mus = np.array([s[0].mu if isinstance(s[0], K.SpectralPoint) else complex(s[0]) for s in samples])
    mats = np.stack([_entries(s[1]) for s in samples])
    shape = mats.shape[1:]
    Y = mats.reshape(len(samples), -1)
    X = model.design(mus)
    col = np.linalg.norm(X, axis=0)
    Xs = X / col
    sv = np.linalg.svd(Xs, compute_uv=False)
    cond = float(sv[0] / sv[-1])
    rw = 1.0 / np.maximum(np.linalg.norm(Y, axis=1), 1e-300)
    coef, *_ = np.linalg.lstsq(Xs * rw[:, None], Y * rw[:, None], rcond=None)
    coef = coef / col[:, None]
    resid = np.linalg.norm(Y - X @ coef, axis=1) / np.linalg.norm(Y, axis=1)
    warns = []
    slope, decades = math.nan, 0.0
    if len(samples) >= max(2 * nterm + 4, 10):
        law = order_law(mus, mats, model)
        slope, decades = law.slope, law.resolved_decades
        if math.isnan(slope):
            warns.append("truncation error below the rounding floor: order not resolved")
    coeffs = [c.reshape(shape) for c in coef]
    sym = max(float(np.max(np.abs(c - c.T)) / max(np.max(np.abs(c)), 1e-300)) for c in coeffs) if len(shape) == 2 else 0.0
    if cond > cond_warn:
        warns.append(f"ill-conditioned basis: Gram condition {cond:.3e}")
    return ExpansionReport(model.labels, coeffs, [float(np.linalg.norm(c)) for c in coeffs], mus,
                           resid, slope, float(model.next_order), cond, sym, decades, {}, warns)


def sample_inverse(state: LadderState, disc: Discretization, mus: Sequence[float],
                   angle: float = math.pi / 8) -> list:
    """(SpectralPoint, M(mu)^{-1}) pairs along a ray."""
    out = []
    for m in mus:
        p = K.SpectralPoint.on_ray(float(m), angle)
        out.append((p, invert_M(state, disc.problem, disc.grid, p, disc).entries))
    return out


def blowup_exponent(mus, matrices, mu_max: float = 1e-2) -> float:
    """Slope of log ||M^{-1}|| against log |mu| over |mu| <= mu_max.

    The cap keeps the fit in the range where the leading term dominates; over
    [1e-4, 1e-1] a first-kind fixture still carries a few percent of the
    next order.
    """
    mus = np.abs(np.asarray(mus, dtype=complex))
    keep = mus <= mu_max * (1 + 1e-12)
    if keep.sum() < 2:
        raise ValidationError("need at least two samples below mu_max")
    norms = np.array([np.linalg.norm(_entries(m)) for m in matrices])
    return float(np.polyfit(np.log(mus[keep]), np.log(norms[keep]), 1)[0])


__all__ = [
    "feshbach_invert",
    "jensen_nenciu_invert",
    "neumann_ttilde",
    "assemble_M",
    "invert_M",
    "direct_invert_M",
    "leading_inverse_prediction",
    "leading_coefficient",
    "compare_leading",
    "rv_weighted",
    "resolvent_element",
    "BasisTerm",
    "ExpansionModel",
    "expansion_model",
    "ExpansionReport",
    "OrderLaw",
    "order_law",
    "fit_expansion",
    "sample_inverse",
    "blowup_exponent",
]
