"""Convex solvers for the two problem shapes the beamforming algorithms need.

* :func:`solve_qcqp` maximizes a sum of weighted log(1 + concave quadratic)
  terms minus a convex quadratic, subject to convex quadratic constraints and
  per-entry modulus bounds, over a complex vector.  The problem is posed on
  the real lifting ``x = [Re a; Im a]`` and handed to Clarabel with one
  exponential cone per log term and second-order cones for the rest.
* :func:`solve_sdp` solves a linear program over Hermitian PSD matrices.
  cvxopt handles it in dual form, with one scalar unknown per trace
  constraint, and the PSD primal is read off the dual multiplier of the
  linear matrix inequality.  Clarabel's PSD cone on the primal is the
  fallback when cvxopt stalls.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERS = "max_iters"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolverOutcome:
    status: str
    solution: Optional[np.ndarray]
    objective: float
    iterations: int
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# --------------------------------------------------------------------------
# QCQP
# --------------------------------------------------------------------------

def _sq_norm(F, f, a):
    r = F @ a + f
    return float(np.real(np.vdot(r, r)))


@dataclass
class LogTerm:
    """``weight * log(1 + d + 2 Re(c^H a) - ||F a + f||^2)``."""

    F: np.ndarray
    f: np.ndarray
    c: np.ndarray
    d: float
    weight: float = 1.0

    def arg(self, a) -> float:
        return 1 + self.d + 2 * float(np.real(np.vdot(self.c, a))) - _sq_norm(self.F, self.f, a)


@dataclass
class QuadConstraint:
    """``||F a + f||^2 + 2 Re(c^H a) <= b``."""

    F: np.ndarray
    f: np.ndarray
    c: np.ndarray
    b: float

    def lhs(self, a) -> float:
        return _sq_norm(self.F, self.f, a) + 2 * float(np.real(np.vdot(self.c, a)))

    @classmethod
    def diagonal(cls, weights, b: float) -> "QuadConstraint":
        """``sum_q weights_q |a_q|^2 <= b`` for nonnegative weights."""
        w = np.asarray(weights, float)
        return cls(np.diag(np.sqrt(w)).astype(complex), np.zeros(w.size, complex),
                   np.zeros(w.size, complex), float(b))


@dataclass
class ConvexQuadraticProgram:
    """maximize  sum(log terms) - ||F0 a + f0||^2  over complex a.

    ``quad`` is ``(F0, f0)`` or None.  ``modulus_bounds`` gives |a_q| <= u_q
    (``np.inf`` for no bound).
    """

    n: int
    log_terms: list = field(default_factory=list)
    quad: Optional[tuple] = None
    constraints: list = field(default_factory=list)
    modulus_bounds: Optional[np.ndarray] = None

    def objective(self, a) -> float:
        a = np.asarray(a, dtype=complex)
        val = 0.0
        for t in self.log_terms:
            u = t.arg(a)
            val += t.weight * (np.log(u) if u > 0 else -np.inf)
        if self.quad is not None:
            val -= _sq_norm(*self.quad, a)
        return float(val)

    def max_violation(self, a) -> float:
        a = np.asarray(a, dtype=complex)
        viol = 0.0
        for c in self.constraints:
            viol = max(viol, (c.lhs(a) - c.b) / max(1.0, abs(c.b)))
        if self.modulus_bounds is not None:
            u = np.asarray(self.modulus_bounds, float)
            finite = np.isfinite(u)
            if finite.any():
                viol = max(viol, float(np.max(np.abs(a[finite]) - u[finite], initial=0.0)))
        return viol


def _lift(M: np.ndarray) -> np.ndarray:
    """Real L with L [Re a; Im a] = [Re(M a); Im(M a)]."""
    Mr, Mi = M.real, M.imag
    return np.block([[Mr, -Mi], [Mi, Mr]])


def _lift_vec(c: np.ndarray) -> np.ndarray:
    return np.concatenate([c.real, c.imag])


# Ruiz equilibration stalls on some well-scaled FP instances; the later
# entries are fallbacks tried only when the previous attempt did not solve.
_CLARABEL_ATTEMPTS = (
    {"equilibrate_enable": False},
    {},
    {"equilibrate_enable": False, "max_step_fraction": 0.8},
    {"static_regularization_constant": 1e-7},
    {"max_step_fraction": 0.9},
)


class _ConeBuilder:
    """Accumulates rows of ``A z + s = b, s in K`` for Clarabel."""

    def __init__(self, nz):
        self.nz = nz
        self.A = []
        self.b = []
        self.cones = []

    def add(self, cone, rows, rhs):
        # rows/rhs describe s = rhs + rows @ z
        self.A.append(-np.atleast_2d(rows))
        self.b.append(np.atleast_1d(rhs))
        self.cones.append(cone)

    def rotated(self, G, g, lin, const):
        """||G z + g||^2 <= lin @ z + const as a second-order cone."""
        import clarabel
        rows = np.vstack([lin, 2 * G, lin])
        rhs = np.concatenate([[const + 1], 2 * g, [const - 1]])
        self.add(clarabel.SecondOrderConeT(rows.shape[0]), rows, rhs)


def _variable_scale(prob: ConvexQuadraticProgram) -> np.ndarray:
    """Finite positive modulus bounds; a = scale * b keeps |b_q| <= 1."""
    if prob.modulus_bounds is None:
        return np.ones(prob.n)
    u = np.asarray(prob.modulus_bounds, float)
    return np.where(np.isfinite(u) & (u > 0), u, 1.0)


def _rescaled(prob: ConvexQuadraticProgram, s: np.ndarray) -> ConvexQuadraticProgram:
    terms = [LogTerm(t.F * s, t.f, s * t.c, t.d, t.weight) for t in prob.log_terms]
    quad = None if prob.quad is None else (prob.quad[0] * s, prob.quad[1])
    cons = [QuadConstraint(c.F * s, c.f, s * c.c, c.b) for c in prob.constraints]
    u = None if prob.modulus_bounds is None else np.asarray(prob.modulus_bounds, float) / s
    return ConvexQuadraticProgram(prob.n, terms, quad, cons, u)


def solve_qcqp(prob: ConvexQuadraticProgram, tol: float = 1e-9, max_iters: int = 200,
               x0=None) -> SolverOutcome:
    """Maximize the concave program ``prob`` with Clarabel.

    Each log term becomes an exponential cone on an epigraph variable and
    every squared norm a rotated second-order cone, on the real lifting
    ``x = [Re a; Im a]``.  ``x0`` is accepted for interface symmetry and
    ignored (the interior-point method does not warm start).
    """
    import clarabel
    from scipy import sparse

    scale = _variable_scale(prob)
    if np.any(scale != 1.0):
        out = solve_qcqp(_rescaled(prob, scale), tol, max_iters)
        if out.solution is not None:
            out.solution = out.solution * scale
            out.objective = prob.objective(out.solution)
            out.info["violation"] = prob.max_violation(out.solution)
        return out
    n = prob.n
    n2 = 2 * n
    K = len(prob.log_terms)
    has_quad = prob.quad is not None
    # z = [x, v_1..v_K, tau_1..tau_K, (tau_0)]
    nz = n2 + 2 * K + int(has_quad)
    cb = _ConeBuilder(nz)
    q = np.zeros(nz)

    def embed(mat):
        out = np.zeros((mat.shape[0], nz))
        out[:, :n2] = mat
        return out

    for k, t in enumerate(prob.log_terms):
        iv, it = n2 + k, n2 + K + k
        q[it] = -t.weight
        # (tau, 1, v) in K_exp  <=>  tau <= log v
        rows = np.zeros((3, nz))
        rows[0, it] = 1.0
        rows[2, iv] = 1.0
        cb.add(clarabel.ExponentialConeT(), rows, np.array([0.0, 1.0, 0.0]))
        # ||F a + f||^2 <= 1 + d + 2 c^T x - v
        lin = np.zeros(nz)
        lin[:n2] = 2 * _lift_vec(np.asarray(t.c, complex))
        lin[iv] = -1.0
        cb.rotated(embed(_lift(np.asarray(t.F, complex))), _lift_vec(np.asarray(t.f, complex)),
                   lin, 1.0 + t.d)
    if has_quad:
        F0, f0 = prob.quad
        q[-1] = 1.0
        lin = np.zeros(nz)
        lin[-1] = 1.0
        cb.rotated(embed(_lift(np.asarray(F0, complex))), _lift_vec(np.asarray(f0, complex)), lin, 0.0)
    for c in prob.constraints:
        lin = np.zeros(nz)
        lin[:n2] = -2 * _lift_vec(np.asarray(c.c, complex))
        G = embed(_lift(np.asarray(c.F, complex)))
        g = _lift_vec(np.asarray(c.f, complex))
        scale = max(abs(c.b), 1e-300)
        # divide through by b so the cone data is O(1)
        cb.rotated(G / np.sqrt(scale), g / np.sqrt(scale), lin / scale, c.b / scale)
    if prob.modulus_bounds is not None:
        u = np.asarray(prob.modulus_bounds, float)
        for i in np.flatnonzero(np.isfinite(u)):
            rows = np.zeros((3, nz))
            rows[1, i] = 1.0
            rows[2, n + i] = 1.0
            cb.add(clarabel.SecondOrderConeT(3), rows, np.array([u[i], 0.0, 0.0]))
    if not cb.cones:
        raise ValueError("unconstrained program with no quadratic part is unbounded")

    A = sparse.csc_matrix(np.vstack(cb.A))
    b = np.concatenate(cb.b)
    P = sparse.csc_matrix((nz, nz))
    out = None
    for attempt, extra in enumerate(_CLARABEL_ATTEMPTS):
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = max_iters
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.tol_feas = tol
        for key, val in extra.items():
            setattr(settings, key, val)
        sol = clarabel.DefaultSolver(P, q, A, b, cb.cones, settings).solve()
        out = _qcqp_outcome(prob, sol, n, tol, attempt)
        if out.status in (OPTIMAL, INFEASIBLE):
            break
    return out


def _qcqp_outcome(prob, sol, n, tol, attempt) -> SolverOutcome:
    status = str(sol.status)
    x = np.asarray(sol.x)[:2 * n]
    a = x[:n] + 1j * x[n:]
    info = {"clarabel_status": status, "violation": prob.max_violation(a),
            "solve_time": sol.solve_time, "attempt": attempt}
    iters = int(sol.iterations)
    if status == "Solved":
        return SolverOutcome(OPTIMAL, a, prob.objective(a), iters, info)
    if status == "AlmostSolved" and info["violation"] <= 1e3 * tol:
        return SolverOutcome(OPTIMAL, a, prob.objective(a), iters, info)
    if "Infeasible" in status and "Dual" not in status and "Almost" not in status:
        return SolverOutcome(INFEASIBLE, None, -np.inf, iters, info)
    if status == "MaxIterations":
        return SolverOutcome(MAX_ITERS, a, prob.objective(a), iters, info)
    return SolverOutcome(NUMERICAL_FAILURE, a, prob.objective(a), iters, info)


# --------------------------------------------------------------------------
# SDP
# --------------------------------------------------------------------------

@dataclass
class TraceConstraint:
    """``Tr(G A) <sense> b`` with G Hermitian; sense in {'>=', '<=', '=='}."""

    G: np.ndarray
    sense: str
    b: float


@dataclass
class SemidefiniteProgram:
    """minimize Tr(F A) over Hermitian A >= 0 subject to trace constraints."""

    F: np.ndarray
    constraints: list

    @property
    def size(self) -> int:
        return self.F.shape[0]

    def residuals(self, A) -> np.ndarray:
        """Signed violations (positive = violated), relative to max(1, |b|)."""
        out = []
        for c in self.constraints:
            v = np.real(np.trace(c.G @ A)) - c.b
            if c.sense == ">=":
                v = -v
            elif c.sense == "==":
                v = abs(v)
            out.append(v / max(1.0, abs(c.b)))
        return np.array(out)


def _vec_lift(M):
    return _lift(M).reshape(-1, order="F")


def hermitian_from_lifted(Z: np.ndarray) -> np.ndarray:
    """Hermitian A with Tr(G A) = tr(lift(G) Z) for every Hermitian G."""
    n = Z.shape[0] // 2
    Z11, Z12, Z21, Z22 = Z[:n, :n], Z[:n, n:], Z[n:, :n], Z[n:, n:]
    A = (Z11 + Z22) + 1j * (Z21 - Z12)
    return (A + A.conj().T) / 2


def _scaled_data(prob: SemidefiniteProgram):
    """Objective and constraint rows divided by their largest entry."""
    F = np.asarray(prob.F, complex)
    F = F / max(np.abs(F).max(), 1e-300)
    rows = []
    for c in prob.constraints:
        if c.sense not in (">=", "<=", "=="):
            raise ValueError(f"bad constraint sense {c.sense!r}")
        G = np.asarray(c.G, complex)
        s = max(np.abs(G).max(), 1e-300)
        rows.append((G / s, c.sense, c.b / s))
    return F, rows


def _finish_sdp(prob, A, status, iters, info, tol):
    A = (A + A.conj().T) / 2
    obj = float(np.real(np.trace(prob.F @ A)))
    info["max_residual"] = float(prob.residuals(A).max(initial=0.0))
    info["min_eig"] = float(np.linalg.eigvalsh(A)[0])
    if status == OPTIMAL:
        return SolverOutcome(OPTIMAL, A, obj, iters, info)
    # inexact termination is accepted when the point is feasible to tolerance
    if info["max_residual"] <= 1e3 * tol and \
            info["min_eig"] >= -1e3 * tol * max(1.0, np.abs(A).max()):
        return SolverOutcome(OPTIMAL, A, obj, iters, info)
    return SolverOutcome(status, A, obj, iters, info)


def _sdp_cvxopt(prob: SemidefiniteProgram, tol: float, max_iters: int) -> SolverOutcome:
    from cvxopt import matrix, solvers

    n = prob.size
    F, rows = _scaled_data(prob)
    m = len(rows)
    Gs = np.column_stack([_vec_lift(G) for G, _, _ in rows])
    b = np.array([rhs for _, _, rhs in rows])
    # dual multipliers of inequality rows carry a sign
    gl = [(i, -1.0 if sense == ">=" else 1.0) for i, (_, sense, _) in enumerate(rows)
          if sense != "=="]
    Gl = np.zeros((len(gl), m))
    for r, (i, sgn) in enumerate(gl):
        Gl[r, i] = sgn
    opts = {"show_progress": False, "abstol": tol * 1e-2, "reltol": tol * 1e-2,
            "feastol": tol * 1e-2, "maxiters": max_iters}
    try:
        res = solvers.sdp(matrix(-b), Gl=matrix(Gl) if gl else None,
                          hl=matrix(np.zeros(len(gl))) if gl else None,
                          Gs=[matrix(Gs)], hs=[matrix(_lift(F))], options=opts)
    except (ValueError, ArithmeticError) as exc:
        return SolverOutcome(NUMERICAL_FAILURE, None, np.nan, 0, {"error": str(exc)})
    status = res["status"]
    iters = int(res.get("iterations", 0))
    info = {"backend": "cvxopt", "cvxopt_status": status}
    if status == "dual infeasible":
        # an improving ray of the dual certifies that ours is infeasible
        return SolverOutcome(INFEASIBLE, None, np.inf, iters, info)
    if res["zs"][0] is None:
        return SolverOutcome(NUMERICAL_FAILURE, None, np.nan, iters, info)
    Z = np.array(res["zs"][0])
    A = hermitian_from_lifted((Z + Z.T) / 2)
    if status == "optimal":
        return _finish_sdp(prob, A, OPTIMAL, iters, info, tol)
    if status == "unknown":
        cert = res.get("residual as dual infeasibility certificate")
        if cert is not None and cert < 1e-6:
            return SolverOutcome(INFEASIBLE, None, np.inf, iters, info)
    return _finish_sdp(prob, A, MAX_ITERS if iters >= max_iters else NUMERICAL_FAILURE,
                       iters, info, tol)


def _svec_index(n: int):
    """Column-major upper-triangle indices and the sqrt(2) off-diagonal weights."""
    j, i = np.triu_indices(n)[::-1]
    order = np.lexsort((i, j))
    i, j = i[order], j[order]
    return i, j, np.where(i == j, 1.0, np.sqrt(2.0))


def _sdp_clarabel(prob: SemidefiniteProgram, tol: float, max_iters: int) -> SolverOutcome:
    import clarabel
    from scipy import sparse

    F, rows = _scaled_data(prob)
    N = 2 * prob.size
    iu, ju, w = _svec_index(N)
    nv = iu.size

    def svec(M):
        return _lift(M)[iu, ju] * w

    eq = [(svec(G), rhs) for G, sense, rhs in rows if sense == "=="]
    ineq = [((1 if sense == "<=" else -1) * svec(G), (1 if sense == "<=" else -1) * rhs)
            for G, sense, rhs in rows if sense != "=="]
    blocks, rhs, cones = [], [], []
    for group, cone in ((eq, clarabel.ZeroConeT), (ineq, clarabel.NonnegativeConeT)):
        if group:
            blocks.append(sparse.csr_matrix(np.array([r for r, _ in group])))
            rhs.append(np.array([v for _, v in group]))
            cones.append(cone(len(group)))
    blocks.append(-sparse.identity(nv))
    rhs.append(np.zeros(nv))
    cones.append(clarabel.PSDTriangleConeT(N))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iters
    settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = tol
    sol = clarabel.DefaultSolver(sparse.csc_matrix((nv, nv)), svec(F),
                                 sparse.vstack(blocks).tocsc(), np.concatenate(rhs),
                                 cones, settings).solve()
    status = str(sol.status)
    info = {"backend": "clarabel", "clarabel_status": status}
    iters = int(sol.iterations)
    if "Infeasible" in status and "Dual" not in status:
        return SolverOutcome(INFEASIBLE, None, np.inf, iters, info)
    Z = np.zeros((N, N))
    Z[iu, ju] = np.asarray(sol.x) / w
    Z = Z + np.triu(Z, 1).T
    A = hermitian_from_lifted(Z)
    if status == "Solved":
        return _finish_sdp(prob, A, OPTIMAL, iters, info, tol)
    return _finish_sdp(prob, A, MAX_ITERS if status == "MaxIterations" else NUMERICAL_FAILURE,
                       iters, info, tol)


def solve_sdp(prob: SemidefiniteProgram, tol: float = 1e-7, max_iters: int = 100) -> SolverOutcome:
    """Minimize Tr(F A) over the constraint set.  Objective and constraint
    rows are normalized by their largest entry before solving."""
    out = _sdp_cvxopt(prob, tol, max_iters)
    if out.status in (OPTIMAL, INFEASIBLE):
        return out
    fallback = _sdp_clarabel(prob, tol, max(max_iters, 200))
    fallback.info["first_attempt"] = out.info
    return fallback
