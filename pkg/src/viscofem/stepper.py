"""Crank-Nicolson schemes for the viscoelastic wave equation with internal variables.

Two formulations are supported.  In the *displacement* form each Prony
term carries a variable psi_q driven by the displacement; in the
*velocity* form each term carries s_q driven by the velocity.  Both use

    (W^{n+1} + W^n)/2 = (Z^{n+1} - Z^n)/dt

to tie velocity to displacement.

Eliminating the internal variables
----------------------------------
The internal-variable equations are statements of the form
``a(X, v) = a(Y, v)`` for every v in the discrete space.  Since ``a`` is an
inner product there, they hold between coefficient vectors directly:

    psi_q^{n+1} = alpha_q psi_q^n + beta_q  (z^{n+1} + z^n)     (displacement)
    s_q^{n+1}   = alpha_q s_q^n   + gamma_q (z^{n+1} - z^n)     (velocity)

with alpha_q = (tau_q/dt - 1/2)/(tau_q/dt + 1/2),
beta_q = (phi_q/2)/(tau_q/dt + 1/2) and
gamma_q = (tau_q phi_q/dt)/(tau_q/dt + 1/2).

Substituting these and ``w^{n+1} = (2/dt)(z^{n+1} - z^n) - w^n`` into the
momentum equation leaves one SPD system per step,

    K z^{n+1} = rhs,   K = (2/dt^2) M + c_eff A,

with M the rho-weighted mass matrix, A the stiffness matrix and
c_eff = (1 - sum beta_q)/2 (displacement) or (phi_0 + sum gamma_q)/2
(velocity).  K does not depend on n, so it is factorized once.  The
right-hand sides are

    displacement: (2/dt^2) M z + (2/dt) M w + avg load
                  + A [ (sum beta_q - 1)/2 z + 1/2 sum (1 + alpha_q) psi_q ]
    velocity:     (2/dt^2) M z + (2/dt) M w + avg load
                  + A [ (sum gamma_q - phi_0)/2 z - 1/2 sum (1 + alpha_q) s_q ]

:func:`monolithic_step` solves the uneliminated block system and serves as
the oracle for these formulas.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (GradientSourceOperator, NeumannOperator, SourceOperator,
                       assemble_mass, assemble_stiffness)
from .fespace import FunctionSpace
from .linsolve import DEFAULT_TOL, SpdSolver

FORMS = ("displacement", "velocity")


@dataclass(frozen=True)
class MaterialModel:
    """Density, modulus and Prony series phi(t) = phi_0 + sum phi_q exp(-t/tau_q).

    ``phi`` lists phi_0 first; ``tau`` has one entry per decaying term.
    """

    rho: float
    D: float
    phi: tuple
    tau: tuple

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(p) for p in self.phi))
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        if self.rho <= 0 or self.D <= 0:
            raise ValueError("rho and D must be positive")
        if len(self.phi) != len(self.tau) + 1:
            raise ValueError("phi must have exactly one more entry (phi_0) than tau")
        if any(p <= 0 for p in self.phi):
            raise ValueError("Prony coefficients must be positive")
        if any(t <= 0 for t in self.tau):
            raise ValueError("delay times must be positive")
        if abs(sum(self.phi) - 1.0) > 1e-14:
            raise ValueError(f"Prony coefficients must sum to 1, got {sum(self.phi)!r}")

    @property
    def phi0(self) -> float:
        return self.phi[0]

    @property
    def phi_terms(self) -> np.ndarray:
        return np.array(self.phi[1:])

    @property
    def tau_terms(self) -> np.ndarray:
        return np.array(self.tau)

    @property
    def nterms(self) -> int:
        return len(self.tau)

    def relaxation(self, t):
        t = np.asarray(t, dtype=float)
        return self.phi0 + sum(p * np.exp(-t / tq) for p, tq in zip(self.phi[1:], self.tau))


# rho = D = 1, phi = (0.5, 0.1, 0.4), tau = (0.5, 1.5)
REFERENCE_MATERIAL = MaterialModel(rho=1.0, D=1.0, phi=(0.5, 0.1, 0.4), tau=(0.5, 1.5))


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if self.T <= 0 or self.N < 1:
            raise ValueError("need T > 0 and N >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.N

    def t(self, n: int) -> float:
        return n * self.dt


@dataclass(frozen=True)
class SchemeCoefficients:
    form: str
    dt: float
    alpha: np.ndarray
    weight: np.ndarray
    c_eff: float
    phi0: float

    @classmethod
    def build(cls, material: MaterialModel, dt: float, form: str) -> "SchemeCoefficients":
        if form not in FORMS:
            raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")
        if dt <= 0:
            raise ValueError("time step must be positive")
        r = material.tau_terms / dt
        alpha = (r - 0.5) / (r + 0.5)
        if form == "displacement":
            weight = 0.5 * material.phi_terms / (r + 0.5)
            c_eff = 0.5 * (1.0 - weight.sum())
        else:
            weight = r * material.phi_terms / (r + 0.5)
            c_eff = 0.5 * (material.phi0 + weight.sum())
        return cls(form, dt, alpha, weight, float(c_eff), material.phi0)

    @property
    def beta(self) -> np.ndarray:
        return self.weight

    @property
    def gamma(self) -> np.ndarray:
        return self.weight


@dataclass
class SolverState:
    """Reduced (free-dof) coefficient vectors at step n.

    ``iv`` has one row per Prony term: psi_q in the displacement form,
    s_q in the velocity form.
    """

    n: int
    z: np.ndarray
    w: np.ndarray
    iv: np.ndarray
    form: str

    def copy(self) -> "SolverState":
        return SolverState(self.n, self.z.copy(), self.w.copy(), self.iv.copy(), self.form)


@dataclass
class ProblemData:
    """Source, Neumann datum and initial data; None means identically zero.

    Space-time callables take (x, y, t) with array x, y; initial data take
    (x, y).  ``u0_grad`` returns (du0/dx, du0/dy); when omitted it is
    approximated by central differences of ``u0``.
    """

    f: Callable | None = None
    g: Callable | None = None
    u0: Callable | None = None
    w0: Callable | None = None
    u0_grad: Callable | None = None


def _fd_gradient(u0, eps=1e-6):
    def grad(x, y):
        gx = (u0(x + eps, y) - u0(x - eps, y)) / (2 * eps)
        gy = (u0(x, y + eps) - u0(x, y - eps)) / (2 * eps)
        return gx, gy
    return grad


def update_internal_displacement(psi, z_old, z_new, coeffs: SchemeCoefficients, q: int):
    return coeffs.alpha[q] * psi + coeffs.beta[q] * (z_new + z_old)


def update_internal_velocity(s, z_old, z_new, coeffs: SchemeCoefficients, q: int):
    return coeffs.alpha[q] * s + coeffs.gamma[q] * (z_new - z_old)


def system_matrix(M, A, coeffs: SchemeCoefficients):
    return ((2.0 / coeffs.dt**2) * M + coeffs.c_eff * A).tocsr()


def step(state: SolverState, M, A, load_n, load_np1, coeffs: SchemeCoefficients,
         solver: SpdSolver) -> SolverState:
    """Advance one step.  ``solver`` must be prepared on :func:`system_matrix`.

    ``load_n`` and ``load_np1`` are the reduced load vectors at t_n and
    t_{n+1}: F_d for the displacement form, F_v for the velocity form.
    """
    dt = coeffs.dt
    z, w, iv = state.z, state.w, state.iv
    hist = 0.5 * ((1.0 + coeffs.alpha)[:, None] * iv).sum(axis=0) if len(iv) else 0.0
    if coeffs.form == "displacement":
        az = 0.5 * (coeffs.weight.sum() - 1.0) * z + hist
    else:
        az = 0.5 * (coeffs.weight.sum() - coeffs.phi0) * z - hist
    rhs = M @ ((2.0 / dt**2) * z + (2.0 / dt) * w) + A @ az + 0.5 * (load_n + load_np1)
    z_new = solver.solve(rhs, x0=z + dt * w)
    w_new = (2.0 / dt) * (z_new - z) - w
    if coeffs.form == "displacement":
        iv_new = coeffs.alpha[:, None] * iv + coeffs.weight[:, None] * (z_new + z)[None]
    else:
        iv_new = coeffs.alpha[:, None] * iv + coeffs.weight[:, None] * (z_new - z)[None]
    return SolverState(state.n + 1, z_new, w_new, iv_new.reshape(iv.shape), state.form)


def monolithic_matrix(M, A, material: MaterialModel, dt: float, form: str):
    """Block matrix of the coupled step for unknowns (z, w, iv_1, ..., iv_Q)."""
    Q = material.nterms
    n = M.shape[0]
    eye = sp.identity(n, format="csr")
    blocks = [[None] * (Q + 2) for _ in range(Q + 2)]
    blocks[0][1] = M / dt
    blocks[1][0] = eye / dt
    blocks[1][1] = -0.5 * eye
    if form == "displacement":
        blocks[0][0] = 0.5 * A
        for q, (phi, tau) in enumerate(zip(material.phi_terms, material.tau_terms)):
            blocks[0][2 + q] = -0.5 * A
            blocks[2 + q][0] = -0.5 * phi * A
            blocks[2 + q][2 + q] = (tau / dt + 0.5) * A
    else:
        blocks[0][0] = 0.5 * material.phi0 * A
        for q, (phi, tau) in enumerate(zip(material.phi_terms, material.tau_terms)):
            blocks[0][2 + q] = 0.5 * A
            blocks[2 + q][1] = -0.5 * tau * phi * A
            blocks[2 + q][2 + q] = (tau / dt + 0.5) * A
    return sp.bmat(blocks, format="csc")


def monolithic_step(state: SolverState, M, A, load_n, load_np1, material: MaterialModel,
                    dt: float) -> SolverState:
    """One step of the coupled system without eliminating anything (oracle)."""
    Q = material.nterms
    n = M.shape[0]
    if n * (Q + 2) > 10_000:
        raise ValueError("monolithic oracle is limited to small problems")
    z, w, iv = state.z, state.w, state.iv
    F = 0.5 * (load_n + load_np1)
    rhs = [None] * (Q + 2)
    rhs[1] = z / dt + 0.5 * w
    if state.form == "displacement":
        rhs[0] = F + M @ w / dt - 0.5 * (A @ z) + 0.5 * sum(A @ iv[q] for q in range(Q))
        for q, (phi, tau) in enumerate(zip(material.phi_terms, material.tau_terms)):
            rhs[2 + q] = (tau / dt - 0.5) * (A @ iv[q]) + 0.5 * phi * (A @ z)
    else:
        rhs[0] = (F + M @ w / dt - 0.5 * material.phi0 * (A @ z)
                  - 0.5 * sum(A @ iv[q] for q in range(Q)))
        for q, (phi, tau) in enumerate(zip(material.phi_terms, material.tau_terms)):
            rhs[2 + q] = (tau / dt - 0.5) * (A @ iv[q]) + 0.5 * tau * phi * (A @ w)
    K = monolithic_matrix(M, A, material, dt, state.form)
    x = spla.spsolve(K, np.concatenate(rhs))
    iv_new = x[2 * n:].reshape(Q, n)
    return SolverState(state.n + 1, x[:n], x[n:2 * n], iv_new, state.form)


def velocity_history_load(A, z0, material: MaterialModel, t: float) -> np.ndarray:
    """The initial-displacement term -sum_q phi_q exp(-t/tau_q) a(u_0, .) of F_v."""
    factor = float(np.sum(material.phi_terms * np.exp(-t / material.tau_terms)))
    return -factor * (A @ z0)


@dataclass
class EnergyBalance:
    """Running terms of the exact discrete energy identity.

    Displacement form::

        rho|W^m|^2 + |Z^m|_V^2 + sum 1/phi_q |Psi^m|_V^2
            + sum_q sum_n 2 tau_q/(dt phi_q) |Psi^{n+1}-Psi^n|_V^2
        = rho|W^0|^2 + |Z^0|_V^2 + work + sum_q 2 a(Z^m, Psi^m)

    Velocity form::

        rho|W^m|^2 + phi_0|Z^m|_V^2 + sum 1/phi_q |S^m|_V^2
            + sum_q sum_n dt/(2 tau_q phi_q) |S^{n+1}+S^n|_V^2
        = rho|W^0|^2 + phi_0|Z^0|_V^2 + work

    where work = sum_n dt/2 (F(t_{n+1}) + F(t_n)) . (W^{n+1} + W^n).
    """

    form: str
    material: MaterialModel
    dt: float
    initial: float = 0.0
    dissipation: float = 0.0
    work: float = 0.0
    kinetic: float = 0.0
    elastic: float = 0.0
    internal: float = 0.0
    cross: float = 0.0

    def start(self, state: SolverState, M, A):
        self._stored(state, M, A)
        self.initial = self.kinetic + self.elastic + self.internal - self.cross

    def advance(self, old: SolverState, new: SolverState, M, A, load_n, load_np1):
        phi = self.material.phi_terms
        tau = self.material.tau_terms
        if self.form == "displacement":
            d = new.iv - old.iv
            weights = 2.0 * tau / (self.dt * phi)
        else:
            d = new.iv + old.iv
            weights = self.dt / (2.0 * tau * phi)
        for q in range(len(phi)):
            self.dissipation += weights[q] * (d[q] @ (A @ d[q]))
        self.work += 0.5 * self.dt * ((load_n + load_np1) @ (new.w + old.w))
        self._stored(new, M, A)

    def _stored(self, state: SolverState, M, A):
        phi = self.material.phi_terms
        self.kinetic = float(state.w @ (M @ state.w))
        az = A @ state.z
        scale = 1.0 if self.form == "displacement" else self.material.phi0
        self.elastic = scale * float(state.z @ az)
        self.internal = sum(float(state.iv[q] @ (A @ state.iv[q])) / phi[q] for q in range(len(phi)))
        if self.form == "displacement":
            self.cross = 2.0 * sum(float(az @ state.iv[q]) for q in range(len(phi)))
        else:
            self.cross = 0.0

    @property
    def lhs(self) -> float:
        return self.kinetic + self.elastic + self.internal + self.dissipation

    @property
    def rhs(self) -> float:
        return self.initial + self.work + self.cross

    def residual(self) -> float:
        return abs(self.lhs - self.rhs) / max(1.0, abs(self.rhs))


def energy_identity_residual(trajectory: Sequence[SolverState], M, A, material: MaterialModel,
                             dt: float, loads: Sequence[np.ndarray]) -> float:
    """Relative defect of the discrete energy identity over a recorded trajectory.

    ``loads[n]`` is the reduced load vector at t_n (F_d or F_v to match the form).
    """
    if len(trajectory) != len(loads):
        raise ValueError("need one load vector per trajectory state")
    bal = EnergyBalance(trajectory[0].form, material, dt)
    bal.start(trajectory[0], M, A)
    for n in range(len(trajectory) - 1):
        bal.advance(trajectory[n], trajectory[n + 1], M, A, loads[n], loads[n + 1])
    return bal.residual()


class Simulation:
    """Assembled operators, loads and solver for one (space, material, form, dt) setup."""

    def __init__(self, space: FunctionSpace, material: MaterialModel, data: ProblemData,
                 form: str, dt: float, method: str = "auto", tol: float = DEFAULT_TOL):
        self.space = space
        self.material = material
        self.data = data
        self.form = form
        self.dt = dt
        self.coeffs = SchemeCoefficients.build(material, dt, form)
        free = space.free
        self.M_full = assemble_mass(space, material.rho)
        self.A_full = assemble_stiffness(space, material.D)
        self.M = self.M_full[free][:, free].tocsr()
        self.A = self.A_full[free][:, free].tocsr()
        self._source = SourceOperator(space) if data.f is not None else None
        self._neumann = NeumannOperator(space) if data.g is not None else None
        self.method = method
        self.tol = tol
        self.solver = SpdSolver(system_matrix(self.M, self.A, self.coeffs), method=method, tol=tol)
        self._z0 = None

    def load_d(self, t: float) -> np.ndarray:
        """Reduced F_d(t; .)."""
        b = np.zeros(self.space.ndofs)
        if self._source is not None:
            b += self._source(self.data.f, t)
        if self._neumann is not None:
            b += self._neumann(self.data.g, t)
        return b[self.space.free]

    def load(self, t: float) -> np.ndarray:
        """The load driving this form: F_d, or F_v for the velocity form."""
        b = self.load_d(t)
        if self.form == "velocity" and self._z0 is not None:
            b = b + velocity_history_load(self.A, self._z0, self.material, t)
        return b

    def initial_state(self, w_init: np.ndarray | None = None) -> SolverState:
        state = init_state(self.space, self.material, self.data, self.form,
                           M=self.M, A=self.A, method=self.method, tol=self.tol)
        if w_init is not None:
            state.w = np.asarray(w_init, dtype=float).copy()
        self._z0 = state.z.copy() if np.any(state.z) else None
        return state

    def step(self, state: SolverState, load_n, load_np1) -> SolverState:
        return step(state, self.M, self.A, load_n, load_np1, self.coeffs, self.solver)

    def run(self, nsteps: int, state: SolverState | None = None, record: bool = False,
            callback: Callable | None = None):
        """March ``nsteps`` steps.

        Returns (final state, energy balance, trajectory); the trajectory
        list is empty unless ``record`` is set.  ``callback(state, balance)``
        is invoked after the initial state and after every step.
        """
        if state is None:
            state = self.initial_state()
        balance = EnergyBalance(self.form, self.material, self.dt)
        balance.start(state, self.M, self.A)
        traj = [state] if record else []
        if callback:
            callback(state, balance)
        t0 = state.n * self.dt
        load_n = self.load(t0)
        for k in range(nsteps):
            t1 = (state.n + 1) * self.dt
            load_np1 = self.load(t1)
            new = self.step(state, load_n, load_np1)
            balance.advance(state, new, self.M, self.A, load_n, load_np1)
            state, load_n = new, load_np1
            if record:
                traj.append(state)
            if callback:
                callback(state, balance)
        return state, balance, traj


def init_state(space: FunctionSpace, material: MaterialModel, data: ProblemData, form: str,
               M=None, A=None, method: str = "auto", tol: float = DEFAULT_TOL) -> SolverState:
    """Elliptic projection of u_0, L2 projection of w_0, zero internal variables."""
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")
    free = space.free
    nfree = len(free)
    if M is None:
        M = assemble_mass(space, material.rho)[free][:, free]
    if A is None:
        A = assemble_stiffness(space, material.D)[free][:, free]
    z = np.zeros(nfree)
    w = np.zeros(nfree)
    if data.u0 is not None:
        grad = data.u0_grad or _fd_gradient(data.u0)
        b = GradientSourceOperator(space, material.D)(grad)[free]
        z = SpdSolver(A, method=method, tol=tol).solve(b)
    if data.w0 is not None:
        b = SourceOperator(space)(lambda x, y, t: data.w0(x, y), 0.0)[free]
        # M carries rho; the projection is in the unweighted L2 product
        w = SpdSolver(M / material.rho, method=method, tol=tol).solve(b)
    return SolverState(0, z, w, np.zeros((material.nterms, nfree)), form)
