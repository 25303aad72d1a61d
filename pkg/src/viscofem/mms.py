"""Manufactured solution u = exp(-t) sin(xy), error norms and convergence rates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fespace import FunctionSpace, quadrature
from .stepper import MaterialModel, ProblemData


def exact_c_q(t, phi_q: float, tau_q: float):
    """Time factor c_q of psi_q = c_q(t) sin(xy) for u = exp(-t) sin(xy).

    Solves tau c' + c = phi e^{-t}, c(0) = 0.
    """
    if abs(tau_q - 1.0) < 1e-12:
        raise ValueError("tau_q = 1 is a removable singularity of the closed form")
    t = np.asarray(t, dtype=float)
    return phi_q / (1.0 - tau_q) * (np.exp(-t) - np.exp(-t / tau_q))


def exact_c_q_dot(t, phi_q: float, tau_q: float):
    t = np.asarray(t, dtype=float)
    return phi_q / (1.0 - tau_q) * (-np.exp(-t) + np.exp(-t / tau_q) / tau_q)


@dataclass(frozen=True)
class ErrorTriple:
    energy: float
    velocity_l2: float
    displacement_l2: float

    def as_tuple(self) -> tuple:
        return (self.energy, self.velocity_l2, self.displacement_l2)


class ManufacturedSolution:
    """u(x, y, t) = exp(-t) sin(xy) with data derived for a given material.

    Dirichlet data vanish on {x=0} and {y=0}; the Neumann sides are
    {x=1} and {y=1}.  ``amplitude`` scales the solution and every derived
    quantity.
    """

    def __init__(self, material: MaterialModel, amplitude: float = 1.0):
        self.material = material
        self.amplitude = amplitude

    # time factors
    def c(self, t) -> np.ndarray:
        m = self.material
        return self.amplitude * np.array([exact_c_q(t, p, tq) for p, tq in zip(m.phi_terms, m.tau_terms)])

    def c_dot(self, t) -> np.ndarray:
        m = self.material
        return self.amplitude * np.array([exact_c_q_dot(t, p, tq) for p, tq in zip(m.phi_terms, m.tau_terms)])

    def zeta_factor(self, t) -> np.ndarray:
        """Time factors of the velocity-form variables zeta_q = phi_q u - phi_q e^{-t/tau_q} u_0 - psi_q."""
        m = self.material
        return self.amplitude * np.array([p * np.exp(-t) - p * np.exp(-t / tq) - exact_c_q(t, p, tq)
                                          for p, tq in zip(m.phi_terms, m.tau_terms)])

    def stress_factor(self, t) -> float:
        """e^{-t} - sum_q c_q(t): the stress is D times this times grad sin(xy)."""
        value = self.amplitude * np.exp(-t) - np.sum(self.c(t), axis=0)
        return float(value) if np.ndim(value) == 0 else value

    # fields
    def u(self, x, y, t):
        return self.amplitude * np.exp(-t) * np.sin(x * y)

    def u_t(self, x, y, t):
        return -self.amplitude * np.exp(-t) * np.sin(x * y)

    def u_tt(self, x, y, t):
        return self.amplitude * np.exp(-t) * np.sin(x * y)

    def grad_u(self, x, y, t):
        c = self.amplitude * np.exp(-t) * np.cos(x * y)
        return y * c, x * c

    def psi(self, x, y, t) -> np.ndarray:
        return self.c(t)[:, None] * np.atleast_1d(np.sin(x * y))[None]

    def stress(self, x, y, t):
        k = self.material.D * self.stress_factor(t)
        c = np.cos(x * y)
        return k * y * c, k * x * c

    def f(self, x, y, t):
        m = self.material
        s = np.sin(x * y)
        return m.rho * self.u_tt(x, y, t) + m.D * (x**2 + y**2) * self.stress_factor(t) * s

    def g(self, x, y, t, normal=None):
        """sigma . n on the Neumann sides; the normal is inferred from the point if omitted."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if normal is None:
            on_right = np.isclose(x, 1.0)
            on_top = np.isclose(y, 1.0)
            if not np.all(on_right | on_top):
                raise ValueError("point is not on the Neumann boundary {x=1} or {y=1}")
            nx = np.where(on_right, 1.0, 0.0)
            ny = np.where(on_right, 0.0, 1.0)
        else:
            nx, ny = normal
        sx, sy = self.stress(x, y, t)
        return sx * nx + sy * ny

    def u0(self, x, y):
        return self.u(x, y, 0.0)

    def w0(self, x, y):
        return self.u_t(x, y, 0.0)

    def u0_grad(self, x, y):
        return self.grad_u(x, y, 0.0)

    def problem_data(self) -> ProblemData:
        return ProblemData(f=self.f, g=self.g, u0=self.u0, w0=self.w0, u0_grad=self.u0_grad)


def source_f(x, y, t, material: MaterialModel):
    return ManufacturedSolution(material).f(x, y, t)


def neumann_g(x, y, t, material: MaterialModel, normal=None):
    return ManufacturedSolution(material).g(x, y, t, normal)


def error_norms(space: FunctionSpace, z: np.ndarray, w: np.ndarray, exact, t: float,
                D: float = 1.0, exactness: int | None = None) -> ErrorTriple:
    """Errors of full coefficient vectors z (displacement) and w (velocity) at time t.

    ``exact`` provides ``u``, ``u_t`` and ``grad_u`` as (x, y, t) callables;
    integrals use quadrature of exactness 2*degree + 3 per triangle.
    """
    rule = quadrature(exactness or 2 * space.degree + 3)
    phi = space.element.values(rule.xi)
    ref = space.element.gradients(rule.xi)
    pts = space.geometry.map(rule.xi)
    x, y = pts[..., 0], pts[..., 1]
    wdet = np.abs(space.geometry.det)[:, None] * rule.weights[None, :]
    zc = np.asarray(z)[space.cell_dofs]
    wc = np.asarray(w)[space.cell_dofs]
    zh = np.einsum("qk,tk->tq", phi, zc)
    wh = np.einsum("qk,tk->tq", phi, wc)
    gzh = np.einsum("tij,tqj->tqi", space.geometry.inv_t, np.einsum("qkj,tk->tqj", ref, zc))
    ux, uy = exact.grad_u(x, y, t)
    energy = np.sum(wdet * D * ((ux - gzh[..., 0]) ** 2 + (uy - gzh[..., 1]) ** 2))
    vel = np.sum(wdet * (exact.u_t(x, y, t) - wh) ** 2)
    disp = np.sum(wdet * (exact.u(x, y, t) - zh) ** 2)
    return ErrorTriple(float(np.sqrt(energy)), float(np.sqrt(vel)), float(np.sqrt(disp)))


@dataclass(frozen=True)
class Rates:
    pairwise: tuple
    least_squares: float


def convergence_rate(errors, steps) -> Rates:
    """Pairwise rates log(e1/e2)/log(h1/h2) and the least-squares log-log slope."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(steps, dtype=float)
    if len(e) != len(h) or len(e) < 2:
        raise ValueError("need at least two (error, step) pairs")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ValueError("errors and step sizes must be positive")
    le, lh = np.log(e), np.log(h)
    pairwise = tuple(float(v) for v in (le[:-1] - le[1:]) / (lh[:-1] - lh[1:]))
    slope = float(np.polyfit(lh, le, 1)[0])
    return Rates(pairwise, slope)
