"""Invariant checks run by ``viscofem verify``.

Each check returns (passed, measured value, threshold).
"""
from __future__ import annotations

from math import factorial

import numpy as np

from .assembly import local_mass, local_stiffness
from .fespace import build_space, quadrature
from .mesh import triangle_mesh, unit_square_mesh
from .mms import ManufacturedSolution
from .stepper import REFERENCE_MATERIAL, ProblemData, Simulation, monolithic_step


def energy_identity(form: str, n: int = 16, degree: int = 2, steps: int = 200, dt: float = 0.01):
    """Free vibration from w_0 = interpolant of sin(xy) with the reference material."""
    space = build_space(unit_square_mesh(n), degree)
    sim = Simulation(space, REFERENCE_MATERIAL, ProblemData(), form, dt)
    w_init = space.restrict(space.interpolate(lambda x, y: np.sin(x * y)))
    _, balance, _ = sim.run(steps, state=sim.initial_state(w_init=w_init))
    res = balance.residual()
    return bool(res <= 1e-10), float(res), 1e-10


def oracle_equivalence(form: str, n: int, degree: int, steps: int = 10, dt: float = 0.05):
    mat = REFERENCE_MATERIAL
    space = build_space(unit_square_mesh(n), degree)
    sim = Simulation(space, mat, ManufacturedSolution(mat).problem_data(), form, dt)
    state = sim.initial_state()
    mono = state.copy()
    dev = 0.0
    for k in range(steps):
        ln, l1 = sim.load(k * dt), sim.load((k + 1) * dt)
        state = sim.step(state, ln, l1)
        mono = monolithic_step(mono, sim.M, sim.A, ln, l1, mat, dt)
        dev = max(dev, *(float(np.abs(a - b).max()) for a, b in
                         ((state.z, mono.z), (state.w, mono.w), (state.iv, mono.iv))))
    return bool(dev <= 1e-9), float(dev), 1e-9


def reference_element_matrices():
    mesh = triangle_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])
    space = build_space(mesh, 1)
    mass_exact = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 24.0
    stiff_exact = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    dev = max(np.abs(local_mass(space)[0] - mass_exact).max(),
              np.abs(local_stiffness(space)[0] - stiff_exact).max())
    return bool(dev <= 1e-14), float(dev), 1e-14


def quadrature_exactness():
    worst = 0.0
    for degree in range(1, 11):
        rule = quadrature(degree)
        xi, eta = rule.xi.T
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                exact = factorial(a) * factorial(b) / factorial(a + b + 2)
                worst = max(worst, abs(rule.weights @ (xi**a * eta**b) - exact))
    return bool(worst <= 1e-14), float(worst), 1e-14


def all_checks():
    checks = {
        "energy_identity[displacement]": lambda: energy_identity("displacement"),
        "energy_identity[velocity]": lambda: energy_identity("velocity"),
        "element_matrices": reference_element_matrices,
        "quadrature_exactness": quadrature_exactness,
    }
    for form in ("displacement", "velocity"):
        for n in (2, 4):
            for degree in (1, 2):
                checks[f"oracle[{form},n={n},P{degree}]"] = (
                    lambda f=form, m=n, d=degree: oracle_equivalence(f, m, d))
    return checks
