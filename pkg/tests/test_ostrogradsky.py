"""Momenta, phase map, top-jet solve, Hamiltonian and its flow."""

from __future__ import annotations

import numpy as np
import pytest

from ostrokit import expr as ex
from ostrokit import lagrangian as lg
from ostrokit import ostrogradsky as og
from conftest import rel_err
from test_lagrangian import (
    cubic_problem,
    free_particle,
    jet_binding,
    pais_uhlenbeck,
    quartic_problem,
    quintic_problem,
    two_dof_problem,
)

Q = ex.coordinate


def cos_jets(t: float) -> lg.JetPoint:
    return lg.JetPoint(
        t, ((np.cos(t), -np.sin(t), -np.cos(t), np.sin(t)),)
    )


class TestMomenta:
    def test_cubic_table(self, rng):
        m = og.momenta_expressions(cubic_problem())
        assert m.momentum(1, 1) == ex.Symbol(Q(1, 2))
        for _ in range(10):
            b = jet_binding(rng, 1, 3)
            assert rel_err(ex.evaluate(m.momentum(1, 0), b), -b[Q(1, 3)]) < 1e-14

    def test_classical_momentum(self):
        m = og.momenta_expressions(free_particle())
        assert m.momentum(1, 0) == ex.Symbol(Q(1, 1))

    def test_pais_uhlenbeck_table(self, rng):
        problem = pais_uhlenbeck()
        m = og.momenta_expressions(problem)
        for _ in range(10):
            b = jet_binding(rng, 1, 3)
            b.update(problem.parameter_binding)
            assert rel_err(ex.evaluate(m.momentum(1, 1), b), b[Q(1, 2)]) < 1e-14
            expected = -5.0 * b[Q(1, 1)] - b[Q(1, 3)]
            assert rel_err(ex.evaluate(m.momentum(1, 0), b), expected) < 1e-14

    def test_quintic_table(self, rng):
        m = og.momenta_expressions(quintic_problem())
        for _ in range(10):
            b = jet_binding(rng, 1, 5)
            assert rel_err(ex.evaluate(m.momentum(1, 2), b), b[Q(1, 3)]) < 1e-14
            assert rel_err(ex.evaluate(m.momentum(1, 1), b), -b[Q(1, 4)]) < 1e-14
            assert rel_err(ex.evaluate(m.momentum(1, 0), b), b[Q(1, 5)]) < 1e-14

    def test_order_bounds(self):
        for problem in (cubic_problem(), quintic_problem(), two_dof_problem()):
            N = problem.N
            m = og.momenta_expressions(problem)
            for alpha in range(N):
                for i in range(1, problem.n + 1):
                    orders = {
                        s.order
                        for s in ex.free_symbols(m.momentum(i, alpha))
                        if s.kind == "q"
                    }
                    assert max(orders) <= N + (N - 1 - alpha)
            # the top row is the plain Legendre gradient, order <= N
            for i in range(1, problem.n + 1):
                orders = {
                    s.order
                    for s in ex.free_symbols(m.momentum(i, N - 1))
                    if s.kind == "q"
                }
                assert max(orders) <= N

    def test_residual_shape(self, rng):
        m = og.momenta_expressions(cubic_problem())
        (r,) = m.residuals
        b = {ex.momentum(1, 1): 5.0, Q(1, 2): 3.0}
        assert ex.evaluate(r, b) == 2.0


class TestJetToPhase:
    def test_cubic_jets(self):
        s = og.jet_to_phase(cubic_problem(), lg.JetPoint(0.0, ((0.0, 0.0, 0.0, 6.0),)))
        assert s.q == ((0.0, 0.0),)
        assert s.p == ((-6.0, 0.0),)

    def test_classical_free_particle(self):
        s = og.jet_to_phase(free_particle(), lg.JetPoint(0.0, ((1.0, 2.0),)))
        assert s.q == ((1.0,),)
        assert s.p == ((2.0,),)

    def test_pais_uhlenbeck_on_cosine(self):
        s = og.jet_to_phase(pais_uhlenbeck(), cos_jets(0.0))
        assert s.q == ((1.0, 0.0),)
        assert np.allclose(s.p, ((0.0, -1.0),), atol=1e-15)

    def test_order_check(self):
        with pytest.raises(lg.ProblemError):
            og.jet_to_phase(cubic_problem(), lg.JetPoint(0.0, ((0.0, 0.0),)))


class TestPhaseState:
    def test_flat_round_trip(self, rng):
        flat = rng.uniform(-1, 1, size=8)
        s = og.PhaseState.from_flat(0.25, flat, n=2, N=2)
        assert s.q[0] == (flat[0], flat[2])
        assert s.q[1] == (flat[1], flat[3])
        assert s.p[0] == (flat[4], flat[6])
        assert np.array_equal(s.flat(), flat)

    def test_labels_match_layout(self):
        assert og.phase_labels(2, 2) == (
            "q1_0", "q2_0", "q1_1", "q2_1", "p1_0", "p2_0", "p1_1", "p2_1",
        )


class TestSolveTopVelocity:
    def test_linear_relation(self):
        s = og.PhaseState(0.0, ((0.0, 0.0),), ((0.0, 3.0),))
        out = og.solve_top_velocity(cubic_problem(), s)
        assert abs(out[0] - 3.0) < 1e-12

    def test_pais_uhlenbeck(self):
        s = og.PhaseState(0.0, ((1.0, 0.0),), ((0.0, -1.0),))
        out = og.solve_top_velocity(pais_uhlenbeck(), s)
        assert abs(out[0] + 1.0) < 1e-12

    def test_cubic_root_with_guess(self):
        s = og.PhaseState(0.0, ((0.0, 0.0),), ((0.0, 8.0),))
        out = og.solve_top_velocity(quartic_problem(), s, guess=[1.0])
        assert rel_err(out[0], 2.0) < 1e-10

    def test_cubic_root_against_bisection(self, rng):
        problem = quartic_problem()
        for _ in range(10):
            p_top = float(rng.uniform(0.5, 6.0))
            s = og.PhaseState(0.0, ((0.0, 0.0),), ((0.0, p_top),))
            out = og.solve_top_velocity(problem, s, guess=[1.0])
            lo, hi = 0.0, 4.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid**3 < p_top:
                    lo = mid
                else:
                    hi = mid
            assert rel_err(out[0], 0.5 * (lo + hi)) < 1e-10

    def test_right_inverse_property(self, rng):
        for problem in (cubic_problem(), pais_uhlenbeck(), two_dof_problem()):
            n, N = problem.n, problem.N
            for _ in range(10):
                flat = rng.uniform(-2, 2, size=2 * n * N)
                s = og.PhaseState.from_flat(0.0, flat, n, N)
                q_top = og.solve_top_velocity(problem, s)
                b = s.binding()
                b.update(problem.parameter_binding)
                for i in range(1, n + 1):
                    b[Q(i, N)] = q_top[i - 1]
                for i in range(1, n + 1):
                    grad = ex.evaluate(ex.partial(problem.L, Q(i, N)), b)
                    assert rel_err(grad, s.p[i - 1][N - 1]) < 1e-12

    def test_degenerate_raises(self):
        problem = lg.LagrangianProblem(n=1, N=2, L=ex.parse("q1_2"))
        s = og.PhaseState(0.0, ((0.0, 0.0),), ((0.0, 2.0),))
        with pytest.raises(lg.DegeneracyError):
            og.solve_top_velocity(problem, s)


class TestHamiltonian:
    def test_cubic_closed_form(self, rng):
        problem = cubic_problem()
        for _ in range(10):
            q1 = float(rng.uniform(-2, 2))
            p0, p1 = rng.uniform(-2, 2, size=2)
            s = og.PhaseState(0.0, ((0.0, q1),), ((p0, p1),))
            h = og.hamiltonian_value(problem, s)
            assert rel_err(h, p0 * q1 + 0.5 * p1**2) < 1e-12

    def test_free_particle(self, rng):
        problem = free_particle()
        for _ in range(5):
            p0 = float(rng.uniform(-2, 2))
            s = og.PhaseState(0.0, ((1.0,),), ((p0,),))
            assert rel_err(og.hamiltonian_value(problem, s), 0.5 * p0**2) < 1e-12

    def test_pais_uhlenbeck_ghost_energy(self):
        problem = pais_uhlenbeck()
        for t in np.linspace(0.0, 6.0, 25):
            s = og.jet_to_phase(problem, cos_jets(float(t)))
            assert abs(og.hamiltonian_value(problem, s) + 1.5) < 1e-12


class TestField:
    def test_cubic_flow_values(self):
        s = og.PhaseState(0.0, ((0.0, 0.0),), ((-6.0, 0.0),))
        out = og.hamiltonian_field_at(cubic_problem(), s)
        assert np.allclose(out, [0.0, 0.0, 0.0, 6.0], atol=1e-14)

    def test_free_particle_flow(self):
        s = og.PhaseState(0.0, ((1.0,),), ((2.0,),))
        out = og.hamiltonian_field_at(free_particle(), s)
        assert np.allclose(out, [2.0, 0.0], atol=1e-15)

    def test_pais_uhlenbeck_flow(self):
        s = og.PhaseState(0.0, ((1.0, 0.0),), ((0.0, -1.0),))
        out = og.hamiltonian_field_at(pais_uhlenbeck(), s)
        assert np.allclose(out, [0.0, -1.0, 4.0, 0.0], atol=1e-14)

    def test_legendre_identities_by_finite_difference(self, rng):
        cases = [
            (cubic_problem(), None),
            (pais_uhlenbeck(), None),
            (two_dof_problem(), None),
            (quartic_problem(), [1.0]),
        ]
        for problem, guess in cases:
            n, N = problem.n, problem.N
            dim = 2 * n * N
            checked = 0
            while checked < 25:
                flat = rng.uniform(0.5, 2.0, size=dim)
                s = og.PhaseState.from_flat(0.0, flat, n, N)
                try:
                    base_top = og.solve_top_velocity(problem, s, guess)
                except (lg.DegeneracyError, og.ConvergenceError):
                    continue
                field = og.hamiltonian_field_at(problem, s, guess=base_top)

                def h_at(vec):
                    st = og.PhaseState.from_flat(0.0, vec, n, N)
                    return og.hamiltonian_value(problem, st, guess=base_top)

                h = 1e-6
                for k in range(dim):
                    up = flat.copy()
                    up[k] += h
                    dn = flat.copy()
                    dn[k] -= h
                    fd = (h_at(up) - h_at(dn)) / (2 * h)
                    # dH/dq_k = -pdot_k ; dH/dp_k = qdot_k
                    want = field[n * N + k] * -1.0 if k < n * N else field[k - n * N]
                    assert rel_err(fd, want) < 1e-6
                checked += 1


class TestWarmStart:
    def test_field_instances_do_not_share_guesses(self):
        problem = quartic_problem()
        f1 = og.hamiltonian_field(problem)
        f2 = og.hamiltonian_field(problem)
        f1.solver.guess = np.array([2.0])
        assert f2.solver.guess[0] == 0.0
