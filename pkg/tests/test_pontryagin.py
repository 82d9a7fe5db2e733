"""Constrained problems: stationarity, reduction, embedding, action."""

from fractions import Fraction

import numpy as np
import pytest

from ostrokit import expr as ex
from ostrokit import lagrangian as lg
from ostrokit import ostrogradsky as og
from ostrokit import pontryagin as pt
from ostrokit.lagrangian import ProblemError
from ostrokit.solvers import ConvergenceError

from conftest import rel_err
from test_lagrangian import (
    cubic_problem,
    pais_uhlenbeck,
    quartic_problem,
    quintic_problem,
    two_dof_problem,
    jet_binding,
)


def constrained_example() -> pt.ConstrainedProblem:
    # two coordinates driven by one control: psi = (z, z^2), L = z^2 / 2
    z = ex.sym(ex.velocity(1))
    return pt.ConstrainedProblem(n=2, r=1, psi=(z, z * z), L=ex.parse("z1^2 / 2"))


def example_state(p1: float, p2: float, z: float = 1.0, t: float = 0.0):
    return pt.ContactState(t=t, q=(0.3, -0.7), z=(z,), p=(p1, p2))


class TestConstruction:
    def test_example_builds(self):
        cp = constrained_example()
        assert cp.n == 2 and cp.r == 1

    def test_psi_count_mismatch(self):
        with pytest.raises(ProblemError, match="constraint expressions"):
            pt.ConstrainedProblem(n=2, r=1, psi=(ex.parse("z1"),), L=ex.parse("z1"))

    def test_rejects_higher_jets(self):
        with pytest.raises(ProblemError, match="q<1..1>_0"):
            pt.ConstrainedProblem(n=1, r=1, psi=(ex.parse("q1_1"),), L=ex.parse("z1"))

    def test_rejects_momenta_in_lagrangian(self):
        with pytest.raises(ProblemError):
            pt.ConstrainedProblem(n=1, r=1, psi=(ex.parse("z1"),), L=ex.parse("p1_0"))

    def test_rejects_undeclared_parameter(self):
        with pytest.raises(ProblemError, match="undeclared parameter"):
            pt.ConstrainedProblem(n=1, r=1, psi=(ex.parse("z1"),), L=ex.parse("k*z1^2"))

    def test_rejects_out_of_range_control(self):
        with pytest.raises(ProblemError, match="controls are z1..z1"):
            pt.ConstrainedProblem(n=1, r=1, psi=(ex.parse("z2"),), L=ex.parse("z1"))

    def test_rejects_rank_deficient_constraints(self):
        # psi does not involve z at all, so dpsi/dz vanishes identically
        with pytest.raises(ProblemError, match="rank"):
            pt.ConstrainedProblem(n=1, r=1, psi=(ex.parse("q1_0"),), L=ex.parse("z1^2"))

    def test_hamiltonian_expr_symbols(self):
        cp = constrained_example()
        free = ex.free_symbols(cp.hamiltonian_expr)
        assert ex.momentum(1, 0) in free and ex.momentum(2, 0) in free
        assert ex.velocity(1) in free

    def test_contact_state_requires_matching_momenta(self):
        with pytest.raises(ProblemError):
            pt.ContactState(t=0.0, q=(1.0, 2.0), z=(0.5,), p=(1.0,))


class TestPointwise:
    def test_hamiltonian_value(self):
        cp = constrained_example()
        # p1*z + p2*z^2 - z^2/2 at z=1: 1 + 1 - 1/2
        assert pt.pontryagin_hamiltonian_value(cp, example_state(1.0, 1.0)) == 1.5

    def test_stationarity_residual(self):
        cp = constrained_example()
        # dH/dz = p1 + 2 p2 z - z
        res = pt.stationarity_residual(cp, example_state(1.0, 1.0))
        assert res.shape == (1,) and abs(res[0] - 2.0) < 1e-15
        res = pt.stationarity_residual(cp, example_state(1.0, 0.0))
        assert abs(res[0]) == 0.0

    def test_regularity_values(self):
        cp = constrained_example()
        # d2H/dz2 = 2 p2 - 1
        assert pt.regularity_at(cp, example_state(0.2, 1.0)) == 1.0
        assert pt.regularity_at(cp, example_state(0.2, 0.5)) == 0.0

    def test_solve_z_linear_cases(self):
        cp = constrained_example()
        # p2 = 1: residual p1 + z = 0
        z = pt.solve_z(cp, 0.0, (0.0, 0.0), (1.0, 1.0))
        assert abs(z[0] + 1.0) < 1e-12
        # p2 = 0: residual p1 - z = 0
        for p1 in (-2.0, 0.3, 1.7):
            z = pt.solve_z(cp, 0.0, (0.0, 0.0), (p1, 0.0))
            assert abs(z[0] - p1) < 1e-12

    def test_solve_z_rejects_critical_momentum(self):
        cp = constrained_example()
        with pytest.raises(pt.RegularityError):
            pt.solve_z(cp, 0.0, (0.0, 0.0), (1.0, 0.5))

    def test_reduced_hamiltonian_closed_form(self, rng):
        cp = constrained_example()
        for _ in range(40):
            p1 = float(rng.uniform(-2, 2))
            p2 = float(rng.uniform(-2, 2))
            if abs(1.0 - 2.0 * p2) < 0.2:
                continue
            got = pt.reduced_hamiltonian_value(cp, 0.0, (0.0, 0.0), (p1, p2))
            want = 0.5 * p1 * p1 / (1.0 - 2.0 * p2)
            assert rel_err(got, want) < 1e-12

    def test_reduced_field_example(self):
        cp = constrained_example()
        out = pt.reduced_field_at(cp, 0.0, (0.4, -0.1), (1.0, 0.0))
        assert np.allclose(out, [1.0, 1.0, 0.0, 0.0], atol=1e-12)

    def test_full_and_reduced_fields_agree(self, rng):
        cp = constrained_example()
        full = pt.full_field(cp)
        red = pt.reduced_field(cp)
        for _ in range(25):
            y = rng.uniform(-1.5, 1.5, size=4)
            if abs(1.0 - 2.0 * y[3]) < 0.2:
                continue
            t = float(rng.uniform(0, 1))
            assert np.max(np.abs(full(t, y) - red(t, y))) < 1e-12

    def test_field_labels(self):
        cp = constrained_example()
        assert pt.reduced_field(cp).labels == ("q1_0", "q2_0", "p1_0", "p2_0")
        assert pt.contact_labels(2, 1) == ("q1_0", "q2_0", "z1", "p1_0", "p2_0")


def straight_section(m: int = 2001, p_const: bool = False):
    """Admissible extremal of the example: q = (t, t), z = 1, p = (1, 0)."""
    t = np.linspace(0.0, 1.0, m)
    q = np.stack([t, t], axis=1)
    z = np.ones((m, 1))
    if p_const:
        p = np.stack([np.ones(m), np.zeros(m)], axis=1)
    else:
        p = np.stack([1.0 + 0.2 * np.sin(2 * np.pi * t), 0.1 * np.cos(np.pi * t)], axis=1)
    return pt.DiscreteSection(t, q, z, p)


class TestSections:
    def test_needs_two_samples(self):
        with pytest.raises(ProblemError, match="at least 2"):
            pt.DiscreteSection([0.0], [[1.0]], [[0.0]], [[0.0]])

    def test_needs_increasing_times(self):
        with pytest.raises(ProblemError, match="increasing"):
            pt.DiscreteSection([0.0, 0.0], [[1.0], [1.0]], [[0.0], [0.0]], [[0.0], [0.0]])

    def test_admissibility_zero_on_admissible_curve(self):
        cp = constrained_example()
        res = pt.admissibility_residual(cp, straight_section(101))
        assert res.shape == (99, 2)
        assert np.max(np.abs(res)) < 1e-12

    def test_admissibility_detects_violation(self):
        cp = constrained_example()
        sec = straight_section(101)
        bad = pt.DiscreteSection(sec.t, sec.q * 1.5, sec.z, sec.p)
        res = pt.admissibility_residual(cp, bad)
        assert np.max(np.abs(res)) > 0.4

    def test_admissibility_needs_uniform_step(self):
        cp = constrained_example()
        t = np.array([0.0, 0.1, 0.3, 0.4])
        sec = pt.DiscreteSection(t, np.zeros((4, 2)), np.ones((4, 1)), np.zeros((4, 2)))
        with pytest.raises(ProblemError, match="uniform"):
            pt.admissibility_residual(cp, sec)

    def test_admissibility_needs_three_samples(self):
        cp = constrained_example()
        sec = pt.DiscreteSection(
            [0.0, 1.0], np.zeros((2, 2)), np.ones((2, 1)), np.zeros((2, 2))
        )
        with pytest.raises(ProblemError, match="3 samples"):
            pt.admissibility_residual(cp, sec)

    def test_action_on_admissible_curve_is_lagrangian_integral(self):
        # on an admissible section the momentum terms cancel and the
        # action is the plain integral of L, here 1/2 over [0, 1]
        cp = constrained_example()
        val = pt.action_value(cp, straight_section(2001))
        assert abs(val - 0.5) < 1e-6

    def test_action_independent_of_momenta_on_admissible_curve(self):
        cp = constrained_example()
        a = pt.action_value(cp, straight_section(501, p_const=True))
        b = pt.action_value(cp, straight_section(501, p_const=False))
        assert abs(a - b) < 1e-9

    def test_perturbed_shapes_must_match(self):
        sec = straight_section(51)
        bad = pt.SectionPerturbation(
            np.zeros((50, 2)), np.zeros((51, 1)), np.zeros((51, 2))
        )
        with pytest.raises(ProblemError, match="shapes"):
            sec.perturbed(0.1, bad)

    def test_fixes_q_endpoints_flag(self):
        m = 11
        good = pt.SectionPerturbation(
            np.vstack([np.zeros((1, 2)), np.ones((m - 2, 2)), np.zeros((1, 2))]),
            np.ones((m, 1)),
            np.ones((m, 2)),
        )
        assert good.fixes_q_endpoints
        bad = pt.SectionPerturbation(np.ones((m, 2)), np.ones((m, 1)), np.ones((m, 2)))
        assert not bad.fixes_q_endpoints


def smooth_perturbation(sec: pt.DiscreteSection, rng) -> pt.SectionPerturbation:
    t = sec.t
    span = t[-1] - t[0]
    s = (t - t[0]) / span

    def modes(width):
        cols = []
        for _ in range(width):
            c = rng.uniform(-1, 1, size=3)
            cols.append(sum(c[k] * np.sin((k + 1) * np.pi * s) for k in range(3)))
        return np.stack(cols, axis=1)

    dq = modes(sec.q.shape[1])
    dq[0] = 0.0  # sin modes vanish at the ends only up to roundoff
    dq[-1] = 0.0
    dz = modes(sec.z.shape[1]) + rng.uniform(-1, 1)
    dp = modes(sec.p.shape[1]) + rng.uniform(-1, 1)
    return pt.SectionPerturbation(dq, dz, dp)


class TestStationaryAction:
    def test_first_order_change_vanishes_on_extremal(self, rng):
        # p = (1, 0) is constant along the reduced flow, z = 1, q = (t, t):
        # an extremal.  The action change under admissible deformations
        # must be quadratic in the amplitude.
        cp = constrained_example()
        sec = straight_section(2001, p_const=True)
        base = pt.action_value(cp, sec)
        direction = smooth_perturbation(sec, rng)
        assert direction.fixes_q_endpoints
        d2 = pt.action_value(cp, sec.perturbed(1e-2, direction)) - base
        d3 = pt.action_value(cp, sec.perturbed(1e-3, direction)) - base
        ratio = abs(d2) / abs(d3)
        assert 30.0 < ratio < 300.0

    def test_first_order_change_survives_off_extremal(self, rng):
        # same protocol on a non-extremal section scales linearly instead
        cp = constrained_example()
        sec = straight_section(2001, p_const=True)
        off = pt.DiscreteSection(sec.t, sec.q, sec.z + 0.3, sec.p)
        base = pt.action_value(cp, off)
        direction = smooth_perturbation(off, rng)
        d2 = pt.action_value(cp, off.perturbed(1e-2, direction)) - base
        d3 = pt.action_value(cp, off.perturbed(1e-3, direction)) - base
        ratio = abs(d2) / abs(d3)
        assert 5.0 < ratio < 20.0


class TestEmbedding:
    def test_cubic_shape(self):
        cp = pt.from_higher_order(cubic_problem())
        assert cp.n == 2 and cp.r == 1
        assert ex.to_text(cp.psi[0]) == "q2_0"
        assert ex.to_text(cp.psi[1]) == "z1"
        diff = cp.L - ex.parse("z1^2 / 2")
        for v in (0.0, 0.7, -1.3):
            assert ex.evaluate(diff, {ex.velocity(1): v}) == 0.0

    def test_describe_mapping(self):
        cp = pt.from_higher_order(two_dof_problem())
        assert cp.embedding.describe() == [
            "q1_0 = q1_0",
            "q2_0 = q2_0",
            "q3_0 = q1_1",
            "q4_0 = q2_1",
            "z1 = q1_2",
            "z2 = q2_2",
        ]

    def test_flat_index_round_trip(self):
        emb = pt.from_higher_order(quintic_problem()).embedding
        for k in range(1, 4):
            i, alpha = emb.jet_of_flat(k)
            assert emb.flat_index(i, alpha) == k

    def test_cubic_embedded_regularity(self):
        # d2H/dz2 = -d2L/dz2 = -1 everywhere
        cp = pt.from_higher_order(cubic_problem())
        s = pt.ContactState(0.0, (0.3, 0.8), (0.5,), (1.0, 2.0))
        assert pt.regularity_at(cp, s) == -1.0

    def test_contact_from_jets_cubic(self):
        src = cubic_problem()
        cp = pt.from_higher_order(src)
        point = lg.JetPoint.from_flat(0.0, [0.0, 0.0, 0.0, 6.0], 1, 3)
        s = pt.contact_from_jets(cp, point)
        assert s.q == (0.0, 0.0) and s.z == (0.0,) and s.p == (-6.0, 0.0)
        # admissible starts sit on the stationarity surface
        assert np.max(np.abs(pt.stationarity_residual(cp, s))) < 1e-12

    def test_contact_from_jets_requires_embedding(self):
        cp = constrained_example()
        point = lg.JetPoint.from_flat(0.0, [0.0, 0.0], 1, 1)
        with pytest.raises(ProblemError, match="higher-order"):
            pt.contact_from_jets(cp, point)

    @pytest.mark.parametrize(
        "factory", [cubic_problem, pais_uhlenbeck, quintic_problem, two_dof_problem]
    )
    def test_reduction_matches_direct_construction(self, factory, rng):
        # the embedded problem's reduced Hamiltonian and flow must equal
        # the ones built directly from the higher-order Lagrangian
        src = factory()
        cp = pt.from_higher_order(src)
        nN = src.n * src.N
        for _ in range(30):
            point = lg.JetPoint.from_flat(
                float(rng.uniform(-1, 1)),
                rng.uniform(-1.5, 1.5, size=src.n * 2 * src.N),
                src.n,
                2 * src.N - 1,
            )
            phase = og.jet_to_phase(src, point)
            flat = phase.flat()
            h_direct = og.hamiltonian_value(src, phase)
            h_embedded = pt.reduced_hamiltonian_value(cp, phase.t, flat[:nN], flat[nN:])
            assert rel_err(h_direct, h_embedded) < 1e-10
            f_direct = og.hamiltonian_field_at(src, phase)
            f_embedded = pt.reduced_field_at(cp, phase.t, flat[:nN], flat[nN:])
            assert np.max(np.abs(f_direct - f_embedded)) < 1e-10

    def test_reduction_matches_for_nonlinear_top_relation(self, rng):
        src = quartic_problem()
        cp = pt.from_higher_order(src)
        for _ in range(15):
            point = lg.JetPoint.from_flat(
                0.0, rng.uniform(0.5, 1.5, size=4), 1, 3
            )
            phase = og.jet_to_phase(src, point)
            flat = phase.flat()
            h_direct = og.hamiltonian_value(src, phase, guess=[1.0])
            h_embedded = pt.reduced_hamiltonian_value(
                cp, phase.t, flat[:2], flat[2:], guess=[1.0]
            )
            assert rel_err(h_direct, h_embedded) < 1e-10

    def test_embedded_full_route_matches_reduced(self, rng):
        cp = pt.from_higher_order(pais_uhlenbeck())
        full = pt.full_field(cp)
        red = pt.reduced_field(cp)
        for _ in range(20):
            y = rng.uniform(-1.5, 1.5, size=4)
            t = float(rng.uniform(0, 1))
            assert np.max(np.abs(full(t, y) - red(t, y))) < 1e-12

    def test_section_from_states(self):
        # reduced flow of the embedded cubic from jets (0,0,0,6):
        # q(t) = t^3, p1 = -6, p2 = 6t
        cp = pt.from_higher_order(cubic_problem())
        t = np.linspace(0.0, 1.0, 11)
        states = np.stack([t**3, 3 * t**2, -6 * np.ones_like(t), 6 * t], axis=1)
        sec = pt.section_from_states(cp, t, states)
        assert np.max(np.abs(sec.z[:, 0] - 6 * t)) < 1e-10
        res = pt.admissibility_residual(cp, sec)
        # central differences of t^3 on step 0.1 carry O(h^2) error
        assert np.max(np.abs(res)) < 0.02
