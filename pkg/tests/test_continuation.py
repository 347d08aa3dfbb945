import numpy as np
import pytest
from scipy.optimize import bisect

from invfracture import assembly, postprocess
from invfracture.assembly import ScaledProblem
from invfracture.continuation import (
    ContinuationPlan,
    Side,
    branch_switch,
    detect_bifurcations,
    extend_symmetric,
    homogeneous_state,
)
from invfracture.mesh import Mesh, eval_field


def scalar_root(n, eps=0.1):
    # eps^2 (n pi)^2 + lam^2 M*(1/lam) with M*(H) = 6H - 4
    f = lambda lam: eps**2 * (n * np.pi) ** 2 + lam**2 * (6.0 / lam - 4.0)
    return bisect(f, 1.5, 5.0, xtol=1e-14)


class TestPlan:
    def test_defaults(self):
        p = ContinuationPlan()
        assert p.epsilon == 0.1 and p.n_max == 6 and p.elements_total == 600
        assert [p.cell_elements(n) for n in range(1, 7)] == [600, 300, 200, 150, 120, 100]
        g = p.grid()
        assert g[0] == 1.0 and g[-1] == 1.9 and len(g) == 91

    @pytest.mark.parametrize(
        "kw", [{"epsilon": 0.0}, {"lambda_start": 0.9}, {"step": -0.1}, {"n_max": 0}, {"elements_total": 50}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ContinuationPlan(**kw)

    def test_indivisible_mesh(self):
        with pytest.raises(ValueError):
            ContinuationPlan(elements_total=601, n_max=2)


class TestHomogeneous:
    def test_unstretched(self, paper):
        prob = ScaledProblem(0.1, 1.0, paper, Mesh(20))
        st = homogeneous_state(prob)
        assert assembly.energy(prob, st.field) == 0.0
        assert postprocess.stress(prob, st)[0] == 0.0

    def test_lambda_two(self, paper):
        prob = ScaledProblem(0.1, 2.0, paper, Mesh(20))
        st = homogeneous_state(prob)
        assert assembly.energy(prob, st.field) == pytest.approx(0.25, rel=1e-14)
        mean, dev = postprocess.stress(prob, st)
        assert mean == pytest.approx(2 * 0.25 * 0.5, rel=1e-13)
        assert dev <= 1e-12


class TestBifurcations:
    def test_against_scalar_oracle(self, coarse_bifurcations):
        for n, b in enumerate(coarse_bifurcations, start=1):
            assert b.mode == n
            assert abs(b.lam - scalar_root(n)) / scalar_root(n) <= 1e-4

    def test_oracle_closed_form(self):
        # the criterion is the quadratic 4 lam^2 - 6 lam - eps^2 (n pi)^2 = 0
        for n in (1, 2, 5):
            c = 0.01 * (n * np.pi) ** 2
            assert scalar_root(n) == pytest.approx((6 + np.sqrt(36 + 16 * c)) / 8, rel=1e-12)

    def test_small_epsilon_limit(self, paper):
        b = detect_bifurcations(0.01, paper, 2, n_elems=60)
        assert all(1.5 < x.lam < 1.502 for x in b)
        assert b[0].lam < b[1].lam


class TestSwitch:
    def test_zero_amplitude(self, paper):
        prob = ScaledProblem(0.1, 1.5, paper, Mesh(30, 0.0, 0.5))
        st = branch_switch(prob, 1.56, 2, "A", 0.0)
        assert np.all(st.field.dofs == 0.0)

    def test_boundary_values(self, paper):
        prob = ScaledProblem(0.1, 1.5, paper, Mesh(30, 0.0, 0.5))
        st = branch_switch(prob, 1.56, 2, Side.B, 1e-3)
        assert st.field.values[0] == 0.0 and st.field.values[-1] == 0.0
        assert np.max(np.abs(st.field.values)) > 0

    def test_sides_equal_energy(self, coarse_branches, coarse_plan):
        a = {s.lam: s.energy for s in coarse_branches["1A"].samples if not s.broken}
        b = {s.lam: s.energy for s in coarse_branches["1B"].samples if not s.broken}
        common = sorted(set(a) & set(b))
        assert common
        for lam in common:
            assert abs(a[lam] - b[lam]) <= 1e-9


class TestExtension:
    def _cell_state(self, coarse_branches, key):
        return [s for s in coarse_branches[key].samples if s.broken][-1].state

    def test_identity_for_one_cell(self, coarse_branches):
        st = self._cell_state(coarse_branches, "1A")
        ext = extend_symmetric(st, 1)
        np.testing.assert_array_equal(ext.field.dofs, st.field.dofs)
        np.testing.assert_array_equal(ext.mu, st.mu)

    def test_odd_symmetry(self, coarse_branches):
        full = self._cell_state(coarse_branches, "2A")
        s = np.linspace(0, 1, 41)
        u, _, _ = eval_field(full.field, s)
        np.testing.assert_allclose(u, -u[::-1], atol=1e-14)
        assert abs(eval_field(full.field, 0.5)[0]) <= 1e-14

    def test_energy_scales_with_cells(self, coarse_plan, paper):
        n = 2
        cell = coarse_plan.cell_mesh(n)
        lam = 1.55
        prob = coarse_plan.problem(lam, cell)
        from invfracture.activeset import solve_equilibrium

        st = solve_equilibrium(prob, branch_switch(prob, 1.5631, n, "A", 0.01 * cell.length))
        ext = extend_symmetric(st, n)
        E_cell = assembly.energy(prob, st.field)
        E_full = assembly.energy(coarse_plan.problem(lam, ext.mesh), ext.field)
        assert E_full == pytest.approx(n * E_cell, rel=1e-12)

    def test_residual_invariance(self, coarse_branches, coarse_plan):
        for key in ("2A", "2B"):
            for smp in coarse_branches[key].samples:
                st = smp.state
                assert st.residual_norm <= max(10 * st.meta["cell_residual"], 1e-12)

    def test_rejects_wrong_cell(self, coarse_branches):
        st = self._cell_state(coarse_branches, "1A")
        with pytest.raises(ValueError):
            extend_symmetric(st, 3)


class TestBranches:
    def test_record_shape(self, coarse_branches, coarse_bifurcations):
        for key, rec in coarse_branches.items():
            assert rec.branch == int(key[0]) and rec.side == key[1]
            lams = [s.lam for s in rec.samples]
            assert lams == sorted(lams)
            assert rec.lambda_breakage < rec.lambda_bifurcation
            assert rec.irreversible

    def test_stress_drops_to_zero_then_stays(self, coarse_branches):
        rec = coarse_branches["1A"]
        unbroken = [s for s in rec.samples if not s.broken]
        broken = [s for s in rec.samples if s.broken]
        # along the unbroken branch the stress grows with lambda, away from N_1
        means = [s.stress_mean for s in unbroken]
        assert np.all(np.diff(means) > 0)
        assert min(means) < 0.05
        assert max(abs(s.stress_mean) for s in broken) < 1e-3

    def test_end_crack(self, coarse_branches):
        last = coarse_branches["1A"].samples[-1]
        assert last.broken and last.lam == 1.9
        assert last.crack_set == [pytest.approx(1.0, abs=1e-12)]

    def test_broken_samples_stable(self, coarse_branches):
        for rec in coarse_branches.values():
            for smp in rec.samples:
                if smp.broken:
                    assert smp.verdict == "Stable", (rec.branch, rec.side, smp.lam)
