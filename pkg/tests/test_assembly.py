import numpy as np
import pytest
import scipy.linalg as sla

from invfracture import assembly
from invfracture.assembly import ScaledProblem
from invfracture.errors import ConstraintViolation
from invfracture.mesh import HermiteField, Mesh


def random_feasible(mesh, rng, amp=0.03):
    # a few sine modes keep the slope well above -1
    s = mesh.nodes
    k = np.arange(1, 5)
    c = amp * rng.standard_normal(4) / k**2
    u = np.sin(np.pi * np.outer(s, k)) @ c
    du = np.cos(np.pi * np.outer(s, k)) @ (np.pi * k * c)
    dofs = np.empty(mesh.n_dofs)
    dofs[0::2], dofs[1::2] = u, du
    return HermiteField(mesh, dofs)


def fd_gradient(prob, U, h=1e-6):
    g = np.empty_like(U)
    for i in range(len(U)):
        e = np.zeros_like(U)
        e[i] = h
        g[i] = (assembly.energy(prob, U + e) - assembly.energy(prob, U - e)) / (2 * h)
    return g


class TestEnergy:
    def test_unstretched(self, paper):
        assert assembly.energy(ScaledProblem(0.1, 1.0, paper, Mesh(10)), np.zeros(22)) == 0.0

    @pytest.mark.parametrize("lam", [2.0, 1.5163])
    def test_homogeneous_closed_form(self, paper, lam):
        E = assembly.energy(ScaledProblem(0.1, lam, paper, Mesh(13)), np.zeros(28))
        H = 1 / lam
        assert E == pytest.approx(lam * H * (1 - H) ** 2, rel=1e-13)

    def test_rejects_negative_inverse_strain(self, paper):
        m = Mesh(4)
        U = np.zeros(m.n_dofs)
        U[0::2], U[1::2] = -1.5 * m.nodes, -1.5
        with pytest.raises(ConstraintViolation):
            assembly.energy(ScaledProblem(0.1, 1.2, paper, m), U)


class TestResidual:
    @pytest.mark.parametrize("lam", [1.0, 1.3, 1.9])
    def test_homogeneous_is_equilibrium(self, paper, lam):
        m = Mesh(20)
        r = assembly.residual(ScaledProblem(0.1, lam, paper, m), np.zeros(m.n_dofs), np.zeros(m.n_nodes), [])
        assert np.max(np.abs(r)) <= 1e-14

    def test_gradient_consistency(self, paper, rng):
        m = Mesh(16)
        for _ in range(10):
            lam = rng.uniform(1.0, 1.9)
            prob = ScaledProblem(0.1, lam, paper, m)
            U = random_feasible(m, rng).dofs
            r = assembly.field_residual(prob, U)
            g = lam**3 * fd_gradient(prob, U)
            assert np.linalg.norm(r - g) / np.linalg.norm(r) <= 1e-6

    def test_complementarity_rows(self, paper):
        m = Mesh(6)
        U = np.zeros(m.n_dofs)
        U[1::2] = -1.0
        active = np.arange(m.n_nodes)
        r = assembly.residual(ScaledProblem(0.1, 1.5, paper, m), U, np.zeros(m.n_nodes), active)
        assert np.allclose(r[m.n_dofs : m.n_dofs + m.n_nodes], 0.0)

    def test_multiplier_enters_slope_rows(self, paper):
        m = Mesh(6)
        prob = ScaledProblem(0.1, 1.5, paper, m)
        mu = np.zeros(m.n_nodes)
        mu[3] = 2.0
        r0 = assembly.residual(prob, np.zeros(m.n_dofs), np.zeros(m.n_nodes), [3])
        r1 = assembly.residual(prob, np.zeros(m.n_dofs), mu, [3])
        d = r1 - r0
        assert d[7] == pytest.approx(-2.0 * 1.5**4)
        assert np.count_nonzero(d) == 1

    def test_shape_mismatch(self, paper):
        m = Mesh(6)
        with pytest.raises(ValueError):
            assembly.residual(ScaledProblem(0.1, 1.5, paper, m), np.zeros(5), np.zeros(m.n_nodes), [])


class TestTangent:
    def test_matches_fd_of_residual(self, paper, rng):
        m = Mesh(16)
        for _ in range(10):
            prob = ScaledProblem(0.1, rng.uniform(1.0, 1.9), paper, m)
            U = random_feasible(m, rng).dofs
            K = assembly.stiffness(prob, U)
            v = rng.standard_normal(m.n_dofs)
            h = 1e-6
            fd = (assembly.field_residual(prob, U + h * v) - assembly.field_residual(prob, U - h * v)) / (2 * h)
            assert np.linalg.norm(K @ v - fd) / np.linalg.norm(fd) <= 1e-6

    def test_symmetric(self, paper, rng):
        m = Mesh(25)
        prob = ScaledProblem(0.1, 1.7, paper, m)
        A = assembly.tangent(prob, random_feasible(m, rng), [3, 4, 5]).matrix
        assert abs(A - A.T).max() <= 1e-12

    def test_constant_coefficient_block(self, paper):
        m = Mesh(12)
        lam = 1.4
        prob = ScaledProblem(0.1, lam, paper, m)
        B, K2, _ = assembly.gram_matrices(m)
        Mstar = 6 / lam - 4
        ref = 0.01 * B + lam**2 * Mstar * K2
        assert abs(assembly.stiffness(prob, np.zeros(m.n_dofs)) - ref).max() <= 1e-10 * abs(ref).max()

    def test_bordered_dimension(self, paper):
        m = Mesh(10)
        kkt = assembly.tangent(ScaledProblem(0.1, 1.5, paper, m), np.zeros(m.n_dofs), [2, 3, 4])
        # two flat elements between three consecutive active nodes
        assert kkt.matrix.shape == (m.n_dofs + 3 + 2,) * 2


class TestSecondVariation:
    def test_sine_mode_quadratic_form(self, paper):
        m = Mesh(64)
        prob = ScaledProblem(0.1, 1.0, paper, m)
        v = HermiteField.interpolate(m, lambda s: np.sin(np.pi * s), lambda s: np.pi * np.cos(np.pi * s)).dofs
        G = assembly.second_variation_matrix(prob, np.zeros(m.n_dofs))
        ref = 0.01 * np.pi**4 / 2 + 2.0 * np.pi**2 / 2
        assert v @ (G @ v) == pytest.approx(ref, rel=1e-6)

    def test_zero_vector(self, paper):
        m = Mesh(8)
        G = assembly.second_variation_matrix(ScaledProblem(0.1, 1.3, paper, m), np.zeros(m.n_dofs))
        assert np.zeros(m.n_dofs) @ (G @ np.zeros(m.n_dofs)) == 0.0

    def test_semidefinite_unstretched(self, paper):
        m = Mesh(30)
        G = assembly.second_variation_matrix(ScaledProblem(0.1, 1.0, paper, m), np.zeros(m.n_dofs)).toarray()
        ev = sla.eigvalsh(G)
        assert ev.min() >= -1e-10 * max(1.0, ev.max())
