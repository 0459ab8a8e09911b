import numpy as np
import pytest

from tubempc.errors import ConvergenceError, InvalidArgumentError, StructureError
from tubempc.lti import dare_solve
from tubempc.polytope import Box, SupportSet, contains, support
from tubempc.qp.simplex import feasible_point
from tubempc.rpi import RPIApprox, block_facets, detect_blocks, image_set, rakovic_approx


@pytest.fixture(scope="module")
def drone_tube(drone_system):
    sys = drone_system
    ric = dare_solve(sys, Q_x=5.0 * np.eye(6), Q_u=np.diag([30.0, 20.0, 1.0]))
    A_K = sys.A + sys.B @ ric.K_inf
    W = Box(np.zeros(6), [0.0, 0.02, 0.0, 0.02, 0.0, 0.02])
    return A_K, W, ric, rakovic_approx(A_K, W)


class TestRakovic:
    def test_nilpotent_gives_w_exactly(self):
        W = Box([0.0, 0.0], [0.3, 0.7])
        rpi = rakovic_approx(np.zeros((2, 2)), W)
        assert rpi.s == 1
        assert rpi.alpha == 0.0
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.normal(size=2)
            assert support(rpi.F, a) == pytest.approx(support(W, a), abs=1e-15)

    def test_scalar_geometric_series(self):
        rpi = rakovic_approx(np.array([[0.5]]), Box([0.0], [1.0]), alpha_target=0.05)
        h = support(rpi.F, [1.0])
        assert 2.0 - 1e-12 <= h <= 2.0 / (1.0 - 0.05)
        assert support(rpi.F, [-1.0]) == pytest.approx(h)

    def test_drone_close_to_truncated_sum_oracle(self, drone_tube):
        A_K, W, _, rpi = drone_tube
        # oracle: long truncated series of support values
        rng = np.random.default_rng(1)
        for _ in range(25):
            a = rng.normal(size=6)
            total, Ai = 0.0, np.eye(6)
            for _ in range(10_000):
                total += support(W, Ai.T @ a)
                Ai = A_K @ Ai
                if np.abs(Ai).max() < 1e-16:
                    break
            got = support(rpi.F, a)
            assert total - 1e-12 <= got <= 1.06 * total

    def test_non_schur_rejected(self):
        with pytest.raises(InvalidArgumentError):
            rakovic_approx(np.eye(2), Box([0, 0], [1, 1]))

    def test_cap_exceeded(self):
        A = np.array([[0.999999]])
        with pytest.raises(ConvergenceError):
            rakovic_approx(A, Box([0.0], [1.0]), alpha_target=0.001, s_cap=5)

    def test_monotone_above_w(self, drone_tube):
        _, W, _, rpi = drone_tube
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = rng.normal(size=6)
            assert support(rpi.F, a) >= support(W, a) - 1e-15

    def test_symmetry(self, drone_tube):
        _, _, _, rpi = drone_tube
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = rng.normal(size=6)
            assert support(rpi.F, a) == pytest.approx(support(rpi.F, -a), rel=1e-12)

    def test_serialization_roundtrip(self, drone_tube):
        _, _, _, rpi = drone_tube
        back = RPIApprox.from_dict(rpi.to_dict())
        assert back.s == rpi.s and back.alpha == rpi.alpha
        rng = np.random.default_rng(4)
        for _ in range(20):
            a = rng.normal(size=6)
            assert support(back.F, a) == pytest.approx(support(rpi.F, a), abs=0)


class TestImageSet:
    def test_zero_map(self, drone_tube):
        *_, rpi = drone_tube
        kf = image_set(np.zeros((3, 6)), rpi.F)
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.normal(size=3)
            assert support(kf, a) == pytest.approx(0.0, abs=1e-15)

    def test_identity_map(self, drone_tube):
        *_, rpi = drone_tube
        kf = image_set(np.eye(6), rpi.F)
        rng = np.random.default_rng(6)
        for _ in range(20):
            a = rng.normal(size=6)
            assert support(kf, a) == pytest.approx(support(rpi.F, a), abs=0)

    def test_adjoint_identity(self, drone_tube):
        _, _, ric, rpi = drone_tube
        kf = image_set(ric.K_inf, rpi.F)
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.normal(size=3)
            assert support(kf, a) == pytest.approx(support(rpi.F, ric.K_inf.T @ a), rel=1e-12)


def lp_membership(sub, x, tol=1e-9):
    """Exact zonotope membership by LP feasibility over the coefficients."""
    gens = sub.generators()
    target = np.asarray(x, dtype=float) - sub.center()
    g = gens.shape[1]
    G = np.vstack([gens, -gens, np.eye(g), -np.eye(g)])
    h = np.concatenate([target + tol, -(target - tol), np.ones(g), np.ones(g)])
    xi, _ = feasible_point(G, h)
    return xi is not None


class TestBlockFacets:
    def test_single_block_box(self):
        F = SupportSet.from_box(Box([0.0, 0.0], [0.5, 1.5]))
        facets = block_facets(F, [[0, 1]])
        assert contains(facets, [0.5, 1.5], 1e-12)
        assert not contains(facets, [0.5 + 1e-6, 0.0], 1e-9)

    def test_detect_blocks_drone(self, drone_tube):
        A_K, *_ = drone_tube
        assert detect_blocks(A_K) == [[0, 1], [2, 3], [4, 5]]

    def test_drone_product_matches_lp_oracle(self, drone_tube):
        A_K, W, _, rpi = drone_tube
        blocks = detect_blocks(A_K)
        facets = block_facets(rpi.F, blocks)
        rng = np.random.default_rng(8)
        # points sampled inside F must satisfy the facets
        pts = rpi.F.sample(rng, 2000)
        resid = facets.normals @ pts.T - facets.offsets[:, None]
        assert resid.max() <= 1e-9
        # facet verdicts agree with an exact LP oracle per 2-D block
        sub_terms = tuple((m[[2, 3], :], b) for m, b in rpi.F.terms)
        sub = SupportSet(terms=sub_terms, scale=rpi.F.scale)
        from tubempc.polytope import zonotope_facets_2d

        sub_facets = zonotope_facets_2d(sub)
        radius = 1.2 * max(support(sub, [1, 0]), support(sub, [0, 1]))
        for _ in range(150):
            x = rng.uniform(-radius, radius, size=2)
            assert contains(sub_facets, x, 1e-9) == lp_membership(sub, x)

    def test_invariance_sampling(self, drone_tube):
        A_K, W, _, rpi = drone_tube
        facets = block_facets(rpi.F, detect_blocks(A_K))
        rng = np.random.default_rng(9)
        n_samples = 10_000
        e = rpi.F.sample(rng, n_samples)
        w = rng.uniform(-1.0, 1.0, size=(n_samples, 6)) * W.half_widths
        nxt = e @ A_K.T + w
        resid = facets.normals @ nxt.T - facets.offsets[:, None]
        assert resid.max() <= 1e-9

    def test_point_set_degenerate(self):
        F = SupportSet.from_box(Box(np.zeros(2), np.zeros(2)))
        facets = block_facets(F, [[0, 1]])
        assert contains(facets, [0.0, 0.0], 0.0)
        assert not contains(facets, [1e-6, 0.0], 1e-9)

    def test_coupled_structure_rejected(self):
        F = SupportSet.from_box(Box(np.zeros(2), [1.0, 1.0]))
        coupled = SupportSet(terms=((np.array([[1.0, 0.5], [0.5, 1.0]]), F.terms[0][1]),))
        with pytest.raises(StructureError):
            block_facets(coupled, [[0], [1]])

    def test_big_block_rejected(self):
        F = SupportSet.from_box(Box(np.zeros(3), np.ones(3)))
        with pytest.raises(StructureError):
            block_facets(F, [[0, 1, 2]])
