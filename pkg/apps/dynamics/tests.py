import numpy as np
import pytest

from apps.core.exceptions import DimensionMismatch
from apps.dynamics.services import assemble, build_lti, conservation_residual, dump_matrices, step_approx
from apps.network.domain import CompleteNetwork


def _net(n, rng=None, T=None):
    m = n * (n - 1)
    if T is None:
        T = rng.integers(1, 11, size=m)
    return CompleteNetwork.build(tuple(range(1, n + 1)), T)


def _scalar_step(net, W, P, F, V, R, d):
    """Per-zone / per-link recursions of the lag model, written out with loops."""
    W2, P2, F2 = W.copy(), P.copy(), F.copy()
    for k, (r, s) in enumerate(net.links):
        W2[k] = W[k] + d[k] - V[k]
        F2[k] = F[k] - F[k] / net.T[k] + V[k] + R[k]
    for i, z in enumerate(net.zones):
        out = sum(V[k] + R[k] for k, (r, _) in enumerate(net.links) if r == z)
        inbound = sum(F[k] / net.T[k] for k, (_, s) in enumerate(net.links) if s == z)
        P2[i] = P[i] - out + inbound
    return W2, P2, F2


def test_two_zone_f_block():
    model = build_lti(_net(2, T=[2, 2]))
    np.testing.assert_array_equal(model.F_block, np.diag([0.5, 0.5]))


@pytest.mark.parametrize("n", range(2, 9))
def test_block_structure_exact(n):
    rng = np.random.default_rng(n)
    net = _net(n, rng)
    model = build_lti(net)
    lay = model.layout
    m = net.m
    assert model.A.shape == (2 * n * n - n, 2 * n * n - n)
    assert model.B.shape == (2 * n * n - n, 2 * m)
    assert model.L.shape == (2 * n * n - n, m)

    A = np.zeros_like(model.A)
    B = np.zeros_like(model.B)
    L = np.zeros_like(model.L)
    for k, (r, s) in enumerate(net.links):
        w, f = lay.W.start + k, lay.F.start + k
        p_r, p_s = lay.P.start + net.zone_index(r), lay.P.start + net.zone_index(s)
        A[w, w] = 1.0
        A[f, f] = 1.0 - 1.0 / net.T[k]
        A[p_s, f] = 1.0 / net.T[k]
        B[w, k] = -1.0
        B[p_r, k] = -1.0
        B[p_r, m + k] = -1.0
        B[f, k] = 1.0
        B[f, m + k] = 1.0
        L[w, k] = 1.0
    for i in range(n):
        A[lay.P.start + i, lay.P.start + i] = 1.0

    np.testing.assert_array_equal(model.A, A)
    np.testing.assert_array_equal(model.B, B)
    np.testing.assert_array_equal(model.L, L)


def test_b_columns_conserve_vehicles():
    model = build_lti(_net(4, np.random.default_rng(0)))
    lay = model.layout
    col_sums = model.B[lay.P].sum(axis=0) + model.B[lay.F].sum(axis=0)
    np.testing.assert_array_equal(col_sums, np.zeros(lay.nu))


@pytest.mark.parametrize("seed", range(5))
def test_matrix_step_matches_scalar_recursions(seed):
    rng = np.random.default_rng(seed)
    net = _net(int(rng.integers(2, 6)), rng)
    model = build_lti(net)
    lay = model.layout
    W, F = rng.uniform(0, 5, net.m), rng.uniform(0, 5, net.m)
    P = rng.uniform(0, 5, net.n)
    V, R, d = rng.uniform(0, 2, net.m), rng.uniform(0, 2, net.m), rng.uniform(0, 2, net.m)

    x2 = step_approx(model, lay.join_state(W, P, F), lay.join_input(V, R), d)
    W2, P2, F2 = _scalar_step(net, W, P, F, V, R, d)
    np.testing.assert_allclose(x2, lay.join_state(W2, P2, F2), rtol=0, atol=1e-12)


def test_zero_input_keeps_queue_and_decays_flow():
    net = _net(3, T=[1, 2, 4, 5, 2, 3])
    model = build_lti(net)
    lay = model.layout
    rng = np.random.default_rng(1)
    x = lay.join_state(rng.uniform(0, 3, net.m), rng.uniform(0, 3, net.n), rng.uniform(0, 3, net.m))
    x2 = step_approx(model, x, np.zeros(lay.nu), np.zeros(net.m))
    np.testing.assert_array_equal(x2[lay.W], x[lay.W])
    np.testing.assert_allclose(x2[lay.F], x[lay.F] * (1 - 1 / net.T), atol=1e-15)


def test_unit_travel_time_moves_in_one_step():
    net = _net(3, T=[1] * 6)
    model = build_lti(net)
    lay = model.layout
    rng = np.random.default_rng(2)
    V, R = rng.uniform(0, 1, net.m), rng.uniform(0, 1, net.m)
    x = lay.join_state(np.ones(net.m), np.full(net.n, 4.0), rng.uniform(0, 2, net.m))
    x2 = step_approx(model, x, lay.join_input(V, R), np.zeros(net.m))
    np.testing.assert_allclose(x2[lay.F], V + R)
    np.testing.assert_array_equal(model.F_block, np.zeros((net.m, net.m)))


def test_fleet_conserved_for_any_input():
    rng = np.random.default_rng(3)
    net = _net(5, rng)
    model = build_lti(net)
    lay = model.layout
    for _ in range(20):
        x = rng.normal(size=lay.nx)
        x2 = step_approx(model, x, rng.normal(size=lay.nu), rng.normal(size=net.m))
        assert x2[lay.P].sum() + x2[lay.F].sum() == pytest.approx(x[lay.P].sum() + x[lay.F].sum(), abs=1e-10)


def test_superposition():
    rng = np.random.default_rng(4)
    model = build_lti(_net(3, rng))
    lay = model.layout
    x1, x2 = rng.normal(size=lay.nx), rng.normal(size=lay.nx)
    v1, v2 = rng.normal(size=lay.nu), rng.normal(size=lay.nu)
    d1, d2 = rng.normal(size=lay.m), rng.normal(size=lay.m)
    lhs = step_approx(model, x1 + x2, v1 + v2, d1 + d2)
    rhs = step_approx(model, x1, v1, d1) + step_approx(model, x2, v2, d2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_f_block_spectral_radius_below_one():
    model = build_lti(_net(4, np.random.default_rng(5)))
    assert np.abs(np.linalg.eigvals(model.F_block)).max() < 1


def test_conservation_residual_zero():
    model = build_lti(_net(6, np.random.default_rng(6)))
    assert conservation_residual(model) <= 1e-12


def test_conservation_residual_detects_corruption():
    net = _net(3, np.random.default_rng(7))
    bad = net.E_in.copy()
    bad[:, 0] = 0.0  # link 0 now delivers nowhere
    assert conservation_residual(assemble(net.T, bad, net.E_out)) > 0


def test_step_dimension_mismatch():
    model = build_lti(_net(2, T=[1, 1]))
    with pytest.raises(DimensionMismatch):
        step_approx(model, np.zeros(5), np.zeros(4), np.zeros(2))


def test_dump_matrices(tmp_path):
    model = build_lti(_net(3, np.random.default_rng(8)))
    paths = dump_matrices(model, tmp_path)
    assert [p.name for p in paths] == ["A.txt", "B.txt", "L.txt"]
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "A.txt"), model.A)
