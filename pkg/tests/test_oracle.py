import numpy as np
import pytest

from dsmpc.assembly import assemble
from dsmpc.cones import SOC, Box, ConeProduct
from dsmpc.oracle import (
    OracleError,
    central_from_arrays,
    solve_central,
    solve_direct,
    solve_stacked,
    stack_central,
)

from instances import fig1_setup


def test_unconstrained_quadratic():
    rng = np.random.default_rng(2)
    B = rng.normal(size=(4, 4))
    H = B @ B.T + np.eye(4)
    h = rng.normal(size=4)
    sol = solve_central(central_from_arrays(H, h))
    np.testing.assert_allclose(sol.x, -np.linalg.solve(H, h), atol=1e-7)


def test_scalar_box():
    # min 1/2 x^2 - 3x with x - 1 <= 0  ->  x = 1, multiplier 2
    omega = ConeProduct([Box.nonpositive(1)])
    sol = solve_central(central_from_arrays([[1.0]], [-3.0], D=[[1.0]], d=[1.0], omega=omega))
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.lam[0] == pytest.approx(-2.0, abs=1e-6)
    assert sol.kkt_residual <= 1e-7


def test_random_socp_kkt():
    rng = np.random.default_rng(9)
    n = 6
    B = rng.normal(size=(n, n))
    H = B @ B.T
    h = rng.normal(size=n)
    M = rng.normal(size=(2, n))
    x0 = rng.normal(size=n) * 0.1
    D = rng.normal(size=(6, n))
    omega = ConeProduct([Box.nonpositive(2), SOC(4)])
    # choose d so that x0 is strictly feasible
    s0 = np.r_[-np.ones(2), 0.1 * rng.normal(size=3), 5.0]
    d = D @ x0 - s0
    sol = solve_central(central_from_arrays(H, h, M, M @ x0, D, d, omega))
    assert sol.kkt_residual <= 1e-8 * max(1.0, np.abs(h).max())


def test_infeasible_reported():
    omega = ConeProduct([Box.nonpositive(2)])
    # x <= -1 and -x <= -1
    with pytest.raises(OracleError, match="infeasible"):
        solve_central(central_from_arrays([[1.0]], [0.0], D=[[1.0], [-1.0]], d=[-1.0, -1.0], omega=omega))


def test_stack_dimension(fig1, fig1_two):
    _, _, probs = fig1_setup(fig1, fig1_two, 2)
    cpb = stack_central(probs)
    copies = sum(1 for p in probs.values() for lab in p.layout.labels if lab[0] == "c")
    assert cpb.size == sum(p.size for p in probs.values()) - copies
    assert cpb.size == 2 * (2 * len(fig1.links) + len(fig1.phases))


def test_stack_rejects_inconsistent_orderings(fig1, fig1_two):
    _, _, probs = fig1_setup(fig1, fig1_two, 1)
    probs["S1"].P["S2"] = probs["S1"].P["S2"][::-1]
    with pytest.raises(OracleError, match="inconsistent"):
        stack_central(probs)


@pytest.mark.parametrize("K", [1, 2, 3])
def test_stacked_equals_direct(fig1, fig1_two, fig1_per_junction, K):
    params, inputs, probs = fig1_setup(fig1, fig1_two, K)
    direct = solve_direct(fig1, params, inputs)
    for part in (fig1_two, fig1_per_junction):
        stacked = solve_central(stack_central(assemble(fig1, part, params, inputs)))
        assert stacked.objective == pytest.approx(direct.objective, rel=1e-8)


def test_nominal_reduction(fig1, fig1_two):
    params, inputs, probs = fig1_setup(fig1, fig1_two, 3, nominal=True)
    stacked = solve_central(stack_central(probs))
    direct = solve_direct(fig1, params, inputs, nominal=True)
    assert stacked.objective == pytest.approx(direct.objective, rel=1e-6)


def test_fixed_point_certificate(fig1, fig1_two):
    _, _, probs = fig1_setup(fig1, fig1_two, 2)
    fp = solve_stacked(probs)
    assert fp.stationarity <= 1e-7
    central = solve_central(stack_central(probs))
    assert fp.objective == pytest.approx(central.objective, rel=1e-8)
    # every multiplier lies in the dual cone of its segment (R_- is dual to R_-'s polar: lam <= 0)
    for s, p in probs.items():
        lam = fp.lam[s]
        for seg, sl in zip(p.omega.segments, p.segment_slices()):
            if isinstance(seg, Box):
                assert np.all(lam[sl] <= 1e-7)
            else:
                assert np.linalg.norm(lam[sl][:-1]) <= lam[sl][-1] + 1e-7


def test_stochastic_costs_more_than_nominal(fig1, fig1_two):
    params, inputs, _ = fig1_setup(fig1, fig1_two, 2)
    assert solve_direct(fig1, params, inputs).objective > solve_direct(fig1, params, inputs, nominal=True).objective
