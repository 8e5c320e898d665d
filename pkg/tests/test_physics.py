import numpy as np
import pytest

from lpinn.diffcore import ContractViolation, JetBatch, Tape, backward
from lpinn.network import default_lpinn, default_pinn, init_params
from lpinn.physics import (
    CharacteristicCrossingError,
    LossWeights,
    PdeSpec,
    loss_lpinn,
    loss_pinn,
    make_collocation,
    residual_eulerian,
    residual_lagrangian,
)
from lpinn.training import make_loss_builder


def manual_jet(tape, value, dx, dt, dxx):
    c = lambda a: tape.const(np.asarray(a, float).reshape(1, -1))  # noqa: E731
    return JetBatch(tape, c(value), c(dx), c(dt), c(dxx))


def node_array(tape, node):
    return tape.vals[node].ravel()


# -- stationary-frame residual ---------------------------------------------------

def test_exact_convdiff_solution_has_zero_residual():
    # w(x,t) = exp(-nu t) sin(x - c t) solves w_t + c w_x = nu w_xx
    c, nu = 3.0, 0.25
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 2 * np.pi, 64)
    t = rng.uniform(0.0, 1.0, 64)
    decay = np.exp(-nu * t)
    phase = x - c * t
    tape = Tape()
    w = manual_jet(
        tape,
        decay * np.sin(phase),
        decay * np.cos(phase),
        -nu * decay * np.sin(phase) - c * decay * np.cos(phase),
        -decay * np.sin(phase),
    )
    r = residual_eulerian(PdeSpec.convection_diffusion(c, nu), w)
    assert np.max(np.abs(node_array(tape, r))) <= 1e-8


def test_constant_field_zero_residual():
    tape = Tape()
    k = 4.2 * np.ones(10)
    w = manual_jet(tape, k, np.zeros(10), np.zeros(10), np.zeros(10))
    r = residual_eulerian(PdeSpec.convection(17.0), w)
    np.testing.assert_array_equal(node_array(tape, r), np.zeros(10))


def test_linear_in_time_field_unit_residual():
    tape = Tape()
    t = np.linspace(0.0, 1.0, 7)
    w = manual_jet(tape, t, np.zeros(7), np.ones(7), np.zeros(7))
    r = residual_eulerian(PdeSpec.convection(5.0), w)
    np.testing.assert_array_equal(node_array(tape, r), np.ones(7))


def test_burgers_residual_uses_state_as_transport_speed():
    tape = Tape()
    rng = np.random.default_rng(1)
    v, dx, dt, dxx = (rng.standard_normal(8) for _ in range(4))
    w = manual_jet(tape, v, dx, dt, dxx)
    r = residual_eulerian(PdeSpec.burgers(0.1), w)
    np.testing.assert_allclose(node_array(tape, r), dt + v * dx - 0.1 * dxx, rtol=1e-15)


# -- moving-frame residual ---------------------------------------------------------

def test_exact_lagrangian_convection_pair():
    c = 7.0
    x0 = np.linspace(0.0, 2 * np.pi, 33, endpoint=False)
    t = np.linspace(0.0, 1.0, 33)
    tape = Tape()
    x = manual_jet(tape, x0 + c * t, np.ones_like(x0), c * np.ones_like(x0), np.zeros_like(x0))
    w = manual_jet(tape, np.sin(x0), np.cos(x0), np.zeros_like(x0), -np.sin(x0))
    r_x, r_w = residual_lagrangian(PdeSpec.convection(c), x, w)
    assert np.max(np.abs(node_array(tape, r_x))) <= 1e-12
    assert np.max(np.abs(node_array(tape, r_w))) <= 1e-12


def test_identity_map_reduces_to_heat_residual():
    nu = 0.7
    rng = np.random.default_rng(5)
    x0 = rng.uniform(0.0, 2 * np.pi, 16)
    wv, wx, wt, wxx = (rng.standard_normal(16) for _ in range(4))
    tape = Tape()
    x = manual_jet(tape, x0, np.ones(16), np.zeros(16), np.zeros(16))
    w = manual_jet(tape, wv, wx, wt, wxx)
    _, r_w = residual_lagrangian(PdeSpec.convection_diffusion(0.0, nu), x, w)
    np.testing.assert_allclose(node_array(tape, r_w), wt - nu * wxx, rtol=1e-14)


def test_chain_rule_matches_inverse_map_oracle():
    # x(x0) = x0 + 0.4 sin(x0 + 1.1) (monotone), w(x0) smooth; the physical
    # second derivative of w(x^-1(X)) is estimated by Newton inversion plus
    # central differences on a uniform X stencil, independent of the chain rule.
    a = 0.4

    def x_of(l):  # noqa: E741
        return l + a * np.sin(l + 1.1)

    def dx_of(l):
        return 1.0 + a * np.cos(l + 1.1)

    def ddx_of(l):
        return -a * np.sin(l + 1.1)

    def w_of(l):
        return 0.7 * np.sin(2 * l) + 0.3 * np.cos(l)

    def dw_of(l):
        return 1.4 * np.cos(2 * l) - 0.3 * np.sin(l)

    def ddw_of(l):
        return -2.8 * np.sin(2 * l) - 0.3 * np.cos(l)

    def invert(x_target):
        l = x_target.copy()  # noqa: E741
        for _ in range(60):
            l = l - (x_of(l) - x_target) / dx_of(l)
        return l

    x0 = np.linspace(0.0, 2 * np.pi, 48, endpoint=False)
    tape = Tape()
    x = manual_jet(tape, x_of(x0), dx_of(x0), np.zeros_like(x0), ddx_of(x0))
    w = manual_jet(tape, w_of(x0), dw_of(x0), np.zeros_like(x0), ddw_of(x0))
    # with w_t = 0 and nu = 1, R_w = -w_xx|_phys
    _, r_w = residual_lagrangian(PdeSpec.convection_diffusion(0.0, 1.0), x, w)
    w_xx_chain = -node_array(tape, r_w)

    big_h = 1e-3
    x_pts = x_of(x0)
    w_plus = w_of(invert(x_pts + big_h))
    w_minus = w_of(invert(x_pts - big_h))
    w_center = w_of(x0)
    w_xx_fd = (w_plus - 2 * w_center + w_minus) / big_h**2
    rel = np.max(np.abs(w_xx_chain - w_xx_fd)) / np.max(np.abs(w_xx_fd))
    assert rel <= 1e-4


def test_jacobian_floor_raises():
    tape = Tape()
    x0 = np.linspace(0.0, 1.0, 5)
    jac = np.array([1.0, 0.5, 5e-7, 0.5, 1.0])
    x = manual_jet(tape, x0, jac, np.zeros(5), np.zeros(5))
    w = manual_jet(tape, np.sin(x0), np.cos(x0), np.zeros(5), -np.sin(x0))
    with pytest.raises(CharacteristicCrossingError):
        residual_lagrangian(PdeSpec.convection_diffusion(0.0, 0.1), x, w)
    # without diffusion the chain rule is never formed, so no division occurs
    r_x, r_w = residual_lagrangian(PdeSpec.convection(0.0), x, w)
    assert np.all(np.isfinite(node_array(tape, r_w)))


# -- losses -------------------------------------------------------------------------

def test_loss_pinn_hand_value():
    tape = Tape()
    r = tape.const(np.array([[1.0, 1.0]]))
    ic = tape.const(np.array([[2.0]]))
    nodes = loss_pinn(tape, r, ic, LossWeights(lam_r=10.0, lam_ic=1000.0))
    assert float(tape.vals[nodes.total]) == pytest.approx(4010.0, rel=1e-15)
    assert float(tape.vals[nodes.parts["loss_r"]]) == pytest.approx(10.0)
    assert float(tape.vals[nodes.parts["loss_ic"]]) == pytest.approx(4000.0)


def test_loss_pinn_zero_when_exact():
    tape = Tape()
    nodes = loss_pinn(
        tape,
        tape.const(np.zeros((1, 4))),
        tape.const(np.zeros((1, 2))),
        LossWeights(),
    )
    assert float(tape.vals[nodes.total]) == 0.0


def test_loss_linear_in_weights():
    tape = Tape()
    r = tape.const(np.array([[0.5, -1.5, 2.0]]))
    ic = tape.const(np.array([[0.1]]))
    base = loss_pinn(tape, r, ic, LossWeights(lam_r=10.0, lam_ic=0.0))
    doubled = loss_pinn(tape, r, ic, LossWeights(lam_r=20.0, lam_ic=0.0))
    assert float(tape.vals[doubled.total]) == pytest.approx(
        2.0 * float(tape.vals[base.total]), rel=1e-15
    )


def test_loss_lpinn_hand_value():
    tape = Tape()
    nodes = loss_lpinn(
        tape,
        tape.const(np.array([[3.0]])),
        tape.const(np.array([[4.0]])),
        tape.const(np.array([[0.0]])),
        tape.const(np.array([[0.0]])),
        LossWeights(lam_r=10.0, lam_ic=1000.0),
    )
    assert float(tape.vals[nodes.total]) == pytest.approx(250.0, rel=1e-15)


def test_loss_lpinn_zero_parameter_network_ic_term():
    # zero displacement network: grid term vanishes, state term is mean(w0^2)*lam_ic
    model = default_lpinn(width=8)
    theta = init_params(model, 0).with_values(np.zeros(model.param_count()))
    coll = make_collocation(16, 3, np.sin)
    build = make_loss_builder(model, PdeSpec.convection(2.0), coll, LossWeights())
    tape, nodes = build(theta)
    expected_ic = 1000.0 * np.mean(np.sin(coll.x_ic) ** 2)
    assert float(tape.vals[nodes.parts["loss_ic"]]) == pytest.approx(expected_ic, rel=1e-12)
    assert float(tape.vals[nodes.parts["loss_rx"]]) == pytest.approx(
        10.0 * 2.0**2, rel=1e-12
    )  # dx/dt = 0 vs c = 2


def test_loss_rejects_empty_sets():
    tape = Tape()
    with pytest.raises(ContractViolation):
        loss_pinn(tape, tape.const(np.zeros((1, 0))), tape.const(np.zeros((1, 1))), LossWeights())


def test_loss_rejects_inconsistent_bc_weight():
    tape = Tape()
    with pytest.raises(ContractViolation):
        loss_pinn(
            tape,
            tape.const(np.zeros((1, 1))),
            tape.const(np.zeros((1, 1))),
            LossWeights(lam_bc=1.0),
        )


# -- collocation ----------------------------------------------------------------------

def test_make_collocation_small_grid():
    coll = make_collocation(4, 2, np.sin)
    assert coll.n_r == 8 and coll.n_ic == 4
    np.testing.assert_allclose(coll.x_ic, [0.0, np.pi / 2, np.pi, 3 * np.pi / 2])
    np.testing.assert_allclose(np.unique(coll.t_r), [0.0, 1.0])
    assert coll.w0_ic[1] == pytest.approx(1.0)


def test_make_collocation_paper_scale_counts():
    coll = make_collocation(2**8, 100, np.sin)
    assert coll.n_r == 25_600
    assert coll.n_ic == 256


# -- gradient flow -----------------------------------------------------------------------

@pytest.mark.parametrize("family", ["pinn", "lpinn"])
def test_loss_gradients_pass_finite_difference_check(family):
    if family == "pinn":
        model = default_pinn(width=8, hidden_layers=2)
        pde = PdeSpec.convection_diffusion(1.5, 0.1)
    else:
        model = default_lpinn(width=8, w_hidden=2, x_hidden=2)
        pde = PdeSpec.convection_diffusion(1.5, 0.1)
    theta = init_params(model, 3)
    coll = make_collocation(8, 4, np.sin)
    build = make_loss_builder(model, pde, coll, LossWeights())

    tape, nodes = build(theta)
    g = backward(tape, nodes.total).values

    h = 1e-5
    fd = np.zeros_like(g)
    for i in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up.values[i] += h
        dn.values[i] -= h
        tu, nu_ = build(up)
        td, nd = build(dn)
        fd[i] = (float(tu.vals[nu_.total]) - float(td.vals[nd.total])) / (2 * h)
    denom = np.maximum(np.abs(fd), 1e-3 * np.max(np.abs(fd)))
    assert np.max(np.abs(g - fd) / denom) <= 1e-5
