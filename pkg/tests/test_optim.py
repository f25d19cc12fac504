"""Parameter blocks, tape gradients vs differences, Adam behavior."""

import numpy as np
import numpy.testing as npt
import pytest

from ldgd import autodiff as ad
from ldgd.errors import InvalidArgumentError, NumericalError
from ldgd.optim import (
    ParameterVector,
    adam_step,
    check_gradient,
    evaluate,
    finite_difference_gradient,
    gradient,
    init_adam,
    value_and_gradient,
)


def small_pv():
    pv = ParameterVector()
    pv.add("theta", np.array([1.0, 2.0]))
    pv.add("rate", np.array([0.5]), transform="log")
    pv.add("width", np.array([[2.0, 0.3]]), transform="softplus")
    return pv


# -- ParameterVector mechanics -----------------------------------------


def test_blocks_keep_shape_transform_and_positivity():
    pv = small_pv()
    assert pv.size == 5
    assert pv.names() == ["theta", "rate", "width"]
    npt.assert_allclose(pv.constrained("theta"), [1.0, 2.0])
    npt.assert_allclose(pv.constrained("rate"), [0.5], rtol=1e-14)
    npt.assert_allclose(pv.constrained("width"), [[2.0, 0.3]], rtol=1e-12)
    assert np.all(pv.constrained("rate") > 0)
    assert np.all(pv.constrained("width") > 0)
    npt.assert_allclose(pv.raw("rate"), np.log(0.5))


def test_duplicate_names_and_bad_transforms_rejected():
    pv = small_pv()
    with pytest.raises(InvalidArgumentError):
        pv.add("theta", np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        pv.add("x", np.zeros(2), transform="sqrt")
    with pytest.raises(InvalidArgumentError):
        pv.add("y", np.array([-1.0]), transform="log")
    with pytest.raises(InvalidArgumentError):
        pv.block("nope")


def test_set_raw_checks_shape_and_copy_is_independent():
    pv = small_pv()
    with pytest.raises(InvalidArgumentError):
        pv.set_raw("theta", np.zeros(3))
    clone = pv.copy()
    clone.set_raw("theta", np.array([9.0, 9.0]))
    npt.assert_allclose(pv.constrained("theta"), [1.0, 2.0])


# -- gradient contract --------------------------------------------------


def test_quadratic_gradient_is_two_theta():
    pv = ParameterVector()
    pv.add("theta", np.array([1.0, 2.0]))
    g = gradient(lambda lv: ad.sum_(ad.square(lv["theta"])), pv)
    npt.assert_allclose(g, [2.0, 4.0], rtol=1e-12)


def test_log_block_chain_rule_at_storage_zero():
    pv = ParameterVector()
    pv.add("rate", np.array([1.0]), transform="log")  # storage = log 1 = 0
    g = gradient(lambda lv: ad.sum_(lv["rate"]), pv)
    npt.assert_allclose(g, [1.0], rtol=1e-14)


def test_raw_view_of_log_block_is_its_logarithm():
    pv = ParameterVector()
    pv.add("rate", np.array([0.25]), transform="log")
    val = evaluate(lambda lv: ad.sum_(lv.raw("rate")), pv)
    npt.assert_allclose(val, np.log(0.25), rtol=1e-14)


def test_mixed_transform_objective_matches_differences():
    pv = small_pv()

    def objective(lv):
        a = ad.sum_(ad.square(lv["theta"]))
        b = ad.sum_(ad.log(lv["rate"]))
        c = ad.sum_(ad.mul(lv["width"], lv["width"]))
        return a + 3.0 * b + c

    report = check_gradient(objective, pv)
    assert report.passed, report.per_block
    tape = gradient(objective, pv)
    diff = finite_difference_gradient(objective, pv)
    npt.assert_allclose(tape, diff, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_randomized_primitive_compositions_pass_differences(seed):
    # Matrix ops + transcendentals over random small blocks, one seed each.
    rng = np.random.default_rng(seed)
    n, m = rng.integers(2, 5), rng.integers(2, 4)
    pv = ParameterVector()
    pv.add("a", rng.standard_normal((n, m)))
    pv.add("scale", rng.uniform(0.3, 2.0, size=m), transform="log")
    pv.add("shift", rng.uniform(0.2, 1.5, size=(1, m)), transform="softplus")

    def objective(lv):
        h = ad.matmul(ad.transpose_last(lv["a"]), lv["a"])
        h = ad.add(h, np.eye(m) * 0.8)
        L = ad.cholesky(h)
        logdet = ad.sum_(ad.log(ad.maximum(ad.mul(L, np.eye(m)) + (1 - np.eye(m)), 1e-300)))
        sol = ad.triangular_solve(L, ad.transpose_last(lv["shift"]))
        quad = ad.sum_(ad.square(sol))
        pen = ad.sum_(ad.mul(lv["scale"], lv["scale"])) + ad.sum_(ad.tanh(lv["a"]))
        return logdet + quad + pen

    report = check_gradient(objective, pv)
    assert report.passed, (seed, report.per_block)


def test_nonfinite_objective_raises_numerical_error():
    pv = ParameterVector()
    pv.add("x", np.array([0.0]))
    with pytest.raises(NumericalError):
        value_and_gradient(lambda lv: ad.log(lv["x"]), pv)


def test_difference_harness_names_the_block_it_was_perturbing():
    pv = ParameterVector()
    pv.add("safe", np.array([1.0]))
    pv.add("fragile", np.array([1e-5]))

    def objective(lv):
        # log of a tiny positive goes -inf once the perturbation crosses 0
        return ad.sum_(ad.log(lv["fragile"])) + ad.sum_(lv["safe"])

    with pytest.raises(NumericalError) as exc:
        finite_difference_gradient(objective, pv, h=1e-4)
    assert exc.value.block == "fragile"


def test_check_gradient_flags_a_corrupted_block():
    pv = small_pv()

    def objective(lv):
        return ad.sum_(ad.square(lv["theta"])) + ad.sum_(lv["rate"])

    report = check_gradient(objective, pv)
    assert report.passed
    # Corrupt by comparing against differences of a different objective.
    tape = gradient(objective, pv)
    tape[0] += 0.5
    diff = finite_difference_gradient(objective, pv)
    assert abs(tape[0] - diff[0]) > 0.1


# -- Adam ---------------------------------------------------------------


def test_zero_gradient_is_a_fixed_point():
    pv = ParameterVector()
    pv.add("p", np.array([1.5, -2.0]))
    before = pv.storage.copy()
    state = init_adam(pv.size, lr=0.1)
    adam_step(state, pv, np.zeros(2))
    npt.assert_array_equal(pv.storage, before)
    assert state.step == 1


def test_first_step_moves_by_learning_rate():
    pv = ParameterVector()
    pv.add("p", np.array([0.0]))
    state = init_adam(1, lr=0.1)
    adam_step(state, pv, np.array([1.0]))
    npt.assert_allclose(pv.storage, [-0.1], rtol=1e-7)


def test_converges_on_shifted_quadratic():
    pv = ParameterVector()
    pv.add("p", np.array([0.0]))
    state = init_adam(1, lr=0.05)
    for _ in range(500):
        _, g = value_and_gradient(lambda lv: ad.sum_(ad.square(lv["p"] - 3.0)), pv)
        adam_step(state, pv, g)
    assert abs(pv.storage[0] - 3.0) < 1e-2


def test_translation_consistency():
    shift = 1.7

    def run(center, start):
        pv = ParameterVector()
        pv.add("p", np.array([start]))
        state = init_adam(1, lr=0.05)
        for _ in range(2000):
            _, g = value_and_gradient(
                lambda lv: ad.sum_(ad.square(lv["p"] - center)), pv
            )
            adam_step(state, pv, g)
        return pv.storage[0]

    a = run(2.0, 0.25)
    b = run(2.0 + shift, 0.25 + shift)
    npt.assert_allclose(b - a, shift, atol=1e-6)


def test_adam_rejects_nonfinite_and_mismatched_gradients():
    pv = ParameterVector()
    pv.add("p", np.array([0.0, 0.0]))
    state = init_adam(2)
    with pytest.raises(NumericalError) as exc:
        adam_step(state, pv, np.array([1.0, np.nan]))
    assert exc.value.block == "p"
    with pytest.raises(InvalidArgumentError):
        adam_step(state, pv, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        adam_step(init_adam(5), pv, np.zeros(2))


def test_adam_is_deterministic():
    def run():
        pv = ParameterVector()
        pv.add("p", np.array([0.3, -0.4]))
        state = init_adam(2, lr=0.02)
        for i in range(50):
            g = np.array([np.sin(i * 0.1), np.cos(i * 0.1)])
            adam_step(state, pv, g)
        return pv.storage.copy()

    npt.assert_array_equal(run(), run())
