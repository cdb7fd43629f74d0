"""Checks for the residual problems, gradient estimators, and training loop.

The batched gradient estimators are compared against naive per-sample
recomputations from grad_params/forward, and the residuals against closed
forms where those exist.
"""

import math

import numpy as np
import pytest

from ftarga import chains, neural, oracles, rga


def make_fta_problem():
    chain, regions = chains.fluid_hitting()
    return rga.FtaProblem(chain, regions)


def make_poisson_problem(kind="linear"):
    chain = chains.bernoulli_chain(kind)
    return rga.PoissonProblem(chain, chains.bernoulli_nu)


def make_density_problem():
    return rga.DensityProblem(chains.gibbs_chain(), chains.gibbs_nu)


# ---------------------------------------------------------------------------
# config validation

def test_train_config_rejects_bad_values():
    with pytest.raises(ValueError):
        rga.TrainConfig(-1, 0.1)
    with pytest.raises(ValueError):
        rga.TrainConfig(10, 0.0)
    with pytest.raises(ValueError):
        rga.TrainConfig(10, 0.1, batch_size=0)
    with pytest.raises(ValueError):
        rga.TrainConfig(10, 0.1, optimizer="rmsprop")
    with pytest.raises(ValueError):
        rga.TrainConfig(10, 0.1, probe_samples=1)
    with pytest.raises(ValueError):
        rga.TrainConfig(10, 0.1, log_every=-5)


def test_problem_constructor_validation():
    chain, regions = chains.fluid_hitting()
    with pytest.raises(ValueError):
        rga.SegmentFtaProblem(chain, regions)  # no window on this region spec
    with pytest.raises(ValueError):
        rga.DensityProblem(chain, chains.bernoulli_nu)  # no kernel density


# ---------------------------------------------------------------------------
# residuals

def test_hitting_residual_at_zero_net_is_minus_one():
    problem = make_fta_problem()
    rng = np.random.default_rng(0)
    zero = lambda p: 0.0
    for _ in range(200):
        res_f, res_m = problem.residual_pair(zero, problem.sample(rng))
        assert res_f == -1.0 and res_m == -1.0


def test_loss_estimate_at_zero_net_is_exactly_one():
    problem = make_fta_problem()
    mean, err = rga.residual_loss_estimate(lambda p: 0.0, problem, 300,
                                           np.random.default_rng(1))
    assert mean == 1.0 and err == 0.0


def test_loss_estimate_accepts_chain_regions_tuple():
    chain, regions = chains.fluid_hitting()
    a = rga.residual_loss_estimate(lambda p: 0.0, (chain, regions), 100,
                                   np.random.default_rng(2))
    b = rga.residual_loss_estimate(lambda p: 0.0,
                                   rga.FtaProblem(chain, regions), 100,
                                   np.random.default_rng(2))
    assert a == b


def test_loss_estimate_needs_two_samples():
    with pytest.raises(ValueError):
        rga.residual_loss_estimate(lambda p: 0.0, make_fta_problem(), 1,
                                   np.random.default_rng(0))


def test_segment_residual_with_zero_weight_ignores_terminal_value():
    problem = make_fta_problem()
    seg = chains.PathSegment(2.5, 0.0, 3, np.array([0.5, 0.5]))
    sample = rga.ResidualSample(np.array([3.0, 3.0]), seg, seg)
    huge = lambda p: 1e9 if p[0] < 1.0 else 7.0
    res_f, res_m = problem.residual_pair(huge, sample)
    assert res_f == 7.0 - 2.5 and res_m == 7.0 - 2.5


def test_poisson_residual_zero_for_constant_net_and_reward():
    # dyadic constants keep every intermediate exactly representable
    chain = chains.ChainModel(
        dim=1, step=chains.bernoulli_chain().step,
        reward=lambda x: 1.25, discount=lambda x: 0.0)
    problem = rga.PoissonProblem(chain, chains.bernoulli_nu)
    rng = np.random.default_rng(3)
    for _ in range(100):
        res_f, res_m = problem.residual_pair(lambda p: 5.0, problem.sample(rng))
        assert res_f == 0.0 and res_m == 0.0


def test_poisson_residual_tiny_for_general_constants():
    chain = chains.ChainModel(
        dim=1, step=chains.bernoulli_chain().step,
        reward=lambda x: 1.3, discount=lambda x: 0.0)
    problem = rga.PoissonProblem(chain, chains.bernoulli_nu)
    rng = np.random.default_rng(3)
    for _ in range(100):
        res_f, res_m = problem.residual_pair(lambda p: 5.7, problem.sample(rng))
        assert abs(res_f) < 1e-12 and abs(res_m) < 1e-12


def test_poisson_residual_invariant_to_additive_shift():
    problem = make_poisson_problem()
    u = lambda p: oracles.poisson_exact_bernoulli("linear", float(p[0]))
    shifted = lambda p: u(p) + 17.0
    rng = np.random.default_rng(4)
    for _ in range(50):
        s = problem.sample(rng)
        np.testing.assert_allclose(problem.residual_pair(u, s),
                                   problem.residual_pair(shifted, s),
                                   atol=1e-9)


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_poisson_branch_average_vanishes_at_closed_form(kind):
    """The conditional mean over all four two-step branches must be zero.

    Each two-step continuation is a pair of fair bits, so averaging the
    residual over the four equally likely branches evaluates the conditional
    expectation exactly.
    """
    problem = make_poisson_problem(kind)
    u = lambda p: oracles.poisson_exact_bernoulli(kind, float(p[0]))
    for x0 in np.linspace(0.0, 1.0, 101):
        acc = 0.0
        for z1 in (0, 1):
            for z2 in (0, 1):
                x1 = chains.bernoulli_step(x0, z1)
                x2 = chains.bernoulli_step(x1, z2)
                s = rga.ResidualSample(
                    np.array([x0]),
                    (np.array([x1]), np.array([x2])),
                    (np.array([x1]), np.array([x2])))
                acc += problem.residual_pair(u, s)[0]
        assert abs(acc / 4.0) < 1e-12


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_poisson_loss_vanishes_at_closed_form(kind):
    problem = make_poisson_problem(kind)
    u = lambda p: oracles.poisson_exact_bernoulli(kind, float(p[0]))
    mean, err = rga.residual_loss_estimate(u, problem, 20_000,
                                           np.random.default_rng(5))
    assert abs(mean) <= 3.0 * err


def test_density_loss_vanishes_at_exact_ratio():
    problem = make_density_problem()
    origin_mass = oracles.gibbs_exact_density(np.zeros(2))
    ratio = lambda p: oracles.gibbs_exact_density(p) / origin_mass
    mean, err = rga.residual_loss_estimate(ratio, problem, 20_000,
                                           np.random.default_rng(6))
    assert abs(mean) <= 3.0 * err


def test_density_residual_network_pinning_matches_callable():
    problem = make_density_problem()
    params = neural.init_params(7, 2, 20)
    pinned = lambda p: neural.pinned_value(params, p)
    rng = np.random.default_rng(8)
    for _ in range(20):
        s = problem.sample(rng)
        np.testing.assert_allclose(problem.residual_pair(params, s),
                                   problem.residual_pair(pinned, s),
                                   rtol=1e-12, atol=1e-12)


def test_residual_product_symmetric_under_swap():
    problem = make_fta_problem()
    rng = np.random.default_rng(9)
    net = lambda p: 0.5 * p[0] + p[1]
    for _ in range(50):
        s = problem.sample(rng)
        swapped = rga.ResidualSample(s.anchor, s.mirror, s.forward)
        f1, m1 = problem.residual_pair(net, s)
        f2, m2 = problem.residual_pair(net, swapped)
        assert f1 * m1 == f2 * m2


# ---------------------------------------------------------------------------
# gradient estimators vs naive recomputation

def naive_fta_estimate(problem, params, samples, symmetric):
    out = np.zeros(params.n_params)
    for s in samples:
        u0 = neural.forward(params, s.anchor)
        g0 = neural.grad_params(params, s.anchor)
        f, m = s.forward, s.mirror
        res_f = u0 - f.reward - f.weight * neural.forward(params, f.terminal)
        fac_m = g0 - m.weight * neural.grad_params(params, m.terminal)
        if symmetric:
            res_m = u0 - m.reward - m.weight * neural.forward(params, m.terminal)
            fac_f = g0 - f.weight * neural.grad_params(params, f.terminal)
            out += res_f * fac_m + res_m * fac_f
        else:
            out += 2.0 * res_f * fac_m
    return out / len(samples)


def naive_poisson_estimate(problem, params, samples, symmetric):
    r = problem.reward
    out = np.zeros(params.n_params)
    for s in samples:
        u = lambda p: neural.forward(params, p)
        g = lambda p: neural.grad_params(params, p)
        x1, x2 = s.forward
        y1, y2 = s.mirror
        res_f = u(s.anchor) - 2 * u(x1) + u(x2) - r(s.anchor) + r(x1)
        fac_m = g(s.anchor) - 2 * g(y1) + g(y2)
        if symmetric:
            res_m = u(s.anchor) - 2 * u(y1) + u(y2) - r(s.anchor) + r(y1)
            fac_f = g(s.anchor) - 2 * g(x1) + g(x2)
            out += res_f * fac_m + res_m * fac_f
        else:
            out += 2.0 * res_f * fac_m
    return out / len(samples)


def naive_density_estimate(problem, params, samples, symmetric):
    out = np.zeros(params.n_params)
    g_origin = neural.grad_params(params, problem.origin)
    for s in samples:
        (zf, pf), (zm, pm) = s.forward, s.mirror
        u = lambda p: neural.pinned_value(params, p)
        g = lambda p: neural.grad_params(params, p) - g_origin
        res_f = u(s.anchor) - u(zf) * pf
        fac_m = g(s.anchor) - pm * g(zm)
        if symmetric:
            res_m = u(s.anchor) - u(zm) * pm
            fac_f = g(s.anchor) - pf * g(zf)
            out += res_f * fac_m + res_m * fac_f
        else:
            out += 2.0 * res_f * fac_m
    return out / len(samples)


@pytest.mark.parametrize("symmetric", [False, True])
@pytest.mark.parametrize("maker,naive,dim", [
    (make_fta_problem, naive_fta_estimate, 2),
    (make_poisson_problem, naive_poisson_estimate, 1),
    (make_density_problem, naive_density_estimate, 2),
])
def test_gradient_estimate_matches_naive(maker, naive, dim, symmetric):
    problem = maker()
    params = neural.init_params(11, dim, 8)
    rng = np.random.default_rng(12)
    samples = [problem.sample(rng) for _ in range(16)]
    fused = problem.gradient_estimate(params, samples, symmetric)
    np.testing.assert_allclose(
        fused, naive(problem, params, samples, symmetric),
        rtol=1e-10, atol=1e-12)


def test_segment_gradient_estimate_matches_naive():
    chain, regions = chains.gg2_hitting()
    problem = rga.SegmentFtaProblem(chain, regions)
    params = neural.init_params(13, 2, 8)
    rng = np.random.default_rng(14)
    samples = [problem.sample(rng) for _ in range(16)]
    fused = problem.gradient_estimate(params, samples, False)
    np.testing.assert_allclose(
        fused, naive_fta_estimate(problem, params, samples, False),
        rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------------------
# degeneracy: window = whole continuation set makes segments one-step

def degenerate_gg2():
    """G/G/2 regions whose window is the entire continuation set."""
    chain, base = chains.gg2_hitting()
    regions = chains.RegionSpec(
        in_target=base.in_target,
        in_continuation=base.in_continuation,
        sample_box=base.sample_box,
        sample_accept=base.sample_accept,
        in_window=base.in_continuation,
    )
    return chain, regions


def test_segment_problem_degenerates_to_one_step():
    chain, regions = degenerate_gg2()
    one_step = rga.FtaProblem(chain, regions)
    seg = rga.SegmentFtaProblem(chain, regions)
    params = neural.init_params(15, 2, 10)
    s1 = [one_step.sample(np.random.default_rng(16)) for _ in range(40)]
    s2 = [seg.sample(np.random.default_rng(16)) for _ in range(40)]
    for a, b in zip(s1, s2):
        np.testing.assert_array_equal(a.anchor, b.anchor)
        assert a.forward.reward == b.forward.reward
        assert a.forward.weight == b.forward.weight
        np.testing.assert_array_equal(a.forward.terminal, b.forward.terminal)
    g1 = one_step.gradient_estimate(params, s1)
    g2 = seg.gradient_estimate(params, s2)
    np.testing.assert_array_equal(g1, g2)


def test_degenerate_training_is_bitwise_identical():
    chain, regions = degenerate_gg2()
    net = neural.init_params(17, 2, 10)
    cfg = rga.TrainConfig(100, 1e-3, batch_size=8, seed=5, probe_samples=50)
    res_one = rga.fta_rga(chain, regions, net, cfg)
    res_seg = rga.noncompact_fta_rga(chain, regions, net, cfg)
    np.testing.assert_array_equal(res_one.params.theta, res_seg.params.theta)
    assert res_one.loss_log == res_seg.loss_log


# ---------------------------------------------------------------------------
# training loop

def test_train_zero_iterations_returns_init():
    chain = chains.bernoulli_chain()
    net = neural.init_params(20, 1, 12)
    cfg = rga.TrainConfig(0, 1e-2, probe_samples=50)
    result = rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg)
    assert result.params is not net  # trained on a copy
    np.testing.assert_array_equal(result.params.theta, net.theta)
    assert len(result.loss_log) == 1 and result.loss_log[0][0] == 0


def test_train_does_not_mutate_input_net():
    chain = chains.bernoulli_chain()
    net = neural.init_params(21, 1, 12)
    before = net.theta.copy()
    cfg = rga.TrainConfig(20, 1e-2, optimizer="sgd", probe_samples=50)
    rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg)
    np.testing.assert_array_equal(net.theta, before)


def test_train_log_structure():
    chain = chains.bernoulli_chain()
    net = neural.init_params(22, 1, 12)
    cfg = rga.TrainConfig(50, 1e-2, log_every=20, probe_samples=50)
    result = rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg)
    assert [row[0] for row in result.loss_log] == [0, 20, 40, 50]
    for _, mean, err in result.loss_log:
        assert math.isfinite(mean) and err >= 0.0


def test_train_deterministic_given_seed():
    chain = chains.bernoulli_chain()
    net = neural.init_params(23, 1, 12)
    cfg = rga.TrainConfig(60, 1e-2, batch_size=2, seed=9, probe_samples=50)
    a = rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg)
    b = rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg)
    np.testing.assert_array_equal(a.params.theta, b.params.theta)
    assert a.loss_log == b.loss_log
    cfg_other = rga.TrainConfig(60, 1e-2, batch_size=2, seed=10, probe_samples=50)
    c = rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg_other)
    assert np.any(c.params.theta != a.params.theta)


def test_train_symmetric_variant_runs():
    chain = chains.bernoulli_chain()
    net = neural.init_params(24, 1, 12)
    cfg = rga.TrainConfig(60, 1e-2, seed=3, probe_samples=50, symmetric=True)
    result = rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg)
    assert np.any(result.params.theta != net.theta)


def test_train_loss_drops_bernoulli():
    chain = chains.bernoulli_chain()
    net = neural.init_params(25, 1, 50)
    cfg = rga.TrainConfig(2000, 1e-2, batch_size=4, seed=0, optimizer="sgd",
                          probe_samples=1000)
    result = rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg)
    assert result.loss_log[-1][1] < result.loss_log[0][1]


def test_train_loss_drops_fluid():
    chain, regions = chains.fluid_hitting()
    net = neural.init_params(26, 2, 50)
    cfg = rga.TrainConfig(1000, 1e-3, batch_size=8, seed=0, probe_samples=1000)
    result = rga.fta_rga(chain, regions, net, cfg)
    assert result.loss_log[-1][1] < result.loss_log[0][1]


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_train_divergence_raises_with_step_index():
    chain = chains.bernoulli_chain()
    net = neural.init_params(27, 1, 12)
    cfg = rga.TrainConfig(500, 1e8, optimizer="sgd", probe_samples=50)
    with pytest.raises(neural.TrainingDiverged) as err:
        rga.poisson_rga(chain, chains.bernoulli_nu, None, net, cfg)
    assert err.value.step >= 1
