import numpy as np
import pytest
from scipy.stats import norm

from icsmarginal import marginal_mean, marginal_variance, weighted_median
from icsmarginal.simulate import (
    GeneratorSpec,
    Mechanism,
    bias_sweep,
    example_mean_t2_variance,
    gen_example_correlation,
    gen_example_mean,
    gen_ics_regression,
    gen_latent,
    gen_recurrent_events,
    gen_size_first,
    generate,
)


def test_example_mean_structure():
    s = gen_example_mean(50, 3, 7, seed=1)
    assert set(s.sizes.tolist()) <= {3, 7}
    assert s.n_obs == s.sizes.sum()
    same = gen_example_mean(30, 4, 4, seed=2)
    assert np.all(same.sizes == 4)
    assert marginal_mean(same, "ics").value == pytest.approx(marginal_mean(same, "naive").value)


def test_determinism_and_generator_input():
    a = gen_example_mean(20, 5, 50, seed=7)
    b = gen_example_mean(20, 5, 50, seed=7)
    np.testing.assert_array_equal(a.y, b.y)
    c = gen_example_mean(20, 5, 50, seed=np.random.default_rng(7))
    np.testing.assert_array_equal(a.y, c.y)
    assert not np.array_equal(a.y, gen_example_mean(20, 5, 50, seed=8).y)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        gen_example_mean(0, 1, 1)
    with pytest.raises(ValueError):
        gen_example_mean(5, 0, 1)
    with pytest.raises(ValueError):
        gen_example_correlation(5, 10, 1)
    with pytest.raises(ValueError):
        gen_recurrent_events(5, 0.0)
    with pytest.raises(ValueError):
        gen_recurrent_events(5, 1.0, rate=-1.0)
    with pytest.raises(ValueError):
        gen_recurrent_events(5, 1.0, "weibull")
    with pytest.raises(ValueError):
        gen_latent(5, outcome_sd=0.0)
    with pytest.raises(ValueError):
        GeneratorSpec("zigzag", 5)


def test_example4_first_and_ics_variances():
    m, reps = 20, 5000
    t1 = np.empty(reps)
    for k in range(reps):
        s = gen_example_mean(m, 4, 25, seed=k)
        t1[k] = marginal_mean(s, "first").value
    assert t1.var(ddof=1) == pytest.approx(2 / m, rel=0.05)
    assert example_mean_t2_variance(20, 4, 25) == pytest.approx(0.05725)
    assert example_mean_t2_variance(20, 5, 12) == pytest.approx(0.0570833, abs=1e-7)


def test_example5_big_cluster_fraction():
    s = gen_example_correlation(100_000, seed=3)
    frac = np.mean(s.sizes == 10)
    assert abs(frac - norm.cdf(-1) ** 2) < 0.002
    assert set(s.sizes.tolist()) == {1, 10}
    flat = gen_example_correlation(50, 3, 3, seed=1)
    assert np.all(flat.sizes == 3)


def test_recurrent_fixed_gaps():
    s = gen_recurrent_events(4, 2.5, "fixed", gap_value=1.0, seed=0)
    assert s.sizes.tolist() == [3] * 4
    np.testing.assert_allclose(s.y[:3, 0], [1.0, 1.0, 0.5])
    assert s.censored[:3].tolist() == [False, False, True]
    short = gen_recurrent_events(3, 0.5, "fixed", gap_value=1.0)
    assert short.sizes.tolist() == [1, 1, 1]
    assert short.censored.all()
    np.testing.assert_allclose(short.y[:, 0], 0.5)


def test_recurrent_boundary_gap_ends_exactly_at_c():
    s = gen_recurrent_events(2, 2.0, "fixed", gap_value=1.0)
    # S_1 = 1 < 2 <= S_2 = 2 -> two gaps, second censored at 2 - 1 = 1
    assert s.sizes.tolist() == [2, 2]
    np.testing.assert_allclose(s.y[:2, 0], [1.0, 1.0])


def test_recurrent_exponential_count_and_invariant():
    rate, c = 1.5, 2.0
    s, full = gen_recurrent_events(100_000, c, rate=rate, seed=4, return_uncensored=True)
    assert s.sizes.mean() == pytest.approx(1 + rate * c, rel=0.02)
    y = s.y[:, 0]
    before = s.cluster_sums(np.where(s.censored, 0.0, y))
    assert np.all(before < c)
    assert np.all(c <= before + full + 1e-12)
    np.testing.assert_allclose(before + y[s.censored], c)
    assert s.censored.sum() == s.n_clusters


def test_latent_noninformative_when_b_zero():
    ics, naive = [], []
    for k in range(400):
        s = gen_latent(100, a=0.5, b=0.0, seed=k)
        ics.append(marginal_mean(s, "ics").value)
        naive.append(marginal_mean(s, "naive").value)
    diff = np.array(ics) - np.array(naive)
    assert abs(diff.mean()) < 3 * diff.std(ddof=1) / np.sqrt(diff.size)


def test_latent_informative_when_b_positive():
    ics, naive = [], []
    for k in range(300):
        s = gen_latent(100, a=0.5, b=1.0, seed=k)
        ics.append(marginal_mean(s, "ics").value)
        naive.append(marginal_mean(s, "naive").value)
    ics, naive = np.array(ics), np.array(naive)
    assert abs(ics.mean()) < 3 * ics.std(ddof=1) / np.sqrt(ics.size)
    assert naive.mean() > 10 * naive.std(ddof=1) / np.sqrt(naive.size)


def test_latent_custom_links():
    s = gen_latent(
        8,
        seed=0,
        size_link=lambda xi, rng: np.full(xi.size, 2),
        outcome_link=lambda xi, rng: xi,
    )
    assert s.sizes.tolist() == [2] * 8
    y = s.univariate()
    np.testing.assert_array_equal(y[0::2], y[1::2])
    with pytest.raises(ValueError):
        gen_latent(3, size_link=lambda xi, rng: np.zeros(3))


def test_latent_permutation_invariance():
    s = gen_latent(40, seed=9)
    rng = np.random.default_rng(0)
    y = s.univariate().copy()
    for o, n in zip(s.offsets, s.sizes):
        y[o : o + n] = rng.permutation(y[o : o + n])
    t = s.with_outcomes(y)
    assert marginal_mean(t).value == pytest.approx(marginal_mean(s).value, abs=1e-12)
    assert marginal_variance(t).value == pytest.approx(marginal_variance(s).value, abs=1e-12)
    assert weighted_median(t).value == weighted_median(s).value


def test_size_first_and_regression_generators():
    s = gen_size_first(50, 2, 6, seed=1)
    assert s.sizes.min() >= 2 and s.sizes.max() <= 6
    r = gen_ics_regression(10, seed=2)
    assert r.x_names[1] == "x" and np.all(r.x[:, 0] == 1.0)


def test_cluster_independence():
    s = gen_latent(20_000, seed=12)
    g = s.cluster_means(s.univariate())
    lag = np.corrcoef(g[:-1], g[1:])[0, 1]
    assert abs(lag) < 3 / np.sqrt(g.size)


@pytest.mark.parametrize("name,mech", [
    ("SizeFirst", Mechanism.SIZE_FIRST),
    ("OutcomeFirstRecurrent", Mechanism.RECURRENT),
    ("ExampleMean", Mechanism.EXAMPLE_MEAN),
    ("example-correlation", Mechanism.EXAMPLE_CORRELATION),
])
def test_mechanism_names(name, mech):
    assert GeneratorSpec(name, 3).mechanism is mech


def test_generate_dispatch():
    spec = GeneratorSpec("recurrent", 5, {"followup_c": 2.5, "gap_distribution": "fixed"}, seed=1)
    assert generate(spec).sizes.tolist() == [3] * 5
    assert generate(spec, M=2).n_clusters == 2
    corr = generate(GeneratorSpec("example-correlation", 5))
    assert corr.outcome_dim == 2


def test_bias_sweep_table():
    spec = GeneratorSpec("example-mean", 10, {"n_a": 5, "n_b": 50})
    rows = bias_sweep(spec, ["first", "ics", "naive"], [10, 40], replications=400, seed=3)
    assert [(r.M, r.estimator) for r in rows] == [
        (10, "first"), (10, "ics"), (10, "naive"), (40, "first"), (40, "ics"), (40, "naive")
    ]
    for r in rows:
        if r.estimator == "naive":
            assert r.mean > 5 * r.mc_se
        else:
            assert abs(r.mean) < 3 * r.mc_se
    again = bias_sweep(spec, ["first", "ics", "naive"], [10, 40], replications=400, seed=3)
    assert rows == again


def test_bias_sweep_equal_sizes_and_custom_estimators():
    spec = GeneratorSpec("example-mean", 10, {"n_a": 6, "n_b": 6})
    rows = bias_sweep(spec, {"naive": lambda s: marginal_mean(s, "naive").value}, [20], 300, seed=1)
    assert abs(rows[0].mean) < 3 * rows[0].mc_se
    with pytest.raises(ValueError):
        bias_sweep(spec, ["ics"], [10], replications=50)
