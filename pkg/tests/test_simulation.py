import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levytest.models import CompoundPoissonExp, GammaSubordinator, ModelError, psi, psi_derivs, stationary_lst, \
    stationary_moments
from levytest.simulation import (SamplePath, SimConfig, extract_qbps, mc_zero_prob, mc_zero_probs,
                                 sample_stationary_initial, simulate_path, simulate_paths)
from levytest.streams import BLOCK_SIZE, block_sizes

MM1 = CompoundPoissonExp(0.6, 10.0)


def test_pure_drain_is_deterministic_given_epochs():
    path = simulate_path(CompoundPoissonExp(0.0, 1.0), SimConfig(xi=1.0, n=50, init=5.0, seed=3))
    np.testing.assert_allclose(path.values, np.maximum(5.0 - path.epochs, 0.0), rtol=0, atol=1e-12)
    assert np.all(np.diff(path.epochs) > 0)


def test_same_seed_same_path_and_different_seed_differs():
    cfg = SimConfig(xi=3.0, n=200, seed=11)
    a, b = simulate_path(MM1, cfg), simulate_path(MM1, cfg)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.epochs, b.epochs)
    c = simulate_path(MM1, SimConfig(xi=3.0, n=200, seed=12))
    assert not np.array_equal(a.epochs, c.epochs)


def test_replications_independent_of_worker_count():
    cfg = SimConfig(xi=3.0, n=20, seed=5)
    reps = BLOCK_SIZE + 300
    v1, e1 = simulate_paths(MM1, cfg, reps, n_jobs=1)
    v2, e2 = simulate_paths(MM1, cfg, reps, n_jobs=2)
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_array_equal(e1, e2)
    assert v1.shape == (reps, 21)


def test_block_sizes():
    assert block_sizes(1) == [1]
    assert block_sizes(2 * BLOCK_SIZE + 5) == [BLOCK_SIZE, BLOCK_SIZE, 5]


def test_stationary_sample_mean_matches_moment():
    path = simulate_path(MM1, SimConfig(xi=3.0, n=100_000, seed=1))
    v = path.values[1:]
    # batch means give an SE that accounts for serial correlation
    batches = v.reshape(100, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(len(batches))
    assert abs(v.mean() - stationary_moments(MM1)[0]) < 3 * se


def test_conditional_zero_frequency_matches_closed_form():
    xi = 3.0
    theta = psi(MM1, xi)
    V, _ = simulate_paths(MM1, SimConfig(xi=xi, n=50, seed=2), 20_000)
    prev, zero = V[:, :-1].ravel(), (V[:, 1:] == 0).ravel()
    buckets = [prev == 0, (prev > 0) & (prev <= 0.05), (prev > 0.05) & (prev <= 0.1), (prev > 0.1) & (prev <= 0.2),
               prev > 0.2]
    for i, sel in enumerate(buckets):
        h = xi / theta * np.exp(-theta * prev[sel])
        expected = h.mean()
        se = math.sqrt(np.mean(h * (1 - h)) / sel.sum())
        assert abs(zero[sel].mean() - expected) < 3 * se, i


def test_stationary_initial_atom_and_transform():
    from levytest.streams import block_rng
    from levytest.simulation import _stationary_draws

    v = _stationary_draws(MM1, block_rng(0, 0), 200_000, 0.0, 0.0)
    p = (v == 0).mean()
    assert abs(p - 0.94) < 3 * math.sqrt(0.94 * 0.06 / len(v))
    lst = np.exp(-v)
    assert abs(lst.mean() - stationary_lst(MM1, 1.0)) < 3 * lst.std() / math.sqrt(len(v))
    assert sample_stationary_initial(CompoundPoissonExp(0.0, 1.0), seed=1) == 0.0
    assert sample_stationary_initial(MM1, seed=4) == sample_stationary_initial(MM1, seed=4)


def test_unstable_stationary_start_rejected():
    with pytest.raises(ModelError):
        simulate_path(CompoundPoissonExp(11.0, 10.0), SimConfig(xi=1.0, n=5))


@pytest.mark.parametrize("y,offset,durations", [
    ([0, 1, 0, 0, 1, 1], 2, [3, 1]),
    ([1, 1, 1], 1, [1, 1]),
    ([0, 0, 0], 3, []),
    ([0, 1, 0, 0], 2, []),
])
def test_extract_qbps(y, offset, durations):
    q = extract_qbps(np.array(y, dtype=bool))
    assert q.offset == offset
    assert list(q.durations) == durations


@given(st.lists(st.booleans(), min_size=1, max_size=60))
@settings(max_examples=200, deadline=None)
def test_extract_qbps_accounting(y):
    q = extract_qbps(np.array(y, dtype=bool))
    zeros = np.flatnonzero(y)
    assert len(q) == max(len(zeros) - 1, 0)
    assert np.all(q.durations >= 1)
    if len(zeros):
        assert q.offset == zeros[0] + 1
        assert q.offset + q.durations.sum() == zeros[-1] + 1


def test_zero_probabilities_small_k():
    xi = 3.0
    theta = psi(MM1, xi)
    d1 = psi_derivs(MM1, xi, 1)[0]
    est, se = mc_zero_probs(MM1, xi, 2, 200_000, seed=9)
    assert abs(est[0] - xi / theta) < 3 * se[0]
    assert abs(est[1] - (xi / theta) ** 2 * d1) < 3 * se[1]


def test_zero_probability_at_slow_sampling():
    est, se = mc_zero_prob(MM1, 0.01, 2, 100_000, seed=1)
    assert abs(est - 0.94) < 3 * se


def test_csv_round_trip():
    path = simulate_path(MM1, SimConfig(xi=3.0, n=30, seed=8))
    text = path.to_csv()
    back = SamplePath.from_csv(io.StringIO("# comment\n" + text))
    np.testing.assert_array_equal(back.values, path.values)
    np.testing.assert_array_equal(back.epochs, path.epochs)


@pytest.mark.parametrize("body,line", [
    ("index,epoch,value,is_zero\n0,0.0,0.0,1\n1,0.5,abc,0\n", 3),
    ("index,epoch,value,is_zero\n0,0.0,0.0,1\n2,0.5,0.1,0\n", 3),
    ("index,epoch,value,is_zero\n0,0.0,0.2,1\n", 2),
    ("index,epoch,value\n", 1),
])
def test_csv_errors_carry_line_numbers(body, line):
    with pytest.raises(ValueError, match=f"line {line}:"):
        SamplePath.from_csv(io.StringIO(body))


def test_gamma_grid_refinement_consistency():
    model = GammaSubordinator(0.5, 1.0)
    reps = 20_000
    ests = []
    for h in (2e-3, 1e-3):
        V, _ = simulate_paths(model, SimConfig(xi=1.0, n=1, init="empty", grid_step=h, seed=4), reps)
        ests.append((V[:, 1] == 0).mean())
    se = math.sqrt(sum(p * (1 - p) / reps for p in ests))
    assert abs(ests[0] - ests[1]) < 2 * se
    p1 = 1.0 / psi(model, 1.0)
    assert abs(ests[1] - p1) < 3 * math.sqrt(p1 * (1 - p1) / reps)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(xi=0.0, n=3)
    with pytest.raises(ValueError):
        SimConfig(xi=1.0, n=0)
    with pytest.raises(ValueError):
        SimConfig(xi=1.0, n=3, init="warm")
    with pytest.raises(ValueError):
        SimConfig(xi=1.0, n=3, init=-1.0)
    assert SimConfig(xi=4.0, n=3).step == pytest.approx(2.5e-4)
