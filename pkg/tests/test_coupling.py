import json
import math
from pathlib import Path

import numpy as np
import pytest

from ricci_lab.coupling import (
    build_qstar,
    compose_kernel,
    coordinate_marginals,
    finite_dim_distribution,
    horizon_steps,
    marginal_error,
    pathwise_contraction_stats,
    sample_coupled_paths,
    support_budget,
)
from ricci_lab.errors import CapacityError, InputError
from ricci_lab.semigroups import markov_kernel
from ricci_lab.space import Potential, ProbMeasure, build_interval_space, graph_space
from ricci_lab.transport import INFEASIBLE, constrained_coupling

K, DELTA = 1.0, 2.0**-5


@pytest.fixture(scope="module")
def qk():
    return build_qstar(build_interval_space(7, 2.0, Potential("quadratic")), K, DELTA)


def test_plans_are_couplings_within_threshold(qk):
    n, d = qk.n, qk.space.metric
    for x in range(n):
        for y in range(n):
            q = qk.plan(x, y)
            assert np.allclose(q.sum(axis=1), qk.P[x], atol=1e-12)
            assert np.allclose(q.sum(axis=0), qk.P[y], atol=1e-12)
            used = q > 0
            assert np.all(d[used] <= qk.lam[x, y] * d[x, y] + 1e-12)
    assert np.allclose(qk.plan(2, 2), np.diag(qk.P[2]))
    assert np.allclose(qk.plan(4, 1), qk.plan(1, 4).T)


def test_multiplier_is_minimal(qk):
    space = qk.space
    step = math.exp(-K * DELTA) * qk.eps
    checked = 0
    for x, y in [(0, 6), (1, 5), (2, 3)]:
        px, py = ProbMeasure.from_masses(space, qk.P[x]), ProbMeasure.from_masses(space, qk.P[y])
        if qk.lam[x, y] - step >= math.exp(-K * DELTA) - 1e-15:
            assert constrained_coupling(space, px, py, (qk.lam[x, y] - step) * space.metric[x, y]) is INFEASIBLE
            checked += 1
    assert checked


def test_two_site_multiplier_by_hand():
    space = graph_space([[0, 1], [1, 0]])
    q = build_qstar(space, 2.0, 0.01, eps=1e-3)
    # the kernel rows differ, so the only admissible threshold is the full distance:
    # the smallest grid point e^{-K delta}(1 + j eps) >= 1
    j = math.ceil((math.exp(0.02) - 1) / 1e-3 - 1e-9)
    assert q.lam[0, 1] == pytest.approx(math.exp(-0.02) * (1 + j * 1e-3))
    assert q.lam[0, 1] >= 1.0 > math.exp(-0.02) * (1 + (j - 1) * 1e-3)


def test_composition(qk):
    assert np.array_equal(compose_kernel(qk, 1), qk.table.toarray())
    joint = compose_kernel(qk, 8)
    assert marginal_error(qk, 8, joint) < 1e-12
    first, second = coordinate_marginals(qk, joint, 0, 6)
    P8 = markov_kernel(qk.space, 8 * DELTA)
    assert np.allclose(first, P8[0]) and np.allclose(second, P8[6])
    with pytest.raises(InputError):
        compose_kernel(qk, 0)
    with pytest.raises(CapacityError):
        compose_kernel(qk, 2, cap=10)


def test_support_budget(qk):
    rows = support_budget(qk, 0, 6, 6)
    assert all(row["ok"] for row in rows)
    assert rows[-1]["reachable"] > 1


def test_sampled_law_matches_composed_kernel(qk):
    steps = 4
    N = 40000
    paths = sample_coupled_paths(qk, (1, 5), steps * qk.step_time, N, seed=2)
    n = qk.n
    final = paths.X[:, -1] * n + paths.Y[:, -1]
    empirical = np.bincount(final, minlength=n * n) / N
    exact = compose_kernel(qk, steps)[1 * n + 5]
    support = int((exact > 0).sum())
    assert 0.5 * np.abs(empirical - exact).sum() <= 3 * math.sqrt(support / N)


def test_chi_square_on_a_small_space():
    q = build_qstar(build_interval_space(5, 1.0), K, DELTA)
    N = 100_000
    paths = sample_coupled_paths(q, (0, 4), 3 * q.step_time, N, seed=11)
    exact = compose_kernel(q, 3)[4]
    final = paths.X[:, -1] * 5 + paths.Y[:, -1]
    counts = np.bincount(final, minlength=25)
    keep = exact * N >= 5
    expected = exact[keep] * N
    chi2 = float(((counts[keep] - expected) ** 2 / expected).sum())
    from scipy.stats import chi2 as chi2_dist

    assert chi2_dist.sf(chi2, keep.sum() - 1) > 0.01
    # cells with small expected counts are nearly empty too
    assert counts[~keep].sum() <= max(20, 5 * exact[~keep].sum() * N)


def test_sampling_is_deterministic_and_path_local(qk):
    alpha = np.full((qk.n, qk.n), 1.0 / qk.n**2)
    a = sample_coupled_paths(qk, alpha, 4 * qk.step_time, 50, seed=9)
    b = sample_coupled_paths(qk, alpha, 4 * qk.step_time, 80, seed=9)
    assert np.array_equal(a.X, b.X[:50]) and np.array_equal(a.Y, b.Y[:50])
    assert a[3].x.tolist() == a.X[3].tolist()
    assert len(a.rows(limit=2)) == 2 * 5


def test_invalid_horizon_and_alpha(qk):
    with pytest.raises(InputError):
        horizon_steps(qk, 0.3 * qk.step_time)
    with pytest.raises(InputError):
        sample_coupled_paths(qk, np.ones((qk.n, qk.n)), qk.step_time, 5)
    with pytest.raises(InputError):
        sample_coupled_paths(qk, (0, qk.n), qk.step_time, 5)


def test_contraction_stats(qk):
    diag = sample_coupled_paths(qk, (3, 3), 8 * qk.step_time, 200, seed=1)
    r = pathwise_contraction_stats(diag)
    assert r.passed and max(r.residuals) == 0.0
    apart = sample_coupled_paths(qk, (0, 6), 8 * qk.step_time, 500, seed=1)
    assert pathwise_contraction_stats(apart).diagnostics["violations"] == 0
    assert pathwise_contraction_stats(apart).diagnostics["separations_after_meeting"] == 0
    stronger = pathwise_contraction_stats(apart, K=K + 3.0)
    assert not stronger.passed and stronger.diagnostics["violations"] > 0


def test_finite_dimensional_distributions(qk):
    n = qk.n
    t1, t2 = 2 * qk.step_time, 5 * qk.step_time
    two = finite_dim_distribution(qk, (0, 6), [t1, t2])
    assert two.shape == (n, n, n, n)
    assert two.sum() == pytest.approx(1.0)
    one = finite_dim_distribution(qk, (0, 6), [t1])
    assert np.allclose(two.sum(axis=(2, 3)), one, atol=1e-14)
    later = finite_dim_distribution(qk, (0, 6), [t2])
    assert np.allclose(two.sum(axis=(0, 1)), later, atol=1e-14)
    # coordinate projections are the heat kernel
    assert np.allclose(later.sum(axis=1), markov_kernel(qk.space, 5 * DELTA)[0], atol=1e-12)
    with pytest.raises(InputError):
        finite_dim_distribution(qk, (0, 6), [t2, t1])
    with pytest.raises(CapacityError):
        finite_dim_distribution(qk, (0, 6), [t1, t2, t2], cap=1000)


def test_slack_table_is_monotone_in_delta():
    table = json.loads((Path(__file__).parent / "golden" / "coupling_slack.json").read_text())["rows"]
    for n in {row["n"] for row in table}:
        rows = sorted((row for row in table if row["n"] == n), key=lambda r: -r["delta"])
        slack = [row["max_slack"] for row in rows]
        assert all(b <= a + 1e-15 for a, b in zip(slack, slack[1:]))
        for row in rows:
            assert row["max_slack"] <= row["continuum_rate"] * (1 + 1e-3) + 1e-12


def test_build_rejects_bad_steps():
    space = build_interval_space(5, 1.0)
    with pytest.raises(InputError):
        build_qstar(space, K, 0.0)
    with pytest.raises(InputError):
        build_qstar(space, K, DELTA, eps=0.0)
