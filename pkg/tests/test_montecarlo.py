import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cuspstats import dyson, montecarlo as mc
from cuspstats.errors import DomainError
from cuspstats.profile import EntryDistribution, build_flat, build_two_block, test_function

BUMP = test_function("bump")


def _rng(seed=0):
    return np.random.default_rng(seed)


@pytest.mark.parametrize("beta", [1, 2])
@pytest.mark.parametrize("family", ["gaussian", "rademacher"])
def test_sample_matrix_structure_and_variances(beta, family):
    p = build_two_block(300, 0.3, 0.1, 1.2, 0.4)
    S = p.full_matrix()
    Hs = [mc.sample_matrix(p, EntryDistribution(family, beta), _rng(k), S) for k in range(40)]
    for H in Hs[:3]:
        assert np.array_equal(H, H.conj().T)
    emp = np.mean([np.abs(H) ** 2 for H in Hs], axis=0)
    idx = p.block_index()
    for a in range(2):
        for b in range(2):
            blk = (idx[:, None] == a) & (idx[None, :] == b) & ~np.eye(300, dtype=bool)
            assert emp[blk].mean() == pytest.approx(S[blk].mean(), rel=0.03)


def test_rademacher_entries_take_two_values():
    p = build_flat(50)
    H = mc.sample_matrix(p, EntryDistribution("rademacher", 1), _rng())
    assert np.allclose(np.abs(H), math.sqrt(1 / 50))
    H2 = mc.sample_matrix(p, EntryDistribution("rademacher", 2), _rng())
    off = ~np.eye(50, dtype=bool)
    assert np.allclose(np.abs(H2.real[off]), math.sqrt(1 / 100))
    assert np.allclose(np.diag(H2).imag, 0)


def test_complex_class_has_vanishing_pseudo_variance():
    p = build_flat(200)
    Hs = [mc.sample_matrix(p, EntryDistribution("gaussian", 2), _rng(k)) for k in range(30)]
    off = ~np.eye(200, dtype=bool)
    pseudo = np.mean([H[off] ** 2 for H in Hs])
    assert abs(pseudo) < 5e-4


def test_linear_statistic_direct_sum():
    p = build_flat(100)
    H = mc.sample_matrix(p, EntryDistribution(), _rng(3))
    lam = np.linalg.eigvalsh(H)
    ref = sum(float(BUMP.eval(np.array([(l - 1.0) / 0.3]))[0]) for l in lam) - 2.5
    assert mc.linear_statistic(H, BUMP, 1.0, 0.3, 2.5) == pytest.approx(ref, abs=1e-12)


def test_centering_against_semicircle():
    p = build_flat(1000)
    E0, eta0 = 1.95, 0.1
    c = mc.centering(p, BUMP, E0, eta0)
    rho = lambda x: math.sqrt(max(4 - x * x, 0.0)) / (2 * math.pi)
    f = lambda x: float(BUMP.eval(np.array([(x - E0) / eta0]))[0]) * rho(x)
    ref = integrate.quad(f, E0 - eta0, 2.0, epsabs=1e-14, limit=200)[0]
    assert c.integral == pytest.approx(ref, rel=1e-8)
    assert c.value == pytest.approx(1000 * ref, rel=1e-8)
    assert c.grid_value / c.integral == pytest.approx(1.0, rel=1e-3)


def test_jackknife_mean_error_is_classical():
    x = _rng(4).normal(size=500)
    mom, se = mc.jackknife_moments(x)
    assert se[0] == pytest.approx(x.std(ddof=1) / math.sqrt(len(x)), rel=1e-10)
    assert mom[1] == pytest.approx(x.var(ddof=1), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(3, 40), seed=st.integers(0, 10**6))
def test_jackknife_matches_explicit_loop(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    _, se = mc.jackknife_moments(x)
    loo = np.array([mc._moments(np.delete(x, i)) for i in range(n)])
    ref = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    assert np.allclose(se, ref, rtol=1e-9, equal_nan=True)


def test_jackknife_needs_three_samples():
    with pytest.raises(DomainError):
        mc.jackknife_moments([1.0, 2.0])


def test_ks_on_gaussian_and_uniform():
    ks, p, crit = mc.ks_standardized(_rng(5).normal(size=2000))
    assert ks < crit and p > 0.01
    ks_u, _, crit_u = mc.ks_standardized(_rng(5).exponential(size=2000))
    assert ks_u > crit_u


def test_config_round_trip_and_validation():
    cfg = mc.ExperimentConfig(build_two_block(100, 0.3, 0.1, 1.2, 0.1),
                              EntryDistribution("rademacher", 2), E0=0.3, eta0=0.1, samples=10)
    again = mc.ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again.to_json() == cfg.to_json()
    with pytest.raises(DomainError):
        mc.ExperimentConfig.from_json(dict(cfg.to_json(), colour="red"))
    with pytest.raises(DomainError):
        mc.ExperimentConfig(build_flat(10), eta0=0.1, gamma=0.5)
    with pytest.raises(DomainError):
        mc.ExperimentConfig(build_flat(10), samples=2)


def test_select_point():
    reps = [type("R", (), {"kind": k, "E0": e, "Delta": d})() for k, e, d in
            [("left-edge", -2.0, math.inf), ("right-edge", 2.0, math.inf)]]
    assert mc._select_E0(reps, "auto").E0 == 2.0


def _small(workers, seed=11):
    cfg = mc.ExperimentConfig(build_flat(60), E0=2.0, eta0=0.3, samples=12, seed=seed,
                              workers=workers)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return mc.run_experiment(cfg)


@pytest.fixture(scope="module")
def small_run():
    return _small(1)


def test_reproducible_across_worker_counts(small_run):
    other = _small(2)
    assert other.per_sample == small_run.per_sample
    assert _small(1, seed=12).per_sample != small_run.per_sample


def test_experiment_summary_and_outputs(small_run, tmp_path):
    r = small_run
    assert r.N == 60 and r.E0 == pytest.approx(2.0, abs=1e-9)
    assert r.theory["regime"] == "edge"
    assert r.theory["bias_pred"] == pytest.approx(math.exp(-1) / 4)
    assert r.global_law["sup_distance"] < 0.1
    paths = mc.write_outputs(r, tmp_path)
    s = mc.load_summary(paths["summary.json"])
    assert s["samples"] == 12 and s["theory"]["alpha_hat"] == "inf"
    assert len(open(paths["per_sample.csv"]).read().split()) == 12
    assert open(paths["plotdata.csv"]).readline().strip() == "standardized,empirical_cdf,gaussian_cdf"


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("CUSPSTATS_WORKERS", "3")
    assert mc._worker_count(None) == 3
    assert mc._worker_count(2) == 2
    monkeypatch.delenv("CUSPSTATS_WORKERS")
    assert mc._worker_count(None) == 1
