import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import constant_model, linear_model
from oracles import linear_projection_worst
from robustcf import cfgen, data, nn
from robustcf.rng import SplitMix64
from robustcf.stability import stability_relaxed

SIGMOID_1D = linear_model([10.0], -5.0)


def test_robustness_test_constant_models():
    cfg = cfgen.TrexConfig(tau=0.8, k=50)
    assert cfgen.robustness_test(constant_model(0.9), [0.0, 0.0], cfg)
    assert not cfgen.robustness_test(constant_model(0.5), [0.0, 0.0], cfgen.TrexConfig(tau=0.6, k=50))


def test_robustness_test_is_inclusive():
    x = np.array([0.7])
    cfg = cfgen.TrexConfig(k=100)
    value = stability_relaxed(SIGMOID_1D, x, cfg.stability_config())
    assert cfgen.robustness_test(SIGMOID_1D, x, cfgen.TrexConfig(k=100, tau=value))


@pytest.mark.parametrize("kw", [{"tau": 1.2}, {"tau": -0.1}, {"eta": 0.0}, {"max_steps": -1}, {"K": 0}, {"k": 0}])
def test_trex_config_validation(kw):
    with pytest.raises(ValueError):
        cfgen.TrexConfig(**kw)


@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_min_cost_1d_sigmoid(norm):
    rec = cfgen.min_cost_cf(SIGMOID_1D, [0.2], norm)
    assert rec.verdict == cfgen.FOUND
    assert 0.5 <= rec.x_cf[0] <= 0.52
    assert abs(rec.cost - 0.3) <= 0.02
    assert rec.m_cf >= 0.5


def test_min_cost_linear_matches_projection():
    assert linear_projection_worst(20) <= 1e-3


def test_min_cost_l1_on_linear_moves_largest_weight_coordinate():
    w, b = np.array([1.0, 3.0]), -2.0
    x = np.array([0.1, 0.1])
    rec = cfgen.min_cost_cf(linear_model(w, b), x, "l1")
    # cheapest l1 move changes only the coordinate with the largest |w|
    assert abs(rec.x_cf[0] - x[0]) <= 1e-3
    assert rec.cost == pytest.approx((-b - w @ x) / 3.0, abs=1e-3)


def test_min_cost_near_boundary():
    x = np.array([0.5 - 0.0004 / 10])
    assert nn.forward(SIGMOID_1D, x) < 0.5 and nn.forward(SIGMOID_1D, x) > 0.4998
    assert cfgen.min_cost_cf(SIGMOID_1D, x, "l2").cost <= 1e-3


def test_min_cost_infeasible_is_not_found():
    rec = cfgen.min_cost_cf(constant_model(0.3), [0.0, 0.0], "l2", cfgen.MinCostParams(max_rounds=2, inner_steps=10))
    assert rec.verdict == cfgen.NOT_FOUND and rec.x_cf is None and not rec.usable


def test_min_cost_requires_negative_query():
    with pytest.raises(ValueError):
        cfgen.min_cost_cf(SIGMOID_1D, [0.9], "l2")
    with pytest.raises(ValueError):
        cfgen.min_cost_cf(SIGMOID_1D, [0.2], "linf")


def test_nn_single_positive_row():
    ds = np.array([[0.1], [0.3], [0.8]])
    rec = cfgen.nn_cf(SIGMOID_1D, [0.2], ds, "l2")
    np.testing.assert_array_equal(rec.x_cf, [0.8])


def test_nn_tie_prefers_lower_row():
    m = linear_model([1.0, 0.0], -0.5)
    ds = np.array([[0.9, 0.4], [0.9, -0.4], [0.0, 0.0]])
    rec = cfgen.nn_cf(m, [0.1, 0.0], ds, "l2")
    np.testing.assert_array_equal(rec.x_cf, ds[0])


def test_nn_no_positive_row():
    rec = cfgen.nn_cf(SIGMOID_1D, [0.2], np.array([[0.1], [0.3]]), "l1")
    assert rec.verdict == cfgen.NOT_FOUND


@given(st.integers(0, 2**32), st.sampled_from(["l1", "l2"]))
@settings(max_examples=30, deadline=None)
def test_nn_matches_exhaustive_scan(seed, norm):
    g = SplitMix64(seed)
    m = linear_model(g.normal(2), 0.0)
    ds = g.normal((40, 2))
    x = g.normal(2)
    if nn.forward(m, x) >= 0.5:
        x = -x
    rec = cfgen.nn_cf(m, x, ds, norm)
    best, best_d = None, np.inf
    for row in ds:
        if nn.forward(m, row) >= 0.5:
            dist = np.abs(row - x).sum() if norm == "l1" else np.sqrt(((row - x) ** 2).sum())
            if dist < best_d:
                best, best_d = row, dist
    if best is None:
        assert rec.verdict == cfgen.NOT_FOUND
    else:
        np.testing.assert_array_equal(rec.x_cf, best)


def _base(x_cf, x=(0.2,)):
    x_cf = np.atleast_1d(np.asarray(x_cf, dtype=np.float64))
    return cfgen.CounterfactualRecord(np.asarray(x, dtype=np.float64), x_cf, cfgen.MIN_COST, "l2", 0.0,
                                      nn.forward(SIGMOID_1D, x_cf), float("nan"), cfgen.FOUND)


def test_trex_i_returns_robust_base_unchanged():
    rec = cfgen.trex_i(SIGMOID_1D, [0.2], _base(0.95), cfgen.TrexConfig(tau=0.6))
    assert rec.steps == 0 and rec.x_cf[0] == 0.95 and rec.verdict == cfgen.FOUND


def test_trex_i_zero_steps_returns_base():
    rec = cfgen.trex_i(SIGMOID_1D, [0.2], _base(0.5), cfgen.TrexConfig(tau=0.9, max_steps=0))
    assert rec.steps == 0 and rec.x_cf[0] == 0.5 and rec.verdict == cfgen.UNMET


def test_trex_i_ascends_monotonically_on_1d_sigmoid():
    cfg = cfgen.TrexConfig(tau=0.6)
    base = cfgen.min_cost_cf(SIGMOID_1D, [0.2], "l2")
    rec, path = cfgen.trex_i(SIGMOID_1D, [0.2], base, cfg, return_path=True)
    assert rec.verdict == cfgen.FOUND
    assert rec.x_cf[0] > base.x_cf[0]
    assert stability_relaxed(SIGMOID_1D, rec.x_cf, cfg.stability_config()) >= 0.6
    values = [v for _, v in path]
    assert all(b >= a - 1e-6 for a, b in zip(values, values[1:]))
    assert rec.steps == len(path) - 1


def test_trex_i_not_found_base_propagates():
    nf = cfgen.min_cost_cf(constant_model(0.3, 1), [0.0], "l2", cfgen.MinCostParams(max_rounds=1, inner_steps=2))
    assert cfgen.trex_i(constant_model(0.3, 1), [0.0], nf, cfgen.TrexConfig()).verdict == cfgen.NOT_FOUND


@pytest.mark.parametrize("measure", ["point", "mean", "relaxed"])
def test_trex_i_tau_zero_accepts_base(measure):
    base = cfgen.min_cost_cf(SIGMOID_1D, [0.2], "l2")
    rec = cfgen.trex_i(SIGMOID_1D, [0.2], base, cfgen.TrexConfig(tau=0.0), measure=measure)
    assert rec.steps == 0
    np.testing.assert_array_equal(rec.x_cf, base.x_cf)


def test_trex_nn_first_hit_equals_nn():
    ds = np.array([[0.95], [0.1], [0.99]])
    cfg = cfgen.TrexConfig(tau=0.7, K=10)
    a = cfgen.trex_nn(SIGMOID_1D, [0.2], ds, cfg)
    b = cfgen.nn_cf(SIGMOID_1D, [0.2], ds)
    np.testing.assert_array_equal(a.x_cf, b.x_cf)
    assert a.steps == 1


def test_trex_nn_skips_fragile_neighbour():
    ds = np.array([[0.52], [0.05], [0.9]])
    cfg = cfgen.TrexConfig(tau=0.7, K=10)
    scfg = cfg.stability_config()
    # oracle: scan positive rows by distance and test each one
    order = sorted((abs(r[0] - 0.2), i) for i, r in enumerate(ds) if nn.forward(SIGMOID_1D, r) >= 0.5)
    passing = [i for _, i in order if stability_relaxed(SIGMOID_1D, ds[i], scfg) >= 0.7]
    assert order[0][1] == 0 and passing[0] == 2
    rec = cfgen.trex_nn(SIGMOID_1D, [0.2], ds, cfg)
    np.testing.assert_array_equal(rec.x_cf, ds[2])
    assert rec.steps == 2


def test_trex_nn_all_fail():
    ds = np.array([[0.51], [0.52]])
    rec = cfgen.trex_nn(SIGMOID_1D, [0.2], ds, cfgen.TrexConfig(tau=0.9, K=2))
    assert rec.verdict == cfgen.NOT_FOUND and rec.x_cf is None


def test_trex_nn_empty_dataset():
    with pytest.raises(ValueError):
        cfgen.trex_nn(SIGMOID_1D, [0.2], np.empty((0, 1)), cfgen.TrexConfig())


@pytest.fixture(scope="module")
def small_moons():
    ds = data.make_moons(120, 0.1, seed=5)
    m = nn.fit_mlp([2, 32, 1], ds, nn.TrainConfig(seed=2, learning_rate=0.01))
    neg = np.flatnonzero(nn.forward(m, ds.features) < 0.5)[:12]
    return m, ds, neg


def test_trex_nn_minimality_and_validity(small_moons):
    m, ds, neg = small_moons
    cfg = cfgen.TrexConfig(tau=0.7, K=50, k=200)
    for i in neg:
        rec = cfgen.trex_nn(m, ds.features[i], ds, cfg)
        if rec.verdict != cfgen.FOUND:
            continue
        assert rec.m_cf >= 0.5 and rec.stability >= 0.7
        rows, dist = cfgen.positive_candidates(m, ds.features[i], ds, "l2", K=50)
        for r, d in zip(rows, dist):
            if d < rec.cost:
                assert not cfgen.robustness_test(m, ds.features[r], cfg)


@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_nn_cost_at_least_min_cost(small_moons, norm):
    m, ds, neg = small_moons
    for i in neg:
        mc = cfgen.min_cost_cf(m, ds.features[i], norm)
        if mc.x_cf is None:
            continue
        assert cfgen.nn_cf(m, ds.features[i], ds, norm).cost >= mc.cost - 1e-3


def test_generators_are_deterministic(small_moons):
    m, ds, neg = small_moons
    x = ds.features[neg[0]]
    cfg = cfgen.TrexConfig(k=200)
    a = cfgen.trex_i(m, x, cfgen.min_cost_cf(m, x, "l1"), cfg)
    b = cfgen.trex_i(m, x, cfgen.min_cost_cf(m, x, "l1"), cfg)
    np.testing.assert_array_equal(a.x_cf, b.x_cf)


def test_found_records_are_valid(small_moons):
    m, ds, neg = small_moons
    cfg = cfgen.TrexConfig(k=200)
    for i in neg:
        x = ds.features[i]
        for rec in (cfgen.min_cost_cf(m, x, "l2"), cfgen.nn_cf(m, x, ds), cfgen.trex_nn(m, x, ds, cfg)):
            if rec.verdict == cfgen.FOUND:
                assert rec.m_cf >= 0.5 and rec.cost >= 0


def test_records_csv_round_trip(tmp_path, small_moons):
    m, ds, neg = small_moons
    queries = ds.features
    recs = [cfgen.min_cost_cf(m, queries[i], "l2", row_id=int(i)) for i in neg[:4]]
    recs.append(cfgen.trex_nn(m, queries[neg[0]], ds, cfgen.TrexConfig(tau=1.0, K=3), row_id=int(neg[0])))
    path = tmp_path / "cf.csv"
    cfgen.write_records_csv(path, recs, ds.column_names)
    header = path.read_text().splitlines()[0]
    assert header == "row_id,generator,norm,cost,m_cf,stability,verdict,steps,x0,x1"
    back = cfgen.read_records_csv(path, queries)
    for a, b in zip(recs, back):
        assert (a.row_id, a.verdict, a.steps, a.generator, a.norm) == (b.row_id, b.verdict, b.steps, b.generator, b.norm)
        if a.x_cf is None:
            assert b.x_cf is None
        else:
            np.testing.assert_array_equal(a.x_cf, b.x_cf)
            assert a.cost == b.cost
        np.testing.assert_array_equal(a.x, b.x)
