import math
from datetime import date, datetime

import numpy as np
import pytest

from chargeopt.domain import month_grid
from chargeopt.forecasting import (
    ElasticNetModel,
    ExternalForecaster,
    ForecastError,
    ForecastVector,
    LinearForecaster,
    NaiveForecaster,
    build_features,
    clip_forecast,
    coordinate_descent,
    feature_names,
    forecast_naive,
    is_workday,
    pooled_rmse,
    positional_encoding,
    train_elastic_net,
    update_forecast,
)

from conftest import make_request, make_state


def oracle_coordinate_descent(X, y, l1, l2, sweeps=4000, tol=1e-10):
    """Independent scalar-loop coordinate descent (soft thresholding)."""
    n, d = len(X), len(X[0])
    w = [0.0] * d
    for _ in range(sweeps):
        moved = 0.0
        for j in range(d):
            zj = sum(X[i][j] * X[i][j] for i in range(n)) / n
            if zj < 1e-12:
                continue
            rho = 0.0
            for i in range(n):
                r_i = y[i] - sum(X[i][k] * w[k] for k in range(d) if k != j)
                rho += X[i][j] * r_i
            rho /= n
            if rho > l1:
                new = (rho - l1) / (zj + l2)
            elif rho < -l1:
                new = (rho + l1) / (zj + l2)
            else:
                new = 0.0
            moved = max(moved, abs(new - w[j]))
            w[j] = new
        if moved < tol:
            break
    return w


# -- features ------------------------------------------------------------------


def test_positional_encoding_midnight():
    enc = positional_encoding(datetime(2024, 1, 1, 0, 0))  # a Monday
    # day, week (Monday midnight), year all at phase zero: sin 0 / cos 1
    assert enc == pytest.approx([0, 1] * 6, abs=1e-9)
    assert np.all(np.abs(enc) <= 1 + 1e-12)


def test_build_features_empty_station(params, grid):
    state = make_state(now=0)
    request = make_request(t_start=0, departure=12, e_sch=4.0, e_reg=6.6)
    feats = build_features(state, np.zeros(0), request, grid.time_at(0), params)
    assert feats.history_padded
    assert feats.recent_loads == pytest.approx(np.zeros(96))
    # planned profile is the arrival's full-power block (6.6 kWh -> 4 steps)
    assert feats.planned_profile[:4] == pytest.approx(np.full(4, 6.6))
    assert feats.planned_profile[4:] == pytest.approx(np.zeros(28))
    assert feats.n_active == 1
    assert feats.n_chargers == 8


def test_build_features_counts_arrival(params, grid):
    state = make_state(now=10, sched=[("s0", 30, 5.0, 0.0, 0.4, [1.5] * 20)])
    request = make_request(t_start=10, departure=20, e_sch=2.0, e_reg=2.0)
    feats = build_features(state, np.arange(10, dtype=float), request,
                           grid.time_at(10), params)
    assert feats.n_active == 2  # one existing plus the arrival
    assert feats.recent_loads[-10:] == pytest.approx(np.arange(10.0))
    assert feats.planned_profile[0] == pytest.approx(1.5 + 6.6)
    names = feature_names(96, 32)
    assert len(names) == feats.to_array().size


def test_workday_calendar():
    assert is_workday(date(2023, 6, 5))       # Monday
    assert not is_workday(date(2023, 6, 3))   # Saturday
    assert not is_workday(date(2023, 6, 5), frozenset({date(2023, 6, 5)}))


# -- naive forecaster and clipping ----------------------------------------------


def test_naive_forecast_is_planned_profile(params, grid):
    state = make_state(now=0)
    request = make_request(t_start=0, departure=8, e_sch=2.0, e_reg=6.6)
    feats = build_features(state, np.zeros(0), request, grid.time_at(0), params)
    psi = forecast_naive(feats)
    assert psi.load_kw == pytest.approx(feats.planned_profile)
    assert psi.provenance == "naive"
    clipped = clip_forecast(psi, feats.planned_profile)
    assert clipped.load_kw == pytest.approx(psi.load_kw)
    assert not clipped.clipped.any()  # clipping is a no-op for the naive forecast


def test_clip_forecast_examples():
    psi = ForecastVector(np.array([1.0, 1.0]), "x")
    out = clip_forecast(psi, np.array([6.6, 0.0]))
    assert out.load_kw == pytest.approx([6.6, 1.0])
    assert list(out.clipped) == [True, False]

    high = ForecastVector(np.array([50.0, 50.0]), "x")
    assert clip_forecast(high, np.array([6.6, 0.0])).load_kw == pytest.approx([50, 50])

    neg = ForecastVector(np.array([-3.0]), "x")
    assert clip_forecast(neg, np.array([0.0])).load_kw == pytest.approx([0.0])


def test_clip_forecast_idempotent():
    rng = np.random.default_rng(0)
    psi = ForecastVector(rng.normal(5, 4, 32), "x")
    floor = rng.uniform(0, 8, 32)
    once = clip_forecast(psi, floor)
    twice = clip_forecast(once, floor)
    assert twice.load_kw == pytest.approx(once.load_kw)


def test_update_forecast_scenarios():
    psi = np.full(4, 10.0)
    committed = np.full(4, 2.0)
    cand_reg = np.array([6.6, 6.6, 0, 0])
    reg = update_forecast(psi, committed, cand_reg, "regular")
    sch = update_forecast(psi, committed, cand_reg, "scheduled")
    assert reg == pytest.approx([8, 8, 8, 8])
    assert sch == pytest.approx([1.4, 1.4, 8, 8])
    with pytest.raises(ForecastError):
        update_forecast(psi, committed[:2], cand_reg, "regular")
    with pytest.raises(ForecastError):
        update_forecast(psi, committed, cand_reg, "other")


# -- elastic net -------------------------------------------------------------------


def test_ols_on_noiseless_line():
    x = np.linspace(-2, 2, 20)
    X = x[:, None]
    y = 2.0 * x
    model = train_elastic_net(X, y, 0.0, 0.0, feature_names=["x"])
    # weights live in standardized space; the slope maps back through scale
    slope = model.weights[0, 0] / model.scale[0]
    assert slope == pytest.approx(2.0, abs=1e-9)
    assert model.intercepts[0] == pytest.approx(0.0, abs=1e-12)
    assert model.predict(np.array([1.3]))[0] == pytest.approx(2.6, abs=1e-8)


def test_large_l1_kills_weights():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30) + 5.0
    model = train_elastic_net(X, y, 1e3, 0.0)
    assert model.weights == pytest.approx(np.zeros((1, 3)))
    assert model.predict(rng.normal(size=3))[0] == pytest.approx(y.mean())


def test_coordinate_descent_matches_scalar_oracle():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(10, 2))
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    y = 1.5 * X[:, 0] - 0.4 * X[:, 1] + rng.normal(scale=0.2, size=10)
    y = y - y.mean()
    for l1, l2 in [(0.0, 0.0), (0.1, 0.1), (0.5, 0.05)]:
        w, _ = coordinate_descent(X, y, l1, l2, tol=1e-12, max_sweeps=5000)
        w_oracle = oracle_coordinate_descent(X.tolist(), y.tolist(), l1, l2)
        assert w == pytest.approx(w_oracle, abs=1e-6)


def test_objective_decreases_each_sweep():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(40, 6))
    y = X @ rng.normal(size=6) + rng.normal(scale=0.5, size=40)
    _, history = coordinate_descent((X - X.mean(0)) / X.std(0), y - y.mean(), 0.2, 0.1)
    diffs = np.diff(history)
    assert np.all(diffs <= 1e-12)


def test_constant_columns_dropped_with_warning(caplog):
    import logging
    X = np.column_stack([np.ones(15), np.linspace(0, 1, 15)])
    y = 3 * X[:, 1]
    with caplog.at_level(logging.WARNING, logger="chargeopt.forecasting"):
        model = train_elastic_net(X, y, 0.0, 0.0, feature_names=["const", "x"])
    assert "constant" in caplog.text
    assert model.weights[0, 0] == 0.0
    assert model.predict(np.array([1.0, 0.5]))[0] == pytest.approx(1.5, abs=1e-8)


def test_standardization_round_trip():
    # full-rank noiseless data with no penalty reproduces targets
    rng = np.random.default_rng(12)
    X = rng.normal(size=(50, 4)) * np.array([1, 10, 0.1, 3]) + np.array([0, 5, -2, 1])
    w_true = np.array([1.0, -0.5, 4.0, 0.3])
    Y = np.column_stack([X @ w_true + 2.0, X @ (2 * w_true) - 1.0])
    model = train_elastic_net(X, Y, 0.0, 0.0)
    for i in range(50):
        assert model.predict(X[i]) == pytest.approx(Y[i], abs=1e-6)


def test_model_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 3))
    Y = rng.normal(size=(20, 2))
    model = train_elastic_net(X, Y, 0.1, 0.1, feature_names=["a", "b", "c"])
    path = tmp_path / "model.json"
    model.save(path)
    loaded = ElasticNetModel.load(path)
    x = rng.normal(size=3)
    assert loaded.predict(x) == pytest.approx(model.predict(x))
    assert loaded.day_kind == model.day_kind
    with pytest.raises(ForecastError):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        ElasticNetModel.load(bad)


def test_linear_forecaster_selects_by_calendar(params, grid):
    names = ["a"]
    mk = lambda kind, val: ElasticNetModel(
        feature_names=names, mean=np.zeros(1), scale=np.ones(1),
        weights=np.zeros((2, 1)), intercepts=np.full(2, val),
        lambda1=0.1, lambda2=0.1, day_kind=kind)
    fc = LinearForecaster(mk("workday", 5.0), mk("offday", 1.0))
    feats = build_features(make_state(now=0), np.zeros(0),
                           make_request(t_start=0, departure=4, e_sch=0.0, e_reg=0.0),
                           grid.time_at(0), params)
    feats.recent_loads = np.zeros(0)  # models above take one feature
    monday = datetime(2023, 6, 5, 9)
    saturday = datetime(2023, 6, 3, 9)

    class OneFeature:
        def to_array(self):
            return np.zeros(1)

    assert fc.forecast(OneFeature(), monday).load_kw == pytest.approx([5, 5])
    assert fc.forecast(OneFeature(), saturday).load_kw == pytest.approx([1, 1])


def test_external_forecaster_contract(tmp_path, params, grid):
    stub = tmp_path / "stub.py"
    stub.write_text(
        "import sys, csv\n"
        "feat, out = sys.argv[1], sys.argv[2]\n"
        "rows = list(csv.reader(open(feat)))\n"
        "names, values = rows[0], [float(v) for v in rows[1]]\n"
        "k = names.index('planned_000')\n"
        "pred = [v + 1.0 for v in values[k:k + 32]]\n"
        "w = csv.writer(open(out, 'w', newline=''))\n"
        "w.writerow([repr(p) for p in pred])\n"
    )
    fc = ExternalForecaster(f"python3 {stub}", tmp_path / "xchg")
    state = make_state(now=0)
    request = make_request(t_start=0, departure=8, e_sch=2.0, e_reg=6.6)
    feats = build_features(state, np.zeros(0), request, grid.time_at(0), params)
    psi = fc.forecast(feats, grid.time_at(0))
    assert psi.load_kw == pytest.approx(feats.planned_profile + 1.0)
    assert psi.provenance == "external"

    bad = ExternalForecaster("python3 -c 'import sys; sys.exit(3)'", tmp_path / "xchg2")
    with pytest.raises(ForecastError):
        bad.forecast(feats, grid.time_at(0))


def test_pooled_rmse():
    pairs = [(np.array([1.0, 2.0]), np.array([0.0, 0.0])),
             (np.array([2.0]), np.array([0.0]))]
    assert pooled_rmse(pairs) == pytest.approx(math.sqrt((1 + 4 + 4) / 3))
    assert math.isnan(pooled_rmse([]))
