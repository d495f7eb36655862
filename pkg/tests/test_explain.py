import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from appscreen.cohort import STRONG_EFFECTS, SynthConfig, synth_generate
from appscreen.errors import EmptyReport, InconsistentContract, TooManyFeatures
from appscreen.explain import (ShapExplanation, export_force, export_summary, exact_shapley, force_svg,
                               summary_json, summary_svg)
from appscreen.features import apply_scaler, fit_scaler
from appscreen.learn.models import fit
from appscreen.select import stability_select

from conftest import featurize


def permutation_shapley(f, x, background):
    """Average marginal contribution over all d! feature orderings."""
    d = len(x)

    def value(coalition):
        rows = background.copy()
        rows[:, list(coalition)] = x[list(coalition)]
        return float(np.mean(f(rows)))

    phi = np.zeros(d)
    orders = list(itertools.permutations(range(d)))
    for order in orders:
        taken = []
        for j in order:
            before = value(taken)
            taken.append(j)
            phi[j] += value(taken) - before
    return phi / len(orders)


def tree_model(seed=0, d=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, d))
    y = ((X[:, 0] + X[:, 1] * X[:, 2]) > 0).astype(int)
    return fit("cart", X, y, {"max_depth": 3}, seed=seed), X


def test_matches_permutation_oracle_on_tree():
    model, X = tree_model()
    background = X[:16]
    for x in X[40:44]:
        got = exact_shapley(model, x, background)
        ref = permutation_shapley(model.predict_array, x, background)
        np.testing.assert_allclose(got.phi, ref, atol=1e-9)


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 8))
def test_local_accuracy(seed, d, b):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    f = lambda Z: np.tanh(Z @ w) * np.cos(Z[:, 0])
    x, background = rng.normal(size=d), rng.normal(size=(b, d))
    e = exact_shapley(f, x, background)
    assert e.base_value == pytest.approx(np.mean(f(background)), abs=1e-12)
    assert e.prediction == pytest.approx(f(x[None])[0], abs=1e-12)
    assert e.local_gap <= 1e-9


def test_symmetry_and_dummy_feature():
    f = lambda Z: Z[:, 0] * Z[:, 1]
    x = np.array([2.0, 2.0, 7.0])
    background = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 3.0]])
    e = exact_shapley(f, x, background)
    assert e.phi[0] == pytest.approx(e.phi[1], abs=1e-12)
    assert e.phi[2] == 0.0


def test_linearity_in_the_model():
    rng = np.random.default_rng(1)
    x, background = rng.normal(size=4), rng.normal(size=(6, 4))
    f = lambda Z: np.sin(Z[:, 0] * Z[:, 1])
    g = lambda Z: Z[:, 2] ** 2 - Z[:, 3]
    mix = lambda Z: 0.3 * f(Z) + 0.7 * g(Z)
    phi_f = exact_shapley(f, x, background).phi
    phi_g = exact_shapley(g, x, background).phi
    np.testing.assert_allclose(exact_shapley(mix, x, background).phi, 0.3 * phi_f + 0.7 * phi_g, atol=1e-12)


def test_linear_model_closed_form():
    f = lambda Z: 2 * Z[:, 0]
    e = exact_shapley(f, np.array([3.0, 5.0]), np.array([[1.0, 0.0], [0.0, 0.0]]))
    np.testing.assert_allclose(e.phi, [2 * (3 - 0.5), 0.0], atol=1e-12)
    assert e.base_value == pytest.approx(1.0)


def test_constant_model_has_zero_attributions():
    e = exact_shapley(lambda Z: np.full(len(Z), 0.7), np.ones(4), np.zeros((3, 4)))
    assert np.all(e.phi == 0) and e.base_value == pytest.approx(0.7)


def test_feature_cap():
    with pytest.raises(TooManyFeatures):
        exact_shapley(lambda Z: Z[:, 0], np.zeros(21), np.zeros((1, 21)))
    e = exact_shapley(lambda Z: Z.sum(1), np.ones(12), np.zeros((2, 12)), d_max=12)
    np.testing.assert_allclose(e.phi, np.ones(12), atol=1e-12)


def test_trained_model_names_and_round_trip():
    model, X = tree_model(seed=2)
    e = exact_shapley(model, X[0], X[:8], participant_id="P001")
    assert e.feature_names == model.feature_names
    back = ShapExplanation.from_json(json.loads(json.dumps(e.to_json())))
    np.testing.assert_array_equal(back.phi, e.phi)
    assert back.participant_id == "P001"


# ---------------------------------------------------------------- exports

def explanations():
    f = lambda Z: Z[:, 0] - 0.5 * Z[:, 1]
    rng = np.random.default_rng(3)
    background = rng.normal(size=(5, 3))
    return [exact_shapley(f, rng.normal(size=3), background, participant_id=f"P{i}", feature_names=["a", "b", "c"])
            for i in range(6)]


def test_summary_ranks_by_mean_absolute_phi():
    es = explanations()
    summary = export_summary(es)
    for s in summary:
        j = "abc".index(s.name)
        assert s.importance == pytest.approx(np.mean([abs(e.phi[j]) for e in es]))
        assert len(s.points) == 6
    importances = [s.importance for s in summary]
    assert importances == sorted(importances, reverse=True)
    assert summary[-1].name == "c" and summary[-1].importance == 0
    assert json.loads(summary_json(summary))[0]["feature"] == summary[0].name


def test_summary_contract_checks():
    es = explanations()
    other = exact_shapley(lambda Z: Z[:, 0], np.ones(2), np.zeros((1, 2)), participant_id="Q", feature_names=["a", "z"])
    with pytest.raises(InconsistentContract):
        export_summary(es + [other])
    merged = export_summary(es + [other], align=True)
    assert {s.name for s in merged} == {"a", "b", "c", "z"}
    z = next(s for s in merged if s.name == "z")
    assert z.importance == 0 and len(z.points) == 1
    with pytest.raises(EmptyReport):
        export_summary([])


def test_force_export_orders_and_sums():
    e = explanations()[0]
    force = export_force(e)
    phis = [c["phi"] for c in force["contributions"]]
    assert [abs(p) for p in phis] == sorted((abs(p) for p in phis), reverse=True)
    assert force["base_value"] + sum(phis) == pytest.approx(force["prediction"], abs=1e-9)
    assert all(c["feature"] != "c" for c in export_force(e, tol=1e-12)["contributions"])


def test_svg_exports_are_well_formed():
    es = explanations()
    for svg in (summary_svg(export_summary(es)), force_svg(export_force(es[0]))):
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "&lt;" in force_svg({"base_value": 0.5, "prediction": 0.6,
                                "contributions": [{"feature": "<x>", "value": 1.0, "phi": 0.1}]})


def test_shapley_weights_sum_to_one():
    for d in range(1, 8):
        total = sum(math.comb(d - 1, s) * math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
                    for s in range(d))
        assert total == pytest.approx(1.0)


def test_planted_families_rank_top_3_for_whole_cohort_gbt():
    good = 0
    for seed in range(20):
        cohort = synth_generate(SynthConfig(n=100, seed=seed))
        m = featurize(cohort).matrix(cohort.classes)
        z = apply_scaler(m, fit_scaler(m, m.participant_ids))
        y = np.array([cohort.classes[p] for p in z.participant_ids])
        names = stability_select(z.values, y, z.feature_names, threshold=0.6, seed=seed).selected
        X = z.columns(names).values
        model = fit("gbt", X, y, feature_names=names, seed=seed)
        summary = export_summary([exact_shapley(model, x, X[:32], participant_id=p)
                                  for x, p in zip(X, z.participant_ids)])
        top = [s.name for s in summary[:3] if s.importance > 0]
        good += all(any(n.startswith(e.family) for n in top) for e in STRONG_EFFECTS)
    assert good >= 18
