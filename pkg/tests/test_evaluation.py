import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowseq.evaluation import (MAC_CONVENTION, build_report, compute_metrics, confusion, count_macs,
                                ecdf_by_type, ecdf_threshold, lstm_layer_macs, per_class_recall,
                                percentage_error_f1, render_comparison_table, render_pe_table,
                                roc_curve)
from flowseq.model import BiALSTM, ModelConfig


def brute_counts(pred, truth):
    tp = fp = fn = tn = 0
    for p, t in zip(pred, truth):
        p, t = p != 0, t != 0
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def mann_whitney_auc(scores, truths):
    pos = [s for s, t in zip(scores, truths) if t]
    neg = [s for s, t in zip(scores, truths) if not t]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def test_metrics_direct_formula():
    pred = [1] * 10 + [0] * 5
    truth = [1] * 8 + [0] * 2 + [0] * 5
    m = compute_metrics(pred, truth)
    assert (m.tp, m.fp, m.fn) == (8, 2, 0)
    assert m.precision == 0.8 and m.recall == 1.0
    assert m.f1 == pytest.approx(8 / 9, rel=1e-15)


def test_all_benign_predictions():
    m = compute_metrics([0] * 6, [0, 1, 2, 3, 4, 0])
    assert m.recall == 0 and m.f1 == 0 and m.flags


def test_metrics_match_counting_oracle():
    rng = np.random.default_rng(0)
    pred, truth = rng.integers(0, 5, 10_000), rng.integers(0, 5, 10_000)
    m = compute_metrics(pred, truth)
    tp, fp, fn, tn = brute_counts(pred.tolist(), truth.tolist())
    assert (m.tp, m.fp, m.fn, m.tn) == (tp, fp, fn, tn)
    assert m.precision == tp / (tp + fp) and m.recall == tp / (tp + fn)


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        compute_metrics([0, 1], [0])


def test_confusion_and_recall():
    truth = [0, 0, 1, 1, 1, 3]
    pred = [0, 1, 1, 1, 0, 3]
    cm = confusion(truth, pred)
    assert cm[0].tolist() == [1, 1, 0, 0, 0] and cm[1].tolist() == [1, 2, 0, 0, 0]
    norm = confusion(truth, pred, normalize=True)
    for k, row in enumerate(norm):
        assert row.sum() == pytest.approx(1.0, abs=1e-9) or cm[k].sum() == 0
    assert per_class_recall(truth, pred) == [0.5, 2 / 3, None, 1.0, None]


def test_auc_perfect_and_reversed():
    truth = np.array([0] * 50 + [1] * 50)
    scores = np.linspace(0, 1, 100)
    roc = roc_curve(scores, truth)
    assert roc.auc == 1.0
    assert roc_curve(1 - scores, truth).auc == 0.0


def test_auc_random_scores():
    rng = np.random.default_rng(1)
    n = 20_000
    roc = roc_curve(rng.random(n), rng.integers(0, 2, n))
    assert abs(roc.auc - 0.5) <= 3 / np.sqrt(n)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_against_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 60
    truth = rng.integers(0, 2, n)
    truth[:2] = [0, 1]
    scores = np.round(rng.random(n), 1)       # coarse grid so ties occur
    roc = roc_curve(scores, truth)
    assert roc.auc == pytest.approx(mann_whitney_auc(scores, truth), abs=1e-12)
    assert roc_curve(1 - scores, truth).auc == pytest.approx(1 - roc.auc, abs=1e-12)
    assert (np.diff(roc.fpr) >= 0).all() and (np.diff(roc.tpr) >= 0).all()
    assert roc.fpr[-1] == 1.0 and roc.tpr[-1] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 2, 80)
    truth[:2] = [0, 1]
    scores = rng.random(80)
    base = roc_curve(scores, truth).auc
    assert roc_curve(scores ** 3, truth).auc == pytest.approx(base, abs=1e-12)
    assert roc_curve(np.log1p(scores) / 2, truth).auc == pytest.approx(base, abs=1e-12)


def test_single_class_auc_flagged():
    roc = roc_curve([0.1, 0.5], [0, 0])
    assert roc.auc is None and roc.flags


def test_ecdf_threshold_uniform():
    rng = np.random.default_rng(2)
    n = 100_000
    thr, achieved, flags = ecdf_threshold(rng.random(n), 0.015)
    assert thr == pytest.approx(0.985, abs=3e-3)
    assert achieved <= 0.015 and achieved >= 0.015 - 1 / n and not flags


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 400), st.floats(0.0, 0.5), st.integers(0, 10_000))
def test_ecdf_fpr_bound(n, target, seed):
    b = np.random.default_rng(seed).random(n)
    thr, achieved, _ = ecdf_threshold(b, target)
    assert achieved == np.count_nonzero(b >= thr) / n
    assert achieved <= target + 1e-12
    assert achieved > target - 1 / n - 1e-12


def test_ecdf_ties_flagged():
    thr, achieved, flags = ecdf_threshold([0.5] * 100, 0.1)
    assert achieved == 0.0 and flags


def test_ecdf_attacks_at_one():
    scores = [0.1, 0.2, 0.3, 1.0, 1.0]
    labels = ["benign"] * 3 + ["dos_hulk"] * 2
    res = ecdf_by_type(scores, labels, 0.0)
    assert res.threshold < 1.0 and res.fnr_by_type == {"dos_hulk": 0.0}


def test_ecdf_fnr_matches_counting():
    rng = np.random.default_rng(4)
    labels = rng.choice(["benign", "portscan", "bot", "dos_hulk"], 3000)
    shift = {"benign": 0.0, "portscan": 0.5, "bot": 0.2, "dos_hulk": 0.8}
    scores = np.clip(rng.normal(0.2, 0.15, 3000) + [shift[l] for l in labels], 0, 1)
    res = ecdf_by_type(scores, labels.tolist(), 0.015)
    for typ in ("portscan", "bot", "dos_hulk"):
        sel = [s for s, l in zip(scores, labels) if l == typ]
        assert res.fnr_by_type[typ] == sum(1 for s in sel if s < res.threshold) / len(sel)
    v, c = res.tables["bot"]
    assert (np.diff(v) >= 0).all() and c[-1] == 1.0


def test_ecdf_needs_benign():
    with pytest.raises(ValueError):
        ecdf_by_type([0.5], ["bot"])


def test_pe_examples():
    assert percentage_error_f1(0.9430, 0.9485) == pytest.approx(-0.58, abs=5e-3)
    assert percentage_error_f1(0.7, 0.7) == 0
    assert percentage_error_f1(0.55, 0.5) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        percentage_error_f1(0.5, 0.0)


def test_lstm_mac_formula():
    assert lstm_layer_macs(1, 1) == 8
    cfg = ModelConfig(n_features=1, lstm_hidden=(1,), conv_channels=(1,), fusion_dim=1)
    assert count_macs(cfg).breakdown["lstm0"] == 8


@pytest.mark.parametrize("d,h", [(65, 48), (10, 3), (7, 100)])
def test_lstm_macs_per_unit_scale_with_width(d, h):
    # per hidden unit the cost is 4(d + h), so doubling h scales it by (d + 2h)/(d + h)
    ratio = (lstm_layer_macs(d, 2 * h) / (2 * h)) / (lstm_layer_macs(d, h) / h)
    assert ratio == pytest.approx((d + 2 * h) / (d + h), rel=1e-15)


def test_cost_breakdown_matches_model():
    rep = count_macs(ModelConfig())
    assert rep.macs == sum(rep.breakdown.values()) == 99448
    n_params = sum(p.data.size for p in BiALSTM(ModelConfig()).parameters())
    assert rep.parameters == n_params == 49185
    assert rep.breakdown["lstm0"] == 4 * 48 * (65 + 48)
    assert rep.breakdown["conv0"] == 4 * 3 * 65 * 3 * (1 + 3)
    assert rep.breakdown["fusion"] == 32 * (192 + 48) and rep.breakdown["head"] == 160
    text = rep.render()
    assert "99448" in text and MAC_CONVENTION in text


def test_build_report_invariants(tmp_path):
    rng = np.random.default_rng(5)
    n = 400
    truth = rng.integers(0, 5, n)
    scores = np.clip((truth != 0) * 0.6 + rng.random(n) * 0.5, 0, 1)
    pred = np.where(scores >= 0.5, np.maximum(truth, 1), 0)
    labels = ["benign" if t == 0 else "portscan" for t in truth]
    rep = build_report("x", truth, pred, scores, labels, 0.5)
    for v in (rep.precision, rep.recall, rep.f1):
        assert 0 <= v <= 1
    for row in rep.confusion_normalized:
        assert abs(sum(row) - 1) < 1e-9
    assert rep.macs == 99448 and "MAC convention" in rep.to_text()
    paths = rep.write_curves(tmp_path / "c")
    assert len(paths) == 2
    with open(paths[0]) as fh:
        assert fh.readline().strip() == "threshold,fpr,tpr"
    assert rep.to_dict()["n_flows"] == n


def test_tables_render():
    t = render_comparison_table({"a": {"precision": 0.5, "recall": 1.0, "f1": 2 / 3}})
    assert "0.6667" in t.splitlines()[1]
    pe = np.array([[0.0, -1.234], [np.nan, 0.0]])
    out = render_pe_table([1, 2], pe).splitlines()
    assert "-1.23%" in out[1] and "invalid" in out[2]
