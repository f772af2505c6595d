import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowseq.evasion import robustness_matrix, slow_down, slow_down_corpus
from flowseq.flows import iter_flows

from helpers import A, PA, pkt

ATK, VIC = "172.16.0.1", "192.168.10.50"


def exchange(times_ms, senders):
    out = []
    for t, who in zip(times_ms, senders):
        src, dst = (ATK, VIC) if who == "a" else (VIC, ATK)
        sp, dp = (40000, 80) if who == "a" else (80, 40000)
        out.append(pkt(int(t * 1000), src, dst, sp, dp, PA, 10 + len(out)))
    return out


def test_identity_at_one():
    pk = exchange([0, 1.5, 7, 9], "avav")
    out = slow_down(pk, ATK, 1)
    assert [p.timestamp_us for p in out] == [p.timestamp_us for p in pk]
    assert out == pk


def test_attacker_only_gaps_scale():
    out = slow_down(exchange([0, 10, 30], "aaa"), ATK, 2)
    assert np.diff([p.timestamp_us for p in out]).tolist() == [20_000, 40_000]


def test_interleaved_hand_walk():
    pk = exchange([0, 5, 15, 18, 40, 41], "avavav")
    out = slow_down(pk, ATK, 4)
    # a@0; v keeps 5 -> 5; a 10*4 -> 45; v keeps 3 -> 48; a 22*4 -> 136; v keeps 1 -> 137
    assert [p.timestamp_us for p in out] == [0, 5_000, 45_000, 48_000, 136_000, 137_000]


def test_only_timestamps_change():
    pk = exchange([0, 2, 3, 11, 12], "avvav")
    out = slow_down(pk, ATK, 8)
    strip = lambda p: (p.src_ip, p.dst_ip, p.src_port, p.payload_len_bytes, p.tcp_flags, p.header_len_bytes)
    assert list(map(strip, out)) == list(map(strip, pk))
    assert all(b.timestamp_us >= a.timestamp_us for a, b in zip(out, out[1:]))


def test_unknown_attacker_fatal():
    with pytest.raises(ValueError):
        slow_down(exchange([0, 1], "av"), "10.9.9.9", 2)


def _timeline(gaps):
    t, pk = 0, []
    for g, is_atk in gaps:
        t += g
        src, dst = (ATK, VIC) if is_atk else (VIC, ATK)
        pk.append(pkt(t, src, dst, 1, 2, A, 0))
    return pk


GAPS = st.lists(st.tuples(st.integers(0, 50_000), st.booleans()), min_size=2, max_size=30)


def _gaps(pk):
    return np.diff([p.timestamp_us for p in pk])


@settings(max_examples=60, deadline=None)
@given(GAPS, st.sampled_from([1, 2, 4, 8]), st.sampled_from([1, 2, 4, 8]))
def test_composition_exact_for_integer_multipliers(gaps, m1, m2):
    pk = _timeline(gaps)
    twice = slow_down(slow_down(pk, ATK, m1), ATK, m2)
    np.testing.assert_array_equal(_gaps(twice), _gaps(slow_down(pk, ATK, m1 * m2)))


@settings(max_examples=60, deadline=None)
@given(GAPS, st.sampled_from([1.5, 0.5, 1.25]), st.sampled_from([2, 1.25, 4]))
def test_composition_fractional_rounding_bound(gaps, m1, m2):
    # the first pass rounds by at most 0.5 us, which the second pass scales by m2
    pk = _timeline(gaps)
    twice = slow_down(slow_down(pk, ATK, m1), ATK, m2)
    once = slow_down(pk, ATK, m1 * m2)
    assert np.abs(_gaps(twice) - _gaps(once)).max() <= 0.5 * m2 + 0.5


def test_corpus_benign_untouched(small_corpus):
    pk = small_corpus.packets
    out, stats = slow_down_corpus(pk, small_corpus.rules, 4)
    assert stats.packets == len(pk) and 0 < stats.altered_flows < stats.flows
    assert all(b.timestamp_us >= a.timestamp_us for a, b in zip(out, out[1:]))
    attackers = {ip for r in small_corpus.rules for ip in r.attacker_ips}
    benign = lambda seq: sorted((p.timestamp_us, p.src_ip, p.src_port, p.dst_port) for p in seq
                                if p.src_ip not in attackers and p.dst_ip not in attackers)
    assert benign(out) == benign(pk)
    # flows are conserved under retiming
    assert sum(1 for _ in iter_flows(out)) == stats.flows


def test_corpus_identity_at_one(small_corpus):
    out, stats = slow_down_corpus(small_corpus.packets, small_corpus.rules, 1)
    assert stats.altered_flows == 0
    assert [p.timestamp_us for p in out] == sorted(p.timestamp_us for p in small_corpus.packets)


def test_robustness_matrix_shape_and_diagonal():
    table = {(1, 1): 0.9, (1, 2): 0.85, (2, 1): 0.8, (2, 2): 0.8}
    res = robustness_matrix([1, 2], lambda m: m, lambda model, m: table[(model, m)])
    assert res.pe[0, 0] == 0 and res.pe[1, 1] == 0
    assert res.pe[0, 1] == pytest.approx((0.85 - 0.9) / 0.9 * 100)
    assert res.f1[1, 0] == 0.8


def test_robustness_failed_cell_is_invalid():
    def train_fn(m):
        if m == 2:
            raise RuntimeError("diverged")
        return m
    res = robustness_matrix([1, 2], train_fn, lambda model, m: 0.5)
    assert np.isnan(res.pe[1]).all() and not np.isnan(res.pe[0]).any()
