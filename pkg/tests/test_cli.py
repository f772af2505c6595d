import csv
import hashlib
import json
import logging
import os

import pytest

from flowseq.cli import main
from flowseq.flows import write_packet_csv, write_pcap
from flowseq.model import load_checkpoint

from helpers import tcp_session


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """synth -> extract -> sequence -> augment, shared by the slower tests."""
    d = tmp_path_factory.mktemp("chain")
    p = {k: str(d / v) for k, v in dict(
        packets="pk.csv", rules="rules.yaml", flows="flows.csv", train="train.seq",
        test="test.seq", aug="aug.seq", augbase="augbase.csv").items()}
    assert main(["synth", "--preset", "small", "--out", p["packets"], "--rules-out", p["rules"]]) == 0
    assert main(["extract", p["packets"], "--rules", p["rules"], "--out", p["flows"]]) == 0
    assert main(["sequence", p["flows"], "--split", "train", "--out", p["train"]]) == 0
    assert main(["sequence", p["flows"], "--split", "test", "--out", p["test"]]) == 0
    assert main(["augment", p["train"], "--seed", "3", "--out", p["aug"],
                 "--augbase-out", p["augbase"]]) == 0
    return d, p


def three_flow_packets():
    pk = []
    for i in range(3):
        pk += tcp_session(1_000_000 * (i + 1), "10.0.0.1", "10.0.0.2", 40000 + i, 80)
    return sorted(pk, key=lambda p: p.timestamp_us)


@pytest.mark.parametrize("fmt", ["csv", "pcap"])
def test_extract_three_flows(tmp_path, fmt):
    src = tmp_path / f"in.{fmt}"
    (write_pcap if fmt == "pcap" else write_packet_csv)(three_flow_packets(), src)
    out = tmp_path / "flows.csv"
    assert main(["extract", str(src), "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 4 and len(rows[0]) == len(rows[1])
    assert {r[rows[0].index("label")] for r in rows[1:]} == {"benign"}


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert main(["extract", str(tmp_path / "nope.pcap"), "--out", str(tmp_path / "x.csv")]) == 2
    assert "input not found" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path / "m.npz")]) == 2
    assert "--input" in capsys.readouterr().err
    assert main(["evade", str(tmp_path / "a.csv"), "--rules", "r", "--out", "o"]) == 2


def test_config_and_flag_override(tmp_path, caplog):
    pk = tmp_path / "in.csv"
    write_packet_csv(three_flow_packets(), pk)
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(f"version: 1\nextract:\n  input: $FLOWSEQ_TEST_DIR/in.csv\n"
                   f"  out: {tmp_path}/from_config.csv\n  flow-timeout: 10\n")
    os.environ["FLOWSEQ_TEST_DIR"] = str(tmp_path)
    try:
        with caplog.at_level(logging.INFO, logger="flowseq"):
            rc = main(["--config", str(cfg), "extract", "--out", str(tmp_path / "flag.csv")])
    finally:
        del os.environ["FLOWSEQ_TEST_DIR"]
    assert rc == 0
    assert (tmp_path / "flag.csv").exists() and not (tmp_path / "from_config.csv").exists()
    assert "overrides config value" in caplog.text


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("version: 1\nextract:\n  bogus: 1\n")
    assert main(["--config", str(bad), "extract", "x", "--out", "y"]) == 2
    bad.write_text("version: 7\n")
    assert main(["--config", str(bad), "extract", "x", "--out", "y"]) == 2


def test_train_is_deterministic(chain):
    d, p = chain
    digests = []
    for k in range(2):
        out = str(d / f"det{k}.npz")
        assert main(["train", p["train"], "--epochs", "1", "--seed", "4", "--out", out]) == 0
        digests.append(load_checkpoint(out).model.parameter_hash())
    assert digests[0] == digests[1]


def test_sequence_and_augment_idempotent(chain, tmp_path):
    d, p = chain
    again = tmp_path / "aug2.seq"
    assert main(["augment", p["train"], "--seed", "3", "--out", str(again)]) == 0
    digest = lambda f: hashlib.sha256(open(f, "rb").read()).hexdigest()
    assert digest(again) == digest(p["aug"])


def test_full_chain(chain, capsys):
    d, p = chain
    ckpt, rep, xrep = str(d / "m.npz"), str(d / "rep.json"), str(d / "x.json")
    assert main(["train", p["aug"], "--epochs", "2", "--seed", "0", "--out", ckpt]) == 0
    assert main(["evaluate", p["test"], "--checkpoint", ckpt, "--out", rep,
                 "--curves", str(d / "curves")]) == 0
    r = json.loads(open(rep).read())
    assert 0 <= r["f1"] <= 1 and r["macs"] == 99448
    assert (d / "curves.roc.csv").exists() and (d / "curves.ecdf.csv").exists()
    assert main(["cross-eval", p["train"], p["test"], "--checkpoint", ckpt, "--out", xrep]) == 0
    assert len(json.loads(open(xrep).read())["reports"]) == 2
    capsys.readouterr()
    assert main(["report", rep, xrep, "--layout", "f1"]) == 0
    assert "precision" in capsys.readouterr().out


def test_evade_then_pe_report(chain, capsys):
    d, p = chain
    slow = str(d / "slow.csv")
    assert main(["evade", p["packets"], "--rules", p["rules"], "--multiplier", "4", "--out", slow]) == 0
    with open(slow) as a, open(p["packets"]) as b:
        assert sum(1 for _ in a) == sum(1 for _ in b)
    assert main(["evade", p["packets"], "--rules", p["rules"], "--multiplier", "3",
                 "--out", slow]) == 2
    reps = []
    for (i, j), f1 in {(1, 1): 0.9, (1, 4): 0.88, (4, 1): 0.8, (4, 4): 0.82}.items():
        path = d / f"pe{i}{j}.json"
        path.write_text(json.dumps({"name": f"{i}-{j}", "f1": f1, "precision": 1, "recall": 1,
                                    "tags": {"train_multiplier": i, "test_multiplier": j}}))
        reps.append(str(path))
    capsys.readouterr()
    assert main(["report", *reps, "--layout", "pe"]) == 0
    out = capsys.readouterr().out
    assert "-2.22%" in out and "-2.44%" in out


def test_cost_report(capsys):
    assert main(["report", "--layout", "cost"]) == 0
    out = capsys.readouterr().out
    assert "MACs per flow: 99448" in out and "convention" in out
