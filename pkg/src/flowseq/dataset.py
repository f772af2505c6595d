"""Ground truth, abstract labels, normalization and time-ordered splits."""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np
import yaml

from .flows.features import N_MODEL_FEATURES, FeatureVector, to_model_row
from .sequences import FlowSequence


class AbstractLabel(IntEnum):
    BENIGN = 0
    DOS = 1
    PORTSCAN = 2
    BRUTEFORCE_FUZZ = 3
    OTHER_MALICIOUS = 4


N_CLASSES = len(AbstractLabel)

ABSTRACT_LABELS: dict[str, AbstractLabel] = {
    "benign": AbstractLabel.BENIGN,
    # volumetric / exhaustion
    "dos_http": AbstractLabel.DOS,
    "dos_hulk": AbstractLabel.DOS,
    "dos_goldeneye": AbstractLabel.DOS,
    "dos_loic_http": AbstractLabel.DOS,
    "ddos_loic_http": AbstractLabel.DOS,
    "ddos_loic_udp": AbstractLabel.DOS,
    "ddos_hoic": AbstractLabel.DOS,
    "dos_slowloris": AbstractLabel.DOS,
    "dos_slowhttptest": AbstractLabel.DOS,
    # reconnaissance
    "portscan": AbstractLabel.PORTSCAN,
    # credential guessing and input fuzzing
    "ftp_bruteforce": AbstractLabel.BRUTEFORCE_FUZZ,
    "ssh_bruteforce": AbstractLabel.BRUTEFORCE_FUZZ,
    "web_bruteforce": AbstractLabel.BRUTEFORCE_FUZZ,
    "web_xss": AbstractLabel.BRUTEFORCE_FUZZ,
    "sql_injection": AbstractLabel.BRUTEFORCE_FUZZ,
    "fuzzing": AbstractLabel.BRUTEFORCE_FUZZ,
    # everything else that is malicious
    "bot": AbstractLabel.OTHER_MALICIOUS,
    "infiltration": AbstractLabel.OTHER_MALICIOUS,
    "heartbleed": AbstractLabel.OTHER_MALICIOUS,
}


def abstractify(label: str | AbstractLabel) -> AbstractLabel:
    if isinstance(label, AbstractLabel):
        return label
    try:
        return ABSTRACT_LABELS[label]
    except KeyError:
        raise KeyError(f"no abstract label mapping for {label!r}") from None


# ---------------------------------------------------------------------------
# ground truth

@dataclass(frozen=True)
class LabelRule:
    attacker_ips: frozenset[str]
    victim_ips: frozenset[str]
    start_us: int
    end_us: int          # exclusive
    attack_name: str

    def __post_init__(self):
        if not self.start_us < self.end_us:
            raise ValueError(f"rule {self.attack_name}: start must precede end")

    def matches(self, src_ip: str, dst_ip: str, ts_us: int) -> bool:
        if not self.start_us <= ts_us < self.end_us:
            return False
        return ((src_ip in self.attacker_ips and dst_ip in self.victim_ips)
                or (dst_ip in self.attacker_ips and src_ip in self.victim_ips))

    def to_dict(self) -> dict:
        return {"attack_name": self.attack_name, "attacker_ips": sorted(self.attacker_ips),
                "victim_ips": sorted(self.victim_ips), "start_us": self.start_us,
                "end_us": self.end_us}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelRule":
        return cls(frozenset(d["attacker_ips"]), frozenset(d["victim_ips"]),
                   int(d["start_us"]), int(d["end_us"]), str(d["attack_name"]))


class RuleConflict(ValueError):
    pass


def find_rule(rules: Sequence[LabelRule], src_ip: str, dst_ip: str, ts_us: int) -> LabelRule | None:
    hits = [r for r in rules if r.matches(src_ip, dst_ip, ts_us)]
    if len({r.attack_name for r in hits}) > 1:
        raise RuleConflict(f"flow {src_ip}->{dst_ip}@{ts_us} matches conflicting rules "
                           f"{sorted(r.attack_name for r in hits)}")
    return hits[0] if hits else None


def assign_labels(flows: Iterable[FeatureVector], rules: Sequence[LabelRule]) -> list[FeatureVector]:
    out = []
    for fv in flows:
        rule = find_rule(rules, fv.src_ip, fv.dst_ip, fv.timestamp_us)
        fv.label = rule.attack_name if rule else "benign"
        out.append(fv)
    return out


RULES_FORMAT_VERSION = 1


def write_rules(rules: Iterable[LabelRule], path: str | os.PathLike) -> None:
    doc = {"version": RULES_FORMAT_VERSION, "rules": [r.to_dict() for r in rules]}
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def read_rules(path: str | os.PathLike) -> list[LabelRule]:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if doc.get("version") != RULES_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported rules version {doc.get('version')}")
    return [LabelRule.from_dict(d) for d in doc.get("rules", [])]


# ---------------------------------------------------------------------------
# normalization

@dataclass
class NormalizationSpec:
    minimum: np.ndarray
    maximum: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        y = (np.asarray(x, dtype=np.float64) - self.minimum) / safe
        y = np.where(span > 0, y, 0.0)
        return np.clip(y, 0.0, 1.0)

    def invert(self, y: np.ndarray) -> np.ndarray:
        return self.minimum + np.asarray(y) * (self.maximum - self.minimum)

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "maximum": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(np.array(d["minimum"], dtype=np.float64), np.array(d["maximum"], dtype=np.float64))


def fit_normalizer(rows: np.ndarray) -> NormalizationSpec:
    """Per-column min/max over training rows (n, 65)."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need a non-empty 2-D array of training rows")
    return NormalizationSpec(rows.min(axis=0), rows.max(axis=0))


def apply_normalizer(spec: NormalizationSpec, rows: np.ndarray) -> np.ndarray:
    return spec.apply(rows)


# ---------------------------------------------------------------------------
# splitting

def time_split(flows: Sequence[FeatureVector], ratio: float = 0.7) -> tuple[list[FeatureVector], list[FeatureVector]]:
    """Split so every training flow starts no later than every test flow."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    ordered = sorted(flows, key=lambda f: f.timestamp_us)
    n = len(ordered)
    if n < 2:
        raise ValueError("need at least two flows to split")
    k = min(max(int(round(ratio * n)), 1), n - 1)
    cut = ordered[k - 1].timestamp_us
    train = [f for f in ordered if f.timestamp_us <= cut]
    if len(train) == n:
        train = [f for f in ordered if f.timestamp_us < cut]
    if not train or len(train) == n:
        raise ValueError("cannot split: timestamps do not separate the flows")
    return train, ordered[len(train):]


# ---------------------------------------------------------------------------
# model arrays

@dataclass
class SequenceArrays:
    x: np.ndarray          # (n, alpha, 65) normalized, pad rows zero
    mask: np.ndarray       # (n, alpha) bool
    y: np.ndarray          # (n, alpha) int, abstract class, -1 on pads
    flow_ids: list[list[str]]
    labels: list[list[str]]

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx: np.ndarray) -> "SequenceArrays":
        idx = np.asarray(idx)
        return SequenceArrays(self.x[idx], self.mask[idx], self.y[idx],
                              [self.flow_ids[i] for i in idx], [self.labels[i] for i in idx])


def raw_model_rows(seqs: Sequence[FlowSequence]) -> np.ndarray:
    """(n, alpha, 65) trainable values in raw units."""
    return np.stack([to_model_row(s.stats) for s in seqs]) if seqs else np.zeros((0, 0, N_MODEL_FEATURES))


def fit_normalizer_on_sequences(seqs: Sequence[FlowSequence]) -> NormalizationSpec:
    raw = raw_model_rows(seqs)
    mask = np.stack([s.pad_mask for s in seqs])
    return fit_normalizer(raw[mask])


def encode_sequences(seqs: Sequence[FlowSequence], norm: NormalizationSpec) -> SequenceArrays:
    if not seqs:
        raise ValueError("no sequences to encode")
    raw = raw_model_rows(seqs)
    mask = np.stack([s.pad_mask for s in seqs])
    x = norm.apply(raw) * mask[..., None]
    y = np.full(mask.shape, -1, dtype=np.int64)
    for i, s in enumerate(seqs):
        for t, lab in enumerate(s.labels):
            if s.pad_mask[t]:
                y[i, t] = int(abstractify(lab))
    return SequenceArrays(x, mask, y, [list(s.flow_ids) for s in seqs],
                          [list(s.labels) for s in seqs])
