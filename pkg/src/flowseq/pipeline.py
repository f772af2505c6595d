"""End-to-end helpers shared by the CLI and the experiment tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .augment import AugBase, augment_training_set, build_augbase
from .dataset import (AbstractLabel, LabelRule, NormalizationSpec, SequenceArrays,
                      abstractify, assign_labels, encode_sequences,
                      fit_normalizer_on_sequences, time_split)
from .evaluation import EvaluationReport, build_report, compute_metrics
from .flows import FeatureVector, PacketRecord, extract_features, iter_flows
from .flows.table import DEFAULT_FLOW_TIMEOUT_US
from .model import BiALSTM, ModelConfig, TrainConfig, predict, train
from .rng import substream
from .sequences import DEFAULT_ALPHA, DEFAULT_TAU_S, FlowSequence, generate_sequences

log = logging.getLogger(__name__)


def extract_flows(packets: Iterable[PacketRecord],
                  flow_timeout_us: int = DEFAULT_FLOW_TIMEOUT_US) -> list[FeatureVector]:
    """Feature vectors for every flow, ordered by flow start time."""
    fvs = [extract_features(f) for f in iter_flows(packets, flow_timeout_us)]
    fvs.sort(key=lambda f: (f.timestamp_us, f.flow_id))
    return fvs


def labeled_flows(packets: Iterable[PacketRecord], rules: Sequence[LabelRule]) -> list[FeatureVector]:
    return assign_labels(extract_flows(packets), rules)


def build_sequences(flows: Sequence[FeatureVector], alpha: int = DEFAULT_ALPHA,
                    tau_s: Optional[float] = DEFAULT_TAU_S) -> list[FlowSequence]:
    ordered = sorted(flows, key=lambda f: (f.timestamp_us, f.flow_id))
    return generate_sequences(ordered, alpha, tau_s)


def drop_classes(seqs: Sequence[FlowSequence], classes: Iterable[AbstractLabel]) -> list[FlowSequence]:
    """Remove sequences containing any real flow of the given abstract classes."""
    bad = set(classes)
    return [s for s in seqs if not any(abstractify(l) in bad for l in s.real_labels())]


@dataclass
class Prepared:
    train: SequenceArrays
    normalizer: NormalizationSpec
    train_sequences: list[FlowSequence]
    augbase: Optional[AugBase] = None
    n_augmented: int = 0


def prepare_training(train_seqs: Sequence[FlowSequence], augment: bool, seed: int,
                     augbase: Optional[AugBase] = None) -> Prepared:
    """Optionally augment, then fit the normalizer on what the model will see."""
    seqs = list(train_seqs)
    n_aug = 0
    if augment:
        augbase = augbase if augbase is not None else build_augbase(seed)
        before = seqs
        seqs = augment_training_set(seqs, augbase, substream(seed, "augment-noise"))
        n_aug = sum(a is not b for a, b in zip(seqs, before))
    norm = fit_normalizer_on_sequences(seqs)
    return Prepared(encode_sequences(seqs, norm), norm, seqs, augbase, n_aug)


def fit(prepared: Prepared, train_cfg: TrainConfig,
        model_cfg: ModelConfig = ModelConfig()) -> BiALSTM:
    model = BiALSTM(model_cfg, seed=train_cfg.seed)
    train(model, prepared.train, train_cfg)
    return model


def f1_on(model: BiALSTM, data: SequenceArrays, threshold: float = 0.5) -> float:
    pred = predict(model, data, threshold)
    return compute_metrics(pred.malicious, pred.true_class != int(AbstractLabel.BENIGN)).f1


def evaluate(model: BiALSTM, data: SequenceArrays, name: str, threshold: float = 0.5) -> EvaluationReport:
    pred = predict(model, data, threshold)
    return build_report(name, pred.true_class, pred.pred_class, pred.scores,
                        [l if l else "unknown" for l in pred.labels], threshold, model.config)


@dataclass
class SplitCorpus:
    train_flows: list[FeatureVector]
    test_flows: list[FeatureVector]
    train_sequences: list[FlowSequence] = field(default_factory=list)
    test_sequences: list[FlowSequence] = field(default_factory=list)


def split_corpus(flows: Sequence[FeatureVector], ratio: float = 0.7, alpha: int = DEFAULT_ALPHA,
                 tau_s: Optional[float] = DEFAULT_TAU_S) -> SplitCorpus:
    tr, te = time_split(flows, ratio)
    return SplitCorpus(tr, te, build_sequences(tr, alpha, tau_s), build_sequences(te, alpha, tau_s))
