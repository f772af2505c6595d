"""Packet parsing, flow aggregation and per-flow feature extraction."""

from .features import (
    CSV_COLUMNS, MODEL_COLUMNS, N_MODEL_FEATURES, N_STATS, PAYLOAD_COLUMNS,
    PAYLOAD_INDICES, STAT_COLUMNS, STAT_INDEX, FeatureVector, extract_features,
    read_flow_csv, to_model_row, write_feature_dictionary, write_flow_csv,
)
from .packets import (
    PacketRecord, Protocol, TCPFlag, parse_capture, read_packet_csv, read_packets,
    write_packet_csv, write_pcap,
)
from .table import FlowKey, FlowState, FlowTable, TCPPhase, aggregate, ingest_packet, iter_flows

__all__ = [
    "CSV_COLUMNS", "MODEL_COLUMNS", "N_MODEL_FEATURES", "N_STATS", "PAYLOAD_COLUMNS",
    "PAYLOAD_INDICES", "STAT_COLUMNS", "STAT_INDEX", "FeatureVector", "extract_features",
    "read_flow_csv", "to_model_row", "write_feature_dictionary", "write_flow_csv",
    "PacketRecord", "Protocol", "TCPFlag", "parse_capture", "read_packet_csv", "read_packets",
    "write_packet_csv", "write_pcap", "FlowKey", "FlowState", "FlowTable", "TCPPhase",
    "aggregate", "ingest_packet", "iter_flows",
]
