"""Flow-sequence intrusion detection with a bidirectional asymmetric LSTM."""

__version__ = "0.1.0"
