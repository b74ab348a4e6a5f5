"""eegscribe: desk-scale EEG-to-report pipeline on synthetic corpora."""

__version__ = "0.1.0"
