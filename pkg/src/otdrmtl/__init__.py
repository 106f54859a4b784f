"""Multitask BiLSTM-CNN fiber fault diagnosis on synthetic OTDR traces."""

__version__ = "0.1.0"
