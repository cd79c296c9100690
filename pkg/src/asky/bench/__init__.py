"""Micro- and macro-benchmark harnesses with machine-readable reports."""

from .report import BenchReport, MetricRow

__all__ = ["BenchReport", "MetricRow"]
