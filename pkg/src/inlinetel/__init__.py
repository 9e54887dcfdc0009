"""Inline telemetry testbed: simulated core and RAN elements that record
telemetry while they process traffic, plus the scrape/query pipeline and the
capture-and-dissect baseline used for comparison."""

__version__ = "0.1.0"
