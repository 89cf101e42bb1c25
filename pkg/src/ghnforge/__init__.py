"""ghnforge: architecture sampling, graph-hypernetwork parameter prediction, analysis."""

__version__ = "0.1.0"
