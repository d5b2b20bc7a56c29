"""Feature extraction scripts producing .txvf banks for the retrieval engine."""

__version__ = "0.1.0"
