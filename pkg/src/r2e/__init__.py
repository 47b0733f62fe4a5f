"""Evidence-ranked cloze answering with per-evidence attributions."""

__version__ = "0.1.0"
