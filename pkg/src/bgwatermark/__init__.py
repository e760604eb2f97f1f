"""Physical watermarking with intentional packet drops for replay-attack detection."""

__version__ = "0.1.0"
