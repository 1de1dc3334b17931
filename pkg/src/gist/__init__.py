"""Cross-domain CTR engine.

Learns joint content-behavior item representations in a data-rich source
domain, searches lifelong behavior sequences with them, and feeds only item
ids and similarity scores to the target-domain CTR model.
"""

__version__ = "0.1.0"
