"""Knowledge-distilled image aesthetics assessment on a procedural corpus.

A self-contained reproduction harness: a minimal reverse-mode tensor
engine, surrogate classification backbones, a feature-space knowledge
distiller, single-backbone students with every supervision variant, and
the evaluation protocols (rank correlation, matching, subject mIoU,
variance decomposition, cost accounting) needed to check the scheme's
claims directionally.
"""

__version__ = "0.1.0"
