"""Differentially private continual learning over feature embeddings.

Subpackages by concern:

- :mod:`dpcl.datasets` - embeddings, label universes, task streams, EMB1 I/O
- :mod:`dpcl.mechanisms` - calibrated Gaussian / Laplace noise primitives
- :mod:`dpcl.accountant` - task-wise ledger, composition, DP-SGD bound
- :mod:`dpcl.label_space` - output-label-space policies and failure bounds
- :mod:`dpcl.cosine` - cosine prototype classifier over noisy class sums
- :mod:`dpcl.dpsgd` - DP-SGD linear heads, ensemble, and baselines
- :mod:`dpcl.attack` - adjacency game over the released label set
- :mod:`dpcl.harness` - experiment driver and metrics
- :mod:`dpcl.cli` - command-line entry point
"""

from .mechanisms import PrivacyBudget

__version__ = "0.1.0"
__all__ = ["PrivacyBudget", "__version__"]
