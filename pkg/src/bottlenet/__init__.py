"""bottlenet: inference, cost accounting, memory planning and numerical
experiments for inverted-residual bottleneck networks.

Submodules are imported explicitly (``from bottlenet import model``);
nothing heavy loads at package import time so the CLI can configure BLAS
threading first.
"""

__version__ = "0.1.0"
