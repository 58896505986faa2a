"""Label-efficient segmentation at desk scale.

Trains a tiny fully-deterministic segmentation network on synthetic
"shapes-world" scenes under three regimes: semi-supervised (ss),
domain-adaptive (da) and weakly-supervised (ws).  Unreliable (high-entropy)
predictions are recycled as contrastive negative keys instead of being
discarded.

Submodules are imported lazily by the CLI so that thread-cap environment
variables can take effect before numpy loads.
"""

__version__ = "0.1.0"
