"""Prior-assisted attentional keypoint matching.

Keypoint sets from two images are refined by an attentional graph network
whose attention can be biased by a spatial prior computed from a motion
estimate (IMU integration or a constant-velocity guess), then matched through
a dustbin-augmented log-domain Sinkhorn solver.
"""

from kpmatch.errors import KpmatchError

__version__ = "0.1.0"

__all__ = ["KpmatchError", "__version__"]
