"""dispatchopt: emergency-dispatch optimization on road networks.

Offline: travel-time atlas precomputation over a road graph. Online: a
single-step dispatch MDP, an attention actor-critic policy trained with A2C,
evaluation against the atlas ground truth and a nearest-neighbor baseline, and
a governance layer that grades regional service levels and proposes facility
placements.
"""

__version__ = "0.1.0"
