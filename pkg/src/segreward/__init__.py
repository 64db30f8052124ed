"""Subtask-segmented dense reward learning.

Learns a dense, subtask-conditioned reward from segmented demonstrations by
minimizing an EPIC-style distance to the segmentation labels, infers the
ongoing subtask online from embedding similarity, and trains small RL agents
against the learned reward on toy manipulation chains.
"""

__version__ = "0.1.0"
