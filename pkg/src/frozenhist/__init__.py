"""History compression with a frozen associative memory for POMDP RL.

The pipeline: observations are projected by a fixed random matrix into the
token-embedding space of a small frozen sequence model, snapped into the
convex hull of the embeddings by one associative-memory retrieval, and
streamed through the model's activation register to produce a compressed
history summary.  Only a small observation encoder and the actor-critic
heads are trained (with PPO).  Alongside the agent live the verification
pieces: retrieval-error and storage-capacity bounds for the associative
memory, distance-preservation statistics for the projection, and the
evaluation statistics used to compare agents.
"""

__version__ = "0.1.0"
