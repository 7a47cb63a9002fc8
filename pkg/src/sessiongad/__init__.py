"""Group anomaly detection for endpoint session telemetry.

A session (Windows logon SID) on a given day is treated as a group of
events.  Per-event feature vectors are assembled from command-line and
behavior embeddings plus density, session, static, and reputation
features; an adversarial autoencoder with tail-percentile latent
filtering and an intra-group triplet loss ranks the groups by how far
their latent encodings sit from a kernel-medoid reference.
"""

__version__ = "0.1.0"
