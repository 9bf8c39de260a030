"""ringwatch: real-time multiple-account (fraud-ring) detection.

Registration events become an association graph via heuristic and
classifier-scored edges; colluding clusters are tracked incrementally
with a cache-backed connected-components scheme, scored, and routed to
automated blocking or a human review queue.
"""

__version__ = "0.1.0"
