"""gridrep: high-dimensional position codes with matrix motion algebra.

Learns a codebook of per-site vectors whose block-wise rotations track
self-motion, analyzes the resulting grid-like units, and uses the code for
path integration, planning, and error correction.
"""

__version__ = "0.1.0"
