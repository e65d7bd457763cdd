"""Decentralized robust controller synthesis for coupled linear systems.

The package synthesizes set-valued feedback controllers for networks of
disturbed linear subsystems.  Couplings between subsystems are treated as
bounded disturbances whose extents are negotiated through parametric
contracts; the negotiation minimizes a convex potential built from directed
Hausdorff distances, using dual variables of per-subsystem linear programs
as exact subgradients.  A distributed robust MPC loop reuses the same
machinery online.
"""

import os as _os

# The workload is thousands of small factorizations; multithreaded BLAS
# thrashes badly on them.  Parallelism belongs at the subsystem level.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")
try:
    from threadpoolctl import threadpool_limits as _limits
    _limits(limits=1, user_api="blas")
except Exception:           # pragma: no cover - best effort only
    pass

from .geometry import Zonotope

__all__ = ["Zonotope"]
__version__ = "0.1.0"
