"""Kernel selection: the compiled extension when importable, else the numpy fallback.

Set ``SUPERSPILL_PURE=1`` to force the fallback.
"""

import logging
import os

logger = logging.getLogger(__name__)

if os.environ.get("SUPERSPILL_PURE", "") not in ("", "0"):
    from ._fallback import cluster_sums, demean_inplace
    IMPLEMENTATION = "python"
else:
    try:
        from ._ckernels import cluster_sums, demean_inplace
        IMPLEMENTATION = "compiled"
    except ImportError:
        logger.debug("compiled kernels unavailable; using numpy fallback")
        from ._fallback import cluster_sums, demean_inplace
        IMPLEMENTATION = "python"

__all__ = ["cluster_sums", "demean_inplace", "IMPLEMENTATION"]
