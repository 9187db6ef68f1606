"""Kernel backend selection.

Imports the compiled Cython kernels when available, otherwise the NumPy
fallback.  Set ``FALLHMM_PURE_PYTHON=1`` to force the fallback (used by the
backend-equivalence tests and the benchmark).
"""

import os

from ._pykernels import gaussian_log_obs  # noqa: F401  (always numpy)

if os.environ.get("FALLHMM_PURE_PYTHON"):
    from ._pykernels import forward, backward, viterbi  # noqa: F401

    BACKEND = "python"
else:
    try:
        from ._ckernels import forward, backward, viterbi  # noqa: F401

        BACKEND = "compiled"
    except ImportError:
        from ._pykernels import forward, backward, viterbi  # noqa: F401

        BACKEND = "python"
