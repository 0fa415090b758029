"""Face super-resolution with language-vision priors."""

import os as _os

# Cap numeric worker threads before numpy first loads its BLAS; single
# threaded by default so results are reproducible run to run.
_threads = _os.environ.get("LVFSR_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
