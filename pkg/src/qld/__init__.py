"""Phonon-phason continuum mechanics for quasiperiodic crystals.

Modules: ``algebra`` (3x3 and fourth-order tensor kernels), ``kinematics``
(grids, fields, gradients), ``constitutive`` (energies and stresses),
``dynamics`` (integrators and static equilibria), ``interface`` (marker
curves and jump balances), ``verify`` (conservation and invariance checks),
``scenario``/``io``/``cli`` (configuration, writers, command line).
"""

import os

# cap BLAS/OpenMP pools before numpy loads them
_threads = os.environ.get("QLD_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
