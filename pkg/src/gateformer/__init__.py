"""Gated-input transformer recommender with keyword-based recall."""

import os

# Bit-reproducible runs require a fixed BLAS reduction order. These only take
# effect if numpy has not been imported yet (true for CLI entry; tests that
# need byte-identical output run the CLI in a subprocess).
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
del _var

__version__ = "0.1.0"
