import os

# keep BLAS sequential before numpy's first import: deterministic and faster
# at the matrix sizes used here
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
