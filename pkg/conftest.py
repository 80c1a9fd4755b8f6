import os

# Pin BLAS pools before numpy ever loads: keeps timing stable and metrics
# logs bit-identical across runs.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
