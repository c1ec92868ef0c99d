import os

# Pin BLAS pools to one thread before anything imports numpy: the timing
# comparisons in the acceptance suite assume serial LAPACK, and threaded
# reductions would also perturb low-order bits between runs.
for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ[_var] = "1"
