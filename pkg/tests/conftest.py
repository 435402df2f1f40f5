import threadpoolctl

# Threaded BLAS kernels are pure overhead at this suite's matrix sizes.
_LIMIT = threadpoolctl.threadpool_limits(limits=1)
