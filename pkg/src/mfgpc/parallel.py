"""BLAS thread control for the hot paths.

HMC and per-draw prediction issue millions of small-matrix BLAS calls;
letting OpenBLAS fan those out to its own thread pool is counterproductive
(handoff latency dwarfs the work, and chains already run concurrently), so
compute entry points pin BLAS to one thread for their duration.
"""

from __future__ import annotations

from contextlib import contextmanager

from threadpoolctl import threadpool_limits


@contextmanager
def single_threaded_blas():
    with threadpool_limits(limits=1):
        yield
