"""
Reproducible job fan-out.

Every job gets its own generator seeded with [job_index, base_seed], so results do not
depend on how joblib distributes jobs over workers.
"""
import logging

import numpy as np
from joblib import Parallel, delayed

log = logging.getLogger(__name__)


def job_rng(index, seed):
    return np.random.default_rng([index, seed])


def _call(function, index, seed, args, kwargs):
    return function(*args, rng=job_rng(index, seed), **kwargs)


def run_jobs(jobs, seed=0, threads=1):
    """
    Run `(function, args, kwargs)` triples; each function receives an `rng` keyword.
    Results come back in job order.
    """
    jobs = list(jobs)
    log.debug("running %d jobs on %d workers", len(jobs), threads)
    if threads == 1:
        return [_call(function, index, seed, args, kwargs) for index, (function, args, kwargs) in enumerate(jobs)]
    return Parallel(n_jobs=threads)(
        delayed(_call)(function, index, seed, args, kwargs) for index, (function, args, kwargs) in enumerate(jobs)
    )

