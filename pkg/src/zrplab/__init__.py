"""Simulation and analysis laboratory for one-dimensional asymmetric
zero-range dynamics in a quenched site-rate field."""

__version__ = "0.1.0"

from .environment import (  # noqa: F401
    DefectSchedule,
    Environment,
    build_iid_environment,
    build_sparse_defect_environment,
    quadratic_schedule,
)
from .rates import (  # noqa: F401
    RateFunction,
    constant_rate,
    mean_density_R,
    partition_function,
    sample_product_measure,
    sample_theta,
    site_law,
)
