"""Budgeted covariate acquisition for sequential randomized trials.

Thompson-sampling selection of costly covariates under a knapsack budget,
rerandomization on the measured covariates, Lin-adjusted batch estimates
with HC2 variances and inverse-variance pooling across batches.
"""

from darts_rct.errors import ContractViolation, InvalidInputError

__version__ = "0.1.0"

__all__ = ["ContractViolation", "InvalidInputError", "__version__"]
