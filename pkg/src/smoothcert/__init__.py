"""Confidence bounds on the margin of a randomized-smoothing classifier and the
certified radii they imply."""

from .bounds import (
    InsufficientSamples,
    Kind,
    MarginEstimate,
    Method,
    bonferroni_margin,
    clopper_pearson_lower,
    clopper_pearson_upper,
    cs_interval,
    cs_lower,
    cs_upper,
    empirical_bernstein_lower,
    empirical_bernstein_upper,
)
from .continuous import build_z_first, build_z_second, continuous_margin, continuous_margin_lcb
from .discrete import (
    SignomialSubproblem,
    fast_solve_signomial,
    first_margin_lcb,
    multinomial_margin_cdf_first,
    multinomial_margin_cdf_second,
    second_margin_lcb,
    solve_signomial,
)
from .radius import CTACurve, cta_curve, gain_table, radius_first, radius_second
from .smoothing import NoiseConfig, SimplexMap, SimplexMapSpec, sample_counts, sample_prob_matrix
from .special import erf, gaussian_cdf, gaussian_quantile, gaussian_quantile_taylor

__version__ = "0.1.0"
