class DegenerateFitError(ArithmeticError):
    """Numerical degeneracy: perfect interpolation, vanishing score, singular design block."""


class NonUniqueSolutionError(ValueError):
    """The unpenalized problem has no unique minimizer (lambda=0 with a rank-deficient design)."""


class CovarianceError(ValueError):
    """Covariance is not symmetric positive definite or is malformed."""
