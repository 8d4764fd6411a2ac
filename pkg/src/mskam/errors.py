"""Exception and warning classes shared across the package."""


class MskamError(Exception):
    """Base class for all engine errors."""


class StructureError(MskamError, ValueError):
    """Operands have incompatible dimensions or caps."""


class DomainError(MskamError, ValueError):
    """An analytic domain or parameter box is malformed."""


class NumericError(MskamError, ArithmeticError):
    """Non-finite data or a failed numerical procedure."""


class SmallDivisorError(NumericError):
    """A divisor fell below its nonresonance floor.

    Parameters
    ----------
    k : tuple of int
        Fourier mode of the offending shell.
    divisor : float
        Modulus of the scalar divisor, or the square root of the smallest
        eigenvalue of ``A^* A`` for matrix divisors.
    floor : float
        The floor that was violated.
    """

    def __init__(self, k, divisor, floor, which="L_k0"):
        self.k = tuple(int(v) for v in k)
        self.divisor = float(divisor)
        self.floor = float(floor)
        self.which = which
        super().__init__(
            f"small divisor at k={self.k} ({which}): "
            f"{self.divisor:.3e} < floor {self.floor:.3e}")

    def as_record(self):
        return {"k": list(self.k), "divisor": self.divisor,
                "floor": self.floor, "which": self.which}


class ConditioningWarning(UserWarning):
    """Linear system condition number exceeded the configured limit."""


class TranslationError(NumericError):
    """Newton iteration for the translation equation failed."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        self.residual = float(residual)
        self.iterations = int(iterations)
        super().__init__(f"{message} (residual={self.residual:.3e}, "
                         f"iterations={self.iterations})")


class FloorError(NumericError):
    """A matrix nondegeneracy floor such as (C1) does not hold."""


class PartialAssemblyError(MskamError):
    """Generator assembly requested while some shells are excluded."""

    def __init__(self, excluded):
        self.excluded = list(excluded)
        ks = [tuple(e["k"]) if isinstance(e, dict) else tuple(e)
              for e in self.excluded]
        super().__init__(f"excluded shells: {ks}")


class StepRejected(MskamError):
    """A KAM step failed one of its certified assumptions."""

    def __init__(self, message, certificate=None):
        self.certificate = certificate
        super().__init__(message)


class ConfigError(MskamError, ValueError):
    """Invalid run configuration."""


class DataError(MskamError, KeyError):
    """Required parameter-derivative data is missing."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing data"


class MorseDegeneracyError(NumericError):
    """A critical point of an averaged potential is degenerate."""
