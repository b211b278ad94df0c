"""Exception types raised across the package."""


class MortjumpError(Exception):
    """Base class for all package errors."""


class DataError(MortjumpError, ValueError):
    """Problems with input mortality data."""


class GridIncomplete(DataError):
    pass


class InvalidExposure(DataError):
    pass


class DuplicateCell(DataError):
    pass


class ZeroDeathCell(DataError):
    def __init__(self, cells):
        self.cells = list(cells)
        shown = ", ".join(f"(age={a!r}, year={y})" for a, y in self.cells[:5])
        more = "" if len(self.cells) <= 5 else f" and {len(self.cells) - 5} more"
        super().__init__(
            f"zero death count in {len(self.cells)} cell(s): {shown}{more}; "
            "pass impute_zero=True to replace zeros by 0.5"
        )


class TooFewYears(DataError):
    pass


class ShapeError(MortjumpError, ValueError):
    pass


class YearRangeMismatch(ShapeError):
    pass


class InvalidCoefficient(MortjumpError, ValueError):
    pass


class ConfigError(MortjumpError, ValueError):
    pass


class InvalidSettings(ConfigError):
    pass


class InvalidStart(MortjumpError, ValueError):
    """Slice sampler started at a point with non-finite log density."""


class PinnedIndex(MortjumpError, IndexError):
    pass


class DegenerateScale(MortjumpError, ValueError):
    pass


class NoJump(MortjumpError, ValueError):
    """Jump path has no shock, so the persistence coefficient is unidentified."""


class InconsistentPath(MortjumpError, ValueError):
    pass


class NoAdmissibleRoot(MortjumpError, ValueError):
    pass


class AmbiguousRoot(MortjumpError, ValueError):
    def __init__(self, roots):
        self.roots = list(roots)
        super().__init__(f"several admissible roots in [0, 1): {self.roots}")


class DegenerateChains(MortjumpError, ValueError):
    pass


class ChainTooShort(MortjumpError, ValueError):
    pass


class InvalidLogLik(MortjumpError, ValueError):
    pass


class InvalidHorizon(MortjumpError, ValueError):
    pass


class IncompatibleFits(MortjumpError, ValueError):
    pass


class CoeffUnidentified(UserWarning):
    """Every occurrence is pinned, so the persistence coefficient follows its prior."""
