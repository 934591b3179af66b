"""Exception hierarchy shared across the package."""


class ImpactlabError(Exception):
    """Base class for all impactlab errors."""


class RowError(ImpactlabError):
    """A malformed CSV row. Carries the 1-based row number (header = row 1)."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class MissingColumn(RowError):
    pass


class UnparsableTimestamp(RowError):
    pass


class NonPositivePrice(RowError):
    pass


class CrossedQuote(RowError):
    """Quote row with ask < bid."""


class EmptyDay(ImpactlabError):
    """A symbol-day with no usable quotes."""


class DegenerateDay(ImpactlabError):
    """A per-day estimate with zero valid samples at every lag."""


class EmptyInput(ImpactlabError):
    pass


class IncompleteUniverse(ImpactlabError):
    """An aggregation over a universe with missing pair curves."""

    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(map(str, self.missing[:8]))
        more = "" if len(self.missing) <= 8 else f" (+{len(self.missing) - 8} more)"
        super().__init__(f"missing pairs: {shown}{more}")


class AllZero(ImpactlabError):
    """Normalization impossible: every response is zero at the requested lag."""


class InsufficientData(ImpactlabError):
    pass


class DomainError(ImpactlabError):
    """Model evaluated outside its domain."""


class ConfigError(ImpactlabError):
    pass


class InstanceTooLarge(ImpactlabError):
    """Brute-force oracle refused: instance exceeds its size guard."""


class MissingDependency(ImpactlabError):
    """A pipeline stage output required by a later stage is absent."""
