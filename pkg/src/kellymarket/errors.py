"""Exception types raised by the market engine and its tooling."""


class KellyMarketError(Exception):
    """Base class for all package errors."""


class DegeneratePrice(KellyMarketError, ValueError):
    """A market price outside the open interval (0, 1)."""


class AllZeroConfidence(KellyMarketError):
    """No agent commits any wealth (sum of fraction * wealth is zero)."""


class PriceMismatch(KellyMarketError):
    """Settlement attempted at a price that does not clear the market."""


class Insolvent(KellyMarketError, ValueError):
    """A position whose wealth in some outcome is not strictly positive."""


class LengthMismatch(KellyMarketError, ValueError):
    pass


class EmptySequence(KellyMarketError, ValueError):
    pass


class ConfigError(KellyMarketError, ValueError):
    """Invalid experiment configuration.

    ``field`` names the offending key; ``line``/``column`` locate JSON
    syntax errors when known.
    """

    def __init__(self, message, field=None, line=None, column=None):
        self.field = field
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{'; '.join(where)}: " if where else ""
        super().__init__(prefix + message)
