"""Exception types raised by the library."""


class PeerCollabError(Exception):
    pass


class ConfigurationError(PeerCollabError, ValueError):
    """Bad shapes, mismatched peers, invalid settings."""


class DataError(PeerCollabError, ValueError):
    """Malformed input files or out-of-range ids."""


class NumericalError(PeerCollabError, ArithmeticError):
    """NaN/Inf encountered during training."""
