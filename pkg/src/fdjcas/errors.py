"""Exception and warning types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario or configuration value.

    ``key`` names the offending configuration entry when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class FullRankNullspace(ValueError):
    """The null constraints span the whole weight space; no weight survives."""


class Infeasible(RuntimeError):
    """A minimum-gain requirement cannot be met.

    Attributes
    ----------
    user : int
        Index of the first user whose requirement fails.
    required_db : float
        Requested minimum gain in dBi.
    achievable_db : float
        Best gain reachable at that user's direction, in dBi.
    """

    def __init__(self, user, required_db, achievable_db):
        super().__init__(
            f"user {user}: required gain {required_db:.2f} dBi exceeds the "
            f"achievable maximum {achievable_db:.2f} dBi"
        )
        self.user = user
        self.required_db = required_db
        self.achievable_db = achievable_db


class LoadError(ValueError):
    """Malformed SI channel file. ``row`` is the 1-based file line number."""

    def __init__(self, message, row=None):
        where = f" (row {row})" if row is not None else ""
        super().__init__(message + where)
        self.row = row


class DegenerateDirections(UserWarning):
    """Duplicate directions made a constraint set rank deficient."""
