"""Exception hierarchy shared by all modules."""


class MayerSensError(Exception):
    """Base class. ``code`` is the name reported by the CLI."""

    @property
    def code(self):
        return type(self).__name__


class NonsmoothPoint(MayerSensError):
    """A derivative of H was requested inside the guard cone around p = 0."""


class ModelInvalid(MayerSensError):
    pass


class DegenerateCostate(MayerSensError):
    """The costate vanishes (or starts inside the guard cone)."""


class AsymmetryDrift(MayerSensError):
    pass


class PrePostViolation(MayerSensError):
    pass


class OutOfDomain(MayerSensError):
    pass


class ContaminatedRegion(MayerSensError):
    """A query touches grid nodes whose values depend on clamped data."""


class InconclusiveAtResolution(MayerSensError):
    pass


class PremiseFailed(MayerSensError):
    """The hypothesis of a theorem check does not hold.

    ``report`` holds the premise check that failed, when there is one.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ScenarioError(MayerSensError):
    """Malformed scenario file. Carries the offending key and line."""

    def __init__(self, message, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
