"""Exception types raised across the package."""


class PhpgoError(Exception):
    """Base class for every error raised by this package."""


class AngleAtPi(PhpgoError, ValueError):
    """Rotation angle is at (or numerically near) pi, where the log map is ill-conditioned."""


class DuplicateNode(PhpgoError, KeyError):
    pass


class MissingEndpoint(PhpgoError, KeyError):
    pass


class InvalidInformation(PhpgoError, ValueError):
    pass


class SelfLoop(PhpgoError, ValueError):
    pass


class MalformedLine(PhpgoError, ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class NotPositiveDefinite(PhpgoError, ArithmeticError):
    pass


class NoFixedGauge(PhpgoError, ValueError):
    pass


class EmptyGraph(PhpgoError, ValueError):
    pass


class NotSingleton(PhpgoError, ValueError):
    pass


class UnassignedNode(PhpgoError, KeyError):
    pass


class MissingSeed(PhpgoError, KeyError):
    pass


class MismatchedIds(PhpgoError, ValueError):
    pass


class PathTooShort(PhpgoError, ValueError):
    pass
