"""Exception hierarchy shared by all infinimix modules."""


class InfinimixError(Exception):
    """Base class for every error raised by the library."""


class MapConstructionError(InfinimixError):
    pass


class SingularOrbit(InfinimixError):
    pass


class BoundaryPoint(InfinimixError):
    pass


class QuadratureError(InfinimixError):
    """Adaptive quadrature ran out of its evaluation budget."""


class DepthExceeded(InfinimixError):
    pass


class SingularPoint(InfinimixError):
    pass


class NotMeanZero(InfinimixError):
    pass


class IntervalBlowup(InfinimixError):
    pass


class MethodMismatch(InfinimixError):
    pass


class ZeroMean(InfinimixError):
    pass


class ScenarioError(InfinimixError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class UnresolvedId(ScenarioError):
    def __init__(self, kind, ident, suggestions=(), line=None, column=None):
        self.kind = kind
        self.ident = ident
        self.suggestions = list(suggestions)
        hint = f"; did you mean {', '.join(self.suggestions)}?" if self.suggestions else ""
        super().__init__(f"unknown {kind} id {ident!r}{hint}", line, column)

    def located(self, line, column):
        return UnresolvedId(self.kind, self.ident, self.suggestions, line, column)
