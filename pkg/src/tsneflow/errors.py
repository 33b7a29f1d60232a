"""Exception hierarchy shared by all tsneflow modules."""


class TsneFlowError(Exception):
    """Base class. ``module`` names the raising component, ``index`` the
    offending point (or pair) when there is one."""

    module = "tsneflow"

    def __init__(self, message, *, index=None, module=None, **context):
        super().__init__(message)
        self.index = index
        if module is not None:
            self.module = module
        self.context = context

    def to_dict(self):
        out = {"error": type(self).__name__, "module": self.module, "message": str(self)}
        if self.index is not None:
            out["index"] = self.index
        out.update({k: v for k, v in self.context.items() if _jsonable(v)})
        return out


def _jsonable(v):
    return isinstance(v, (str, int, float, bool, type(None), list, tuple))


# affinity-hi
class NonFiniteInput(TsneFlowError, ValueError):
    module = "affinity-hi"


class DuplicatePoints(TsneFlowError, ValueError):
    module = "affinity-hi"


class PerpOutOfRange(TsneFlowError, ValueError):
    module = "affinity-hi"


class DegenerateDistances(TsneFlowError, ValueError):
    module = "affinity-hi"


class BracketFailure(TsneFlowError, RuntimeError):
    module = "affinity-hi"


class BoundViolated(TsneFlowError, AssertionError):
    """A proven inequality failed numerically. Always an implementation bug."""

    module = "diagnostics"


# affinity-lo
class CoincidentPoints(TsneFlowError, ValueError):
    module = "affinity-lo"


# kl-flow
class StepFailure(TsneFlowError, RuntimeError):
    module = "kl-flow"


# geometry
class BadSpec(TsneFlowError, ValueError):
    module = "geometry"


class SizeMismatch(TsneFlowError, ValueError):
    module = "geometry"


class TooLarge(TsneFlowError, ValueError):
    module = "geometry"


class DegenerateGrid(TsneFlowError, ValueError):
    module = "geometry"


# cli-runner
class ConfigError(TsneFlowError, ValueError):
    module = "cli-runner"
