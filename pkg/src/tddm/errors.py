"""Exception hierarchy. Each category maps to a distinct CLI exit code."""


class TDDMError(Exception):
    exit_code = 1


class ContractError(TDDMError, ValueError):
    """A caller violated a documented precondition (shapes, ranges, ordering)."""

    exit_code = 3


class ConfigError(TDDMError, ValueError):
    """Invalid configuration; ``errors`` holds every problem found, not just the first."""

    exit_code = 2

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ImpossibleObservationError(TDDMError, ValueError):
    exit_code = 4

    def __init__(self, action, observation):
        self.action = action
        self.observation = observation
        super().__init__(f"impossible observation {observation!r} after action {action!r}")


class UnreachableBeliefError(TDDMError, KeyError):
    exit_code = 4

    def __str__(self):
        return str(self.args[0]) if self.args else "unreachable belief"


class DivergenceError(TDDMError, ArithmeticError):
    exit_code = 5

    def __init__(self, message, batch_index=None, step=None):
        self.batch_index = batch_index
        self.step = step
        super().__init__(message)


class InsufficientHistoryError(TDDMError, LookupError):
    exit_code = 3
