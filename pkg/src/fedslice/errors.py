"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a delay formula."""


class InfeasibleQueueError(DomainError):
    """Processing rate does not exceed the arrival rate (M/M/1 unstable)."""


class InfeasibleCellError(RuntimeError):
    """A base station's local feasible set is empty."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class InfeasibleProblemError(RuntimeError):
    """No allocation satisfies every constraint; ``certificate`` holds the evidence."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class NonConvergenceError(RuntimeError):
    """An iterative solve hit its cap; ``best`` carries the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
