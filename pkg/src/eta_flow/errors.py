"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NotBipartiteError(DomainError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        path = " -> ".join(str(s) for s in self.cycle)
        super().__init__(f"bond graph is not bipartite: odd cycle {path}")


class UnsupportedParameterError(DomainError):
    pass


class EngineError(RuntimeError):
    """A propagation engine cannot handle the request."""


class ConvergenceError(EngineError):
    def __init__(self, message, **diagnostics):
        self.diagnostics = diagnostics
        details = ", ".join(f"{k}={v!r}" for k, v in diagnostics.items())
        super().__init__(f"{message} ({details})" if details else message)
