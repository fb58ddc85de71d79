class ConfigError(ValueError):
    """Invalid configuration or precondition. ``key`` names the offending setting."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class SolverError(RuntimeError):
    """Nonlinear solve failed to reach the residual tolerance."""

    def __init__(self, message, residual=None, step=None, seed=None):
        super().__init__(message)
        self.residual = residual
        self.step = step
        self.seed = seed

    def __str__(self):
        parts = [super().__str__()]
        if self.step is not None:
            parts.append(f"step={self.step}")
        if self.seed is not None:
            parts.append(f"seed={self.seed}")
        if self.residual is not None:
            parts.append(f"residual={self.residual:.3e}")
        return " ".join(parts)
