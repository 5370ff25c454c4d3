class NormGuardError(RuntimeError):
    """Pre-normalization norm of an SSE step drifted past the guard; dt is too large."""


class DegenerateDiffusionError(ValueError):
    """The SSE diffusion vector vanished, so the step density is undefined."""


class StationaryStateError(RuntimeError):
    """Null-vector solve failed its residual or positivity bound."""


class SamplingError(RuntimeError):
    """A sampler cannot proceed (invalid seed path, stalled chain, no crossings)."""


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the offending line."""
