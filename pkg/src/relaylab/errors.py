"""Exception types shared across the package."""


class RelayLabError(Exception):
    """Base class for all package errors."""


class NonFiniteFieldError(RelayLabError):
    """A field contains NaN or Inf entries."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index

    def __reduce__(self):  # keep picklable across worker boundaries
        return (self.__class__, (self.args[0], self.index))


class CflViolationError(RelayLabError):
    """Advective CFL bound violated for the configured time step."""

    def __init__(self, umax, dt, dt_admissible, step=None):
        msg = (f"CFL violation: max|u|={umax:.6g} requires dt <= "
               f"{dt_admissible:.6g}, got dt={dt:.6g}")
        if step is not None:
            msg += f" (at step {step})"
        super().__init__(msg)
        self.umax = umax
        self.dt = dt
        self.dt_admissible = dt_admissible
        self.step = step

    def __reduce__(self):
        return (self.__class__, (self.umax, self.dt, self.dt_admissible,
                                 self.step))


class EncodingError(RelayLabError):
    """Encoder misuse: bad spec, missing latent key, dimension mismatch."""


class MissingLatentError(EncodingError):
    """A (trajectory_id, frame_id) key is absent from a latent table."""

    def __init__(self, key):
        super().__init__(f"latent table has no entry for key {key}")
        self.key = key


class FormatError(RelayLabError):
    """Base class for binary file-format violations."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(FormatError):
    """File ends before the payload promised by its header."""


class DuplicateKeyError(FormatError):
    """A latent file contains a repeated (trajectory_id, frame_id) key."""


class DimensionMismatchError(FormatError):
    """Stored dimensions disagree with what the caller expects."""


class ConfigError(RelayLabError):
    """Invalid experiment configuration (unknown key, bad value, bad combination)."""
