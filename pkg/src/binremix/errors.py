class ConfigError(ValueError):
    """Invalid configuration or input file. CLI exit code 2."""


class NumericalError(ArithmeticError):
    """Numerical failure tied to a frequency bin. CLI exit code 3."""

    def __init__(self, message, bin_index=None):
        super().__init__(message)
        self.bin_index = bin_index


class SingularMixtureError(NumericalError):

    def __init__(self, bin_index):
        super().__init__(
            f'weighted mixture PSD is singular at bin {bin_index}; '
            'add a diffuse noise channel with full-rank PSD', bin_index)


class UndefinedITFError(NumericalError):
    """The left reference component vanishes, so the ITF ratio is undefined."""
