"""Exception types shared across the package.

The CLI maps these onto exit codes: config errors -> 2, data errors -> 3,
numerical failures -> 4.
"""


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


class EmptyDomainError(DataError):
    def __init__(self, msg="empty domain"):
        super().__init__(msg)


class DisconnectedError(DataError):
    def __init__(self, what, n_components):
        self.n_components = n_components
        super().__init__(f"{what} is disconnected ({n_components} components)")


class SpectrumError(DataError):
    pass
