"""Exception hierarchy shared by every module."""


class AdapterXError(Exception):
    pass


class DimensionError(AdapterXError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(AdapterXError, ValueError):
    """A configuration field is unknown, mistyped, or violates a constraint."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ContractError(AdapterXError, RuntimeError):
    """A precondition of an operation was not met."""


class NumericalError(AdapterXError, ArithmeticError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")
