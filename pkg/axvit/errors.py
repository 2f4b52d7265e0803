# Exception hierarchy shared by the library and the CLI error boundary


class AxxError(Exception):
    pass


# Operand outside the signed range of a multiplier or LUT
class OperandRangeError(AxxError, ValueError):
    def __init__(self, operand, value, bitwidth):
        lo, hi = -(1 << (bitwidth - 1)), (1 << (bitwidth - 1)) - 1
        super().__init__(f"operand {operand}={value} outside signed {bitwidth}-bit range [{lo}, {hi}]")
        self.operand = operand
        self.value = value
        self.bitwidth = bitwidth


class LutModeError(AxxError):
    pass


class DataError(AxxError, ValueError):
    pass


class CalibrationStateError(AxxError):
    pass


# Bad user input: carries the flag or file it came from when known
class ConfigError(AxxError, ValueError):
    def __init__(self, message, source=None):
        super().__init__(f"{source}: {message}" if source else message)
        self.source = source


class CatalogParseError(ConfigError):
    def __init__(self, message, path, line):
        super().__init__(f"line {line}: {message}", source=path)
        self.line = line


class DivergenceError(AxxError, ArithmeticError):
    pass


class SearchError(AxxError):
    pass
