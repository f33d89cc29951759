class ConfigError(ValueError):
    pass


class VocabularyError(IndexError):
    pass


class EmptySequenceError(ValueError):
    pass


class DegenerateWeightsError(ArithmeticError):
    pass


class DegenerateBatchError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class DatasetError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class FormatError(ValueError):
    pass
