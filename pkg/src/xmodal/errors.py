"""Exception hierarchy. Each class carries a short ``category`` string that
the CLI prints as the machine-parsable error prefix."""


class XModalError(Exception):
    category = "error"


class FormatError(XModalError):
    category = "format"


class LengthError(FormatError):
    category = "length"


class ValidationError(XModalError, ValueError):
    category = "validation"


class RangeError(ValidationError):
    category = "range"


class VersionError(XModalError):
    category = "version"


class ShapeError(XModalError, ValueError):
    category = "shape"


class ConfigError(XModalError, ValueError):
    category = "config"


class UndefinedLossError(XModalError):
    category = "undefined-loss"


class DivergenceError(XModalError):
    category = "divergence"


class GenerationError(XModalError):
    category = "generation"


class EvaluationError(XModalError):
    category = "evaluation"


class PaletteError(XModalError):
    category = "palette"


class DatasetError(XModalError):
    category = "dataset"


class UnsupportedError(XModalError):
    category = "unsupported"
