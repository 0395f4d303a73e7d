"""Error hierarchy. Every error carries a stable string code.

The codes double as wire identifiers: the CLI prints them on stderr and the
HTTP service maps them onto its closed ApiError code set.
"""


class SpecDockError(Exception):
    """Base class; `code` is a stable machine-readable identifier."""

    code = "internal"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


class InvalidConfigError(SpecDockError):
    code = "invalid-config"


class EmptyTextError(SpecDockError):
    code = "empty-text"


class ShapeMismatchError(SpecDockError):
    code = "shape-mismatch"


class LabelOutOfRangeError(SpecDockError):
    code = "label-out-of-range"


class EmptyBatchError(SpecDockError):
    code = "empty-batch"


class EmptyDatasetError(SpecDockError):
    code = "empty-dataset"


class NanGradientError(SpecDockError):
    code = "nan-in-gradient"


class StepOutOfRangeError(SpecDockError):
    code = "step-out-of-range"


class AnchorMismatchError(SpecDockError):
    code = "anchor-mismatch"


class CorruptIndexError(SpecDockError):
    code = "corrupt-index"


class DimMismatchError(SpecDockError):
    code = "dim-mismatch"


class ZeroVectorSpecError(SpecDockError):
    code = "zero-vector-spec"


class NotFoundError(SpecDockError):
    code = "not-found"


class BadMagicError(SpecDockError):
    code = "bad-magic"


class TruncatedError(SpecDockError):
    code = "truncated"


class HeaderJsonInvalidError(SpecDockError):
    code = "header-json-invalid"


class PayloadLengthMismatchError(SpecDockError):
    code = "payload-length-mismatch"


class ZeroVectorError(SpecDockError):
    code = "zero-vector"


class LengthMismatchError(SpecDockError):
    code = "length-mismatch"


class InvalidDimsError(SpecDockError):
    code = "invalid-dims"


class BadRequestError(SpecDockError):
    code = "bad-request"
