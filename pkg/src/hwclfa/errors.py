"""Exception types raised across the toolkit."""


class HwclfaError(Exception):
    """Base class for all toolkit errors."""


# ingest
class MalformedHeader(HwclfaError):
    pass


class TooFewSamples(HwclfaError):
    pass


class NonMonotonicTime(HwclfaError):
    pass


class EmptyStream(HwclfaError):
    pass


class MissingFile(HwclfaError):
    pass


class DuplicateEntry(HwclfaError):
    pass


# render
class DegenerateTime(HwclfaError):
    pass


class SeriesTooShort(HwclfaError):
    pass


class DegenerateExtent(HwclfaError):
    pass


# prototypes
class UnknownState(HwclfaError):
    pass


class EncoderWidthMismatch(HwclfaError):
    pass


# tensor / backbone / adapter
class ShapeMismatch(HwclfaError):
    pass


class EvenKernel(HwclfaError):
    pass


class NonScalarLoss(HwclfaError):
    pass


class IndivisibleSize(HwclfaError):
    pass


class ConfigMismatch(HwclfaError):
    pass


class UnknownMode(HwclfaError):
    pass


class EmptyLayerList(HwclfaError):
    pass


# trainer
class SingleClassTask(HwclfaError):
    pass


class EmptyTask(HwclfaError):
    pass


class ManifestMismatch(HwclfaError):
    pass


class TruncatedBlob(HwclfaError):
    pass


# evaluator
class SingleClass(HwclfaError):
    pass


class UncategorizedTask(HwclfaError):
    pass


class MissingCheckpoint(HwclfaError):
    pass
