"""Exception hierarchy shared by all modules."""


class SemRobeError(Exception):
    """Base class for every error raised by this package."""


# template engine
class MalformedTemplate(SemRobeError, ValueError):
    pass


class UnknownLabel(SemRobeError, ValueError):
    pass


class DuplicateToken(SemRobeError, ValueError):
    pass


class EmptyWordList(SemRobeError, ValueError):
    pass


class UnresolvedToken(SemRobeError, KeyError):
    pass


class ExpansionCapExceeded(SemRobeError, RuntimeError):
    pass


# embeddings
class DimensionMismatch(SemRobeError, ValueError):
    pass


class DuplicateWord(SemRobeError, ValueError):
    pass


class NonFiniteValue(SemRobeError, ValueError):
    pass


class WordNotInVocab(SemRobeError, KeyError):
    pass


class NormNotSupported(SemRobeError, ValueError):
    pass


class VocabTooSmall(SemRobeError, ValueError):
    pass


# model / training
class InvalidShape(SemRobeError, ValueError):
    pass


class ShapeMismatch(SemRobeError, ValueError):
    pass


class EmptyDataset(SemRobeError, ValueError):
    pass


class LabelOutOfRange(SemRobeError, ValueError):
    pass


class CorruptFile(SemRobeError, ValueError):
    pass


class VersionMismatch(SemRobeError, ValueError):
    pass


# assessment / data
class InvalidTau(SemRobeError, ValueError):
    pass


class IdMismatch(SemRobeError, ValueError):
    pass


class EmptyCorpus(SemRobeError, ValueError):
    pass


class InsufficientSamples(SemRobeError, ValueError):
    pass


class InvalidFraction(SemRobeError, ValueError):
    pass
