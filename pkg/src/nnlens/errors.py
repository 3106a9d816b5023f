"""Exception hierarchy shared by all nnlens modules."""


class NnlensError(Exception):
    """Base class for every error raised by nnlens."""


class DimensionError(NnlensError, ValueError):
    pass


class ContractError(NnlensError, ValueError):
    """A documented precondition of an operation was violated."""


class VocabularyError(NnlensError, ValueError):
    pass


class CapabilityError(NnlensError, NotImplementedError):
    """An operation has no decomposition rule (or is otherwise unsupported)."""


class GenerationError(NnlensError, ValueError):
    pass


class CorpusFormatError(NnlensError, ValueError):
    pass


class FormatError(NnlensError, ValueError):
    """A binary file does not follow the expected layout."""


class ActivationKeyError(NnlensError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class EntryLookupError(NnlensError, LookupError):
    pass


class ConfigError(NnlensError, ValueError):
    pass


class MissingArtifactError(NnlensError, FileNotFoundError):
    pass
