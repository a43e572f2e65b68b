"""Shared exception types."""


class MentorCollabError(Exception):
    """Base class for all package errors."""


class EmptyStream(MentorCollabError):
    pass


class EmptyDistribution(MentorCollabError):
    pass


class EmptyTrace(MentorCollabError):
    pass


class EmptyBatch(MentorCollabError):
    pass


class EmptyRun(MentorCollabError):
    pass


class BackendUnavailable(MentorCollabError):
    pass


class ScriptMiss(BackendUnavailable):
    """A scripted mock was asked about a context it has no entry for.

    Subclass of BackendUnavailable so engine error handling treats it as a
    hard backend failure, but distinguishable in fixtures.
    """


class CapabilityMissing(MentorCollabError):
    pass


class DimensionError(MentorCollabError):
    pass


class SingleClassError(MentorCollabError):
    pass


class NonFiniteGradient(MentorCollabError):
    pass


class TemplateMissing(MentorCollabError):
    pass


class ConfigError(MentorCollabError):
    pass


class CheckpointFormatError(MentorCollabError):
    pass
