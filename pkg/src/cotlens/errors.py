"""Exception types shared across the toolkit.

Data-dependent failures raise subclasses of CotlensError so the CLI can map
them to a nonzero-but-not-usage exit code. Programming errors (bad arguments
to library functions) raise ValueError as usual.
"""


class CotlensError(Exception):
    """Base class for data and backend errors raised by this package."""


class CorpusLoadError(CotlensError):
    """Corpus file unreadable, or a malformed line in strict mode."""


class SidecarError(CotlensError):
    """Hidden-state sidecar metadata or payload is unusable."""


class InconsistentLogprobsError(CotlensError):
    """Top-k probabilities sum to more than one beyond tolerance."""


class MissingDataError(CotlensError):
    """A record lacks the fields an operation needs (e.g. empty top-k)."""


class CohortMissingError(CotlensError):
    """A requested cohort has no members."""

    def __init__(self, cohort: str):
        super().__init__(f"cohort has no traces: {cohort}")
        self.cohort = cohort


class SampleSizeError(CotlensError):
    """Too few samples for the estimator to be meaningful."""


class DegenerateDataError(CotlensError):
    """Sample geometry defeats the bandwidth heuristic (zero median distance)."""


class MissingAnswerError(CotlensError):
    """No answer embedding available for proxy scoring."""


class LengthMismatchError(CotlensError):
    """Two aligned structures disagree on length."""


class CapabilityError(CotlensError):
    """The backend does not declare (or failed to demonstrate) a capability."""


class BackendError(CotlensError):
    """Transport or protocol failure talking to an inference backend."""


class ImpossibleObservationError(CotlensError):
    """Bayes update received an observation with zero total mass."""


class InconclusiveError(CotlensError):
    """A simulation produced no usable trials (everything censored)."""
