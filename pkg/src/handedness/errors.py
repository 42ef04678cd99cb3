"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
3 for data validation failures, 4 for numerical failures.
"""


class HandednessError(Exception):
    exit_code = 1


class DataError(HandednessError):
    exit_code = 3


class NumericalError(HandednessError):
    exit_code = 4


# ingestion
class EmptyTrial(DataError):
    pass


class NonMonotonicTime(DataError):
    pass


class MalformedRow(DataError):
    pass


class MissingFile(DataError):
    pass


class DuplicateTrialKey(DataError):
    pass


class UnknownSubject(DataError):
    pass


class EmptyTally(DataError):
    pass


# signals / strokes
class CutoffOutOfRange(DataError):
    pass


class SignalTooShort(DataError):
    pass


class TrialTooShort(DataError):
    pass


class StrokeTooShort(DataError):
    pass


# learning
class SingleClassLabels(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class FeatureMismatch(DataError):
    pass


class EmptyCluster(DataError):
    pass


class MissingHand(DataError):
    pass


class EmptySet(DataError):
    pass


class DivergedLoss(NumericalError):
    pass


# evaluation
class ClassTooSmall(DataError):
    pass


class TooFewSubjects(DataError):
    pass


class LengthMismatch(DataError):
    pass


class TooFewSamples(DataError):
    pass


class OutOfRange(DataError):
    pass


class NonPositiveY(DataError):
    pass


class RankDeficient(NumericalError):
    pass


class ConvexFit(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class InvalidProfile(DataError):
    pass
