"""Exception hierarchy shared by the pipeline stages.

Data problems (bad input files, violated invariants) derive from
``DataError``; configuration mistakes from ``ConfigError``; broken internal
guarantees such as train/test leakage from ``PipelineAssertion``. The CLI maps
these families onto exit codes 2, 1 and 3.
"""


class AppScreenError(Exception):
    pass


class DataError(AppScreenError):
    pass


class ConfigError(AppScreenError):
    pass


class PipelineAssertion(AppScreenError):
    pass


class MalformedEvent(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicatePackage(DataError):
    def __init__(self, package: str):
        super().__init__(f"duplicate catalog row for package {package!r}")
        self.package = package


class ReservedCategory(DataError):
    def __init__(self, package: str):
        super().__init__(f"package {package!r} assigned the reserved category 'Smartphone'")
        self.package = package


class UnsortedInput(DataError):
    pass


class NegativeDuration(DataError):
    pass


class EmptyReferenceGroup(DataError):
    pass


class UnknownParticipant(DataError):
    pass


class ItemOutOfRange(DataError):
    pass


class KTooLarge(ConfigError):
    pass


class DepthOutOfRange(ConfigError):
    pass


class DegenerateLabels(DataError):
    pass


class SingleClassTrainingSet(DataError):
    pass


class FoldsExceedSamples(ConfigError):
    pass


class FeatureContractError(DataError):
    pass


class EmptyReport(DataError):
    pass


class TooManyFeatures(ConfigError):
    def __init__(self, d: int, d_max: int):
        super().__init__(f"{d} features exceeds exact-enumeration limit {d_max}")
        self.d = d
        self.d_max = d_max


class InconsistentContract(DataError):
    pass


class LeakageDetected(PipelineAssertion):
    pass
