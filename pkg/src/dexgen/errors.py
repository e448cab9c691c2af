"""Exception hierarchy shared by every stage of the pipeline."""


class DexgenError(Exception):
    """Base class. ``exit_code`` is what the CLI returns when this escapes."""

    exit_code = 4


class InputError(DexgenError):
    exit_code = 2


class GenerationError(DexgenError):
    exit_code = 3


class InternalError(DexgenError):
    exit_code = 4


# geometry
class DegenerateCloud(InputError):
    pass


class EmptyInput(InputError):
    pass


class DegenerateHands(InputError):
    pass


# ingest / config
class FormatError(InputError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class MissingAsset(InputError):
    pass


class InvariantViolation(InputError):
    pass


class InvalidRate(InputError):
    pass


class ConfigError(InputError):
    pass


# schedule
class ScheduleConflict(InternalError):
    def __init__(self, embodiment, frame, message=""):
        self.embodiment = embodiment
        self.frame = frame
        super().__init__(message or f"double write on embodiment {embodiment} at frame {frame}")


class ExecutorFailure(GenerationError):
    def __init__(self, task_index, subaction_index, cause):
        self.task_index = task_index
        self.subaction_index = subaction_index
        self.cause = cause
        super().__init__(f"task {task_index} subaction {subaction_index}: {cause}")
        if isinstance(cause, DexgenError):
            self.exit_code = cause.exit_code


# grasp
class JointLimit(InputError):
    pass


class NoConverge(GenerationError):
    def __init__(self, message, objective=None):
        self.objective = objective
        super().__init__(message)


class InvalidFingerCount(InputError):
    pass


class EmbodimentMismatch(InputError):
    pass


class NoStableGrasp(GenerationError):
    def __init__(self, errors, message=None):
        self.errors = list(errors)
        super().__init__(message or f"no stable grasp among {len(self.errors)} candidates: {self.errors}")


# motion / augment
class AssemblyGap(InternalError):
    def __init__(self, embodiment, frame):
        self.embodiment = embodiment
        self.frame = frame
        super().__init__(f"embodiment {embodiment} has no state at frame {frame}")


class WorkspaceViolation(GenerationError):
    pass


class ContactUnreachable(GenerationError):
    pass


class MissingNormals(InputError):
    pass


# filter
class JudgeUnavailable(DexgenError):
    pass
