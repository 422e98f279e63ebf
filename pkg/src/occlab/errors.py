"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    pass


class ConfigurationError(ToolkitError):
    pass


class ShapeError(ToolkitError):
    pass


class InvalidPoseError(ToolkitError):
    pass


class DegenerateInputError(ToolkitError):
    pass


class EmptyModelError(ToolkitError):
    pass


class InvalidTrackError(ToolkitError):
    pass


class ValidationError(ToolkitError):
    pass


class ParseError(ToolkitError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class LoadError(ToolkitError):
    pass


class PipelineError(ToolkitError):
    def __init__(self, stage, frame, cause):
        super().__init__(f"stage '{stage}' failed at frame {frame}: {cause}")
        self.stage = stage
        self.frame = frame
        self.cause = cause
