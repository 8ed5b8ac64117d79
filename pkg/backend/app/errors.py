from typing import Optional


class CorefError(Exception):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ParseError(CorefError):
    def __init__(self, detail: str, line_number: Optional[int] = None):
        if line_number is not None:
            detail = f"line {line_number}: {detail}"
        super().__init__(detail)
        self.line_number = line_number


class AnnotationError(CorefError):
    def __init__(self, detail: str, entity_id: Optional[str] = None):
        if entity_id is not None:
            detail = f"entity {entity_id}: {detail}"
        super().__init__(detail)
        self.entity_id = entity_id


class ConfigurationError(CorefError):
    pass


class FormatError(CorefError):
    pass


class EncodingError(CorefError):
    pass


class DecodeError(CorefError):
    def __init__(self, detail: str, position: int):
        super().__init__(f"token {position}: {detail}")
        self.position = position


class NoValidPathError(CorefError):
    pass


class InvalidPathError(CorefError):
    def __init__(self, detail: str, position: int):
        super().__init__(f"transition into token {position}: {detail}")
        self.position = position


class WindowError(CorefError):
    pass


class SamplingError(CorefError):
    pass


class TrainingError(CorefError):
    pass


class CheckpointError(CorefError):
    pass
