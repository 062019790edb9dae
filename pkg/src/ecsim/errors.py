"""Shared exception types."""


class SchemaError(ValueError):
    """An input file or mapping does not match the documented schema."""


class ModelInvalidError(ValueError):
    """An operation required a structurally valid event-chain model.

    Carries the validation findings that made the model unusable.
    """

    def __init__(self, message, findings):
        super().__init__(message)
        self.findings = list(findings)
