"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RecLabError(Exception):
    """Base class for every error raised by this package."""


# --- domain model ---------------------------------------------------------

class EmptyTitleError(RecLabError):
    """A title normalized to the empty string."""


class InvalidItemError(RecLabError):
    """A recommendation item failed validation; `field` names the culprit."""

    def __init__(self, field: str, message: str | None = None):
        self.field = field
        super().__init__(message or f"invalid item field: {field}")


# --- corpus / index -------------------------------------------------------

class CorpusError(RecLabError):
    """Base class for corpus ingestion failures."""


class EmptyCorpusError(CorpusError):
    pass


class DuplicateDocIdError(CorpusError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"duplicate doc_id: {doc_id}")


class UntokenizableDocumentError(CorpusError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"document tokenizes to nothing: {doc_id}")


class CorpusFormatError(CorpusError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"corpus line {line_number}: {message}")


class UnknownDocError(RecLabError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"unknown doc_id: {doc_id}")


# --- engines --------------------------------------------------------------

class EmptyQueryError(RecLabError):
    """Query text tokenized to nothing."""


class StereotypeUnconfiguredError(RecLabError):
    """The stereotype engine has no configured list."""


class ExternalEngineError(RecLabError):
    """Base class for remote engine call failures."""


class DeadlineExceededError(ExternalEngineError):
    """No usable response arrived within the deadline."""


class TransportError(ExternalEngineError):
    """Connection-level failure talking to a remote engine."""


class InvalidPayloadError(ExternalEngineError):
    """Remote engine answered, but the body was unusable."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"invalid engine payload: {reason}")


# --- gateway / registry ---------------------------------------------------

class ValidationError(RecLabError):
    """A registered entity violated an invariant; `field` names it."""

    def __init__(self, field: str, message: str | None = None):
        self.field = field
        super().__init__(message or f"validation failed: {field}")


class DuplicateIdError(RecLabError):
    def __init__(self, entity_id: str):
        self.entity_id = entity_id
        super().__init__(f"id already registered: {entity_id}")


class AuthError(RecLabError):
    """Unknown caller or bad key."""


class UnknownClickTargetError(RecLabError):
    """Click does not reference a delivered recommendation item."""


class NoAllocationError(RecLabError):
    """Partner has no allocation configured, so no engine can be assigned."""


# --- event store ----------------------------------------------------------

class StorageError(RecLabError):
    """Base class for event store failures."""


class DuplicateSetIdError(StorageError):
    def __init__(self, set_id: str):
        self.set_id = set_id
        super().__init__(f"impression already stored: {set_id}")


class UnknownImpressionError(StorageError):
    """Click references a set/position that was never delivered."""


class StorageUnavailableError(StorageError):
    """The append could not be made durable."""


class MalformedLineError(StorageError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"event line {line_number}: {message}")


class ImportStateError(StorageError):
    """Import target already holds records."""


class ReferentialViolationError(StorageError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"event line {line_number}: {message}")


# --- analytics ------------------------------------------------------------

class NoImpressionsError(RecLabError):
    """CTR is undefined when nothing was delivered."""


class UnknownFormatError(RecLabError):
    def __init__(self, fmt: str):
        self.fmt = fmt
        super().__init__(f"unknown report format: {fmt}")


# --- simulation / config --------------------------------------------------

class ConfigError(RecLabError):
    """A config file or simulation config is invalid."""
