"""Exception types shared across the protocol suite.

Verification failures are *verdicts*, not exceptions (see ``verifiability``);
exceptions are reserved for contract violations and unavailable resources.
"""


class ProtocolError(Exception):
    """Base class for every error raised by this package."""


class MalformedIdentifier(ProtocolError):
    """Identifier string violates the two-part token grammar."""


class MalformedRecord(ProtocolError):
    """A serialized artifact could not be decoded into a valid value."""


class InvalidDocument(ProtocolError):
    """An ID document violates one of its structural invariants."""


class DuplicateAttributeName(ProtocolError):
    """Attribute with this name already present in the document."""


# -- lineage ---------------------------------------------------------------

class UnknownIdentifier(ProtocolError):
    """Identifier not present in the store."""


class UnknownParent(ProtocolError):
    """Branch parent missing from the lineage store."""


class UnknownConstituent(ProtocolError):
    """Merge constituent missing from the lineage store."""


class DuplicateConstituents(ProtocolError):
    """Merge constituents must be distinct."""


# -- keys ------------------------------------------------------------------

class DuplicateKeyId(ProtocolError):
    """key_id already registered for this author."""


class UnknownKey(ProtocolError):
    """No such key registered for this author."""


class AlreadyRevoked(ProtocolError):
    """Revocation is permanent; a key cannot be revoked twice."""


class RevokedKey(ProtocolError):
    """Operation requires an active key but the key is revoked."""


class NoActiveKey(ProtocolError):
    """The registry has no active signing key installed."""


# -- manifests -------------------------------------------------------------

class ChainAuthorMismatch(ProtocolError):
    """Previous manifest in a chain was signed by a different author."""


class ChainIdentifierMismatch(ProtocolError):
    """Previous manifest in a chain binds a different identifier."""


# -- disclosure ------------------------------------------------------------

class UnverifiedInput(ProtocolError):
    """redact() refuses to operate on an ID that fails verification."""


# -- registry --------------------------------------------------------------

class NotFound(ProtocolError):
    """Record absent, possibly past its retention horizon (detail='expired')."""

    def __init__(self, message: str, detail: str = "unknown"):
        super().__init__(message)
        self.detail = detail


class DuplicateReportId(ProtocolError):
    """Incident report_id already used."""


class UnknownInstanceClass(ProtocolError):
    """Instance-class scope names a predicate token that is not registered."""


class RegistryUnavailable(ProtocolError):
    """The registry cannot be reached over the configured transport."""


# -- gatekeeper ------------------------------------------------------------

class NoAuthorInfo(ProtocolError):
    """Notification requires the presented ID to carry author information."""


# -- harness ---------------------------------------------------------------

class ConfigInvalid(ProtocolError):
    """Simulation configuration violates its invariants."""
