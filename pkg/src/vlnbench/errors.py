"""Exception types shared across the harness."""

from __future__ import annotations


class VLNError(Exception):
    """Base class for every harness error."""


# world
class GraphNotFound(VLNError):
    pass


class GraphMalformed(VLNError):
    pass


class UnknownViewpoint(VLNError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else "unknown viewpoint"


class Unreachable(VLNError):
    pass


class MalformedCaptionPayload(VLNError):
    pass


# observation
class NonFiniteHeading(VLNError, ValueError):
    pass


class MissingAssets(VLNError):
    pass


class UnsupportedFormat(VLNError):
    pass


# tasks
class SplitNotFound(VLNError):
    pass


class EpisodeInvalid(VLNError):
    def __init__(self, episode_id: str, reason: str):
        super().__init__(f"{episode_id}: {reason}")
        self.episode_id = episode_id
        self.reason = reason


class InsufficientPool(VLNError):
    pass


# models
class ModelUnavailable(VLNError):
    pass


class TransportError(ModelUnavailable):
    pass


class AuthMissing(ModelUnavailable):
    pass


class ContextOverflow(ModelUnavailable):
    pass


class ScriptExhausted(ModelUnavailable):
    pass


# registry / runner
class DuplicateId(VLNError):
    pass


class UnknownComponent(VLNError):
    pass


class UnknownKind(VLNError):
    pass


class ConfigInvalid(VLNError):
    pass


# parser
class NoActionFound(VLNError):
    pass


class InvalidAction(VLNError):
    UNKNOWN_MARKER = "UnknownMarker"
    EMPTY_BUCKET = "EmptyBucket"
    AMBIGUOUS_BUCKET = "AmbiguousBucket"

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


# metrics
class NonContiguousPath(VLNError):
    pass
