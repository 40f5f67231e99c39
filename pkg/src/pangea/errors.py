"""Exception types raised by the engine, grouped by subsystem."""


class PangeaError(Exception):
    """Base class for all engine errors."""


# --- locality set registry ---

class DuplicateName(PangeaError):
    pass


class PageSizeExceedsPool(PangeaError):
    pass


class SetNotFound(PangeaError):
    pass


class LifetimeEndedError(PangeaError):
    """Operation requires an alive set."""


class PagesStillPinned(PangeaError):
    pass


# --- buffer pool ---

class ZeroCapacity(PangeaError):
    pass


class EvictionExhausted(PangeaError):
    """No unpinned page exists anywhere and space is still insufficient."""


class PageUnknown(PangeaError):
    pass


class MissingImage(PangeaError):
    """Page is neither resident nor on disk; the data is gone."""


class NotPinned(PangeaError):
    pass


class PagePinned(PangeaError):
    pass


class NotResident(PangeaError):
    pass


# --- paging ---

class NoEvictablePage(PangeaError):
    pass


class PolicyBlocked(PangeaError):
    """DBMIN refuses service: total desired size exceeds pool size."""


class NonPositiveInterval(PangeaError):
    pass


# --- file store ---

class IoFailure(PangeaError):
    pass


class SizeMismatch(PangeaError):
    pass


class PageNotOnDisk(PangeaError):
    pass


class CorruptMeta(PangeaError):
    pass


# --- services ---

class RecordLargerThanPage(PangeaError):
    pass


class RecordLargerThanSmallPage(PangeaError):
    pass


class KeyLargerThanPage(PangeaError):
    """Hash entry exceeds the largest in-page slab class."""


# --- placement ---

class TargetNotEmpty(PangeaError):
    pass


class ObjectSetMismatch(PangeaError):
    pass


class InvalidArgs(PangeaError):
    pass


class NoSurvivingReplica(PangeaError):
    pass


class UnrecoverableObjects(PangeaError):
    """An object existed only on the failed node; replication invariants were broken."""


# --- cluster simulator ---

class NodeDown(PangeaError):
    pass


class UnknownNode(PangeaError):
    pass


class InsufficientDiskSpace(PangeaError):
    pass
