"""Exception hierarchy shared across the package.

Everything raised on purpose derives from StashError so callers (and the
CLI exit-code mapping) can catch one base class. sqlite3 and OS errors are
wrapped where they cross a public boundary, never swallowed.
"""


class StashError(Exception):
    """Base class for all errors raised by this package."""


class StoreError(StashError):
    """Storage-layer failure (I/O, constraint, corruption)."""


class SchemaVersionError(StoreError):
    """Store file carries a schema version this build does not know."""


class DimensionMismatchError(StashError):
    """Vector dimension differs from the store's configured dimension."""


class EmptyDocumentError(StoreError):
    """add_document called with no chunks."""


class MissingDocumentError(StoreError):
    """Referenced document id does not exist."""


class EmptyInputError(StashError):
    """Chunker called on empty or whitespace-only text."""


class EmptyIndexError(StashError):
    """Search requested against an index with no entries."""


class EmptyQueryError(StashError):
    """Query contains no indexable terms after normalization."""


class UnknownTextError(StashError):
    """Precomputed embedding lookup missed: text digest not in the file."""


class PrecomputedFormatError(StashError):
    """Precomputed embedding file is malformed."""


class BundleError(StashError):
    """Evaluation bundle is missing files or fails to parse."""


class MissingPositiveError(StashError):
    """Mining was asked to build triples for a chunk that does not exist."""


class LimitError(StashError):
    """A configured resource limit was exceeded; the operation was refused."""


class MissingComponentError(StashError):
    """An optional external component (e.g. the trainer) is not installed."""


class StoreConfigWarning(UserWarning):
    """Store config blob contains keys this build does not recognize."""
