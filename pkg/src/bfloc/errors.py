"""Exception hierarchy. Everything raised on purpose derives from BflocError
so the CLI can turn it into a single-line ``error[Class]: message`` exit."""


class BflocError(Exception):
    """Base class for all bfloc errors."""


class SchemaError(BflocError):
    """Input file is missing required columns."""


class ParseError(BflocError):
    """A row could not be parsed; the message names the line."""


class ValidationError(BflocError):
    """A parsed value violates its documented range."""


class FormatError(BflocError):
    """A binary container does not start with the expected magic/structure."""


class VersionError(FormatError):
    """A binary container was written by an unsupported format version."""


class TruncationError(FormatError):
    """A binary container ends before the section being read is complete."""


class DivergenceError(BflocError):
    """Training produced a non-finite loss; message carries epoch/batch."""


class UnknownIdentifierError(BflocError):
    """A raw identifier (or building/floor pair) is outside the closed world
    the model was trained on."""
