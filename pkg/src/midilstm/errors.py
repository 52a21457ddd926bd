"""Exception hierarchy shared across the toolkit.

Every data-level failure raises a subclass of ``DataError`` so the CLI can
map them to a single exit code; check-style failures (gradient check,
round-trip verification) are reported through return values instead.
"""


class DataError(Exception):
    """Base class for all typed data errors raised by this package."""


# --- MIDI file format ---

class MidiError(DataError):
    """Base class for Standard MIDI File read/write errors."""


class EmptyStream(MidiError):
    pass


class UnterminatedVlq(MidiError):
    pass


class ValueOutOfRange(MidiError):
    pass


class BadHeader(MidiError):
    pass


class TruncatedChunk(MidiError):
    pass


class UnsupportedFormat(MidiError):
    pass


class BadEvent(MidiError):
    pass


class InvariantViolation(MidiError):
    pass


# --- score extraction ---

class NoNotes(DataError):
    pass


# --- corpus / tokens ---

class EmptyCorpus(DataError):
    pass


class BadToken(DataError):
    pass


class BadCorpusFile(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


# --- numerics / model ---

class ShapeMismatch(DataError):
    pass


class StaleCache(DataError):
    pass


# --- training / generation ---

class EmptyDataset(DataError):
    pass


class VocabMismatch(DataError):
    pass


class BadCheckpoint(DataError):
    pass


class CorpusTooShort(DataError):
    pass


class OovSeedToken(DataError):
    pass


# --- CLI ---

class NoUsableFiles(DataError):
    pass
