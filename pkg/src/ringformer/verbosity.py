from enum import IntEnum


class VerbosityLevel(IntEnum):
    """Verbosity levels for engine output."""
    QUIET = 0    # Show nothing
    BASIC = 1    # Progress bars and summaries
    DETAILED = 2 # Per-stage details

    @classmethod
    def from_flags(cls, verbose: int = 0, quiet: bool = False) -> 'VerbosityLevel':
        if quiet:
            return cls.QUIET
        return cls(min(cls.BASIC + verbose, cls.DETAILED))
