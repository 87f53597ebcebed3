"""Exception types; the CLI maps each to an exit code."""

from __future__ import annotations

from pathlib import Path


class InputError(ValueError):
    """Malformed or inconsistent input, optionally located in a file."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.message = message
        self.path = Path(path) if path is not None else None
        self.line = line
        self.column = column

    def __str__(self):
        loc = ""
        if self.path is not None:
            loc = str(self.path)
            if self.line is not None:
                loc += f":{self.line}"
                if self.column is not None:
                    loc += f":{self.column}"
            loc += ": "
        return loc + self.message


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""
