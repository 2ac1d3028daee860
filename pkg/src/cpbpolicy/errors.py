"""Exception hierarchy shared by every module."""


class CPBError(Exception):
    """Base class for all package errors."""


class ArgumentError(CPBError, ValueError):
    """An argument is outside its documented range."""


class SchemaError(CPBError):
    """A named column is missing or unknown."""


class ParseError(CPBError):
    """A cell could not be parsed as a finite number."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class PositivityError(CPBError):
    """A treatment arm is empty where both arms are required."""


class NumericError(CPBError, ArithmeticError):
    """A numerical procedure cannot produce a finite answer."""
