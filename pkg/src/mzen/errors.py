"""Exception hierarchy shared by every module."""


class MZENError(Exception):
    """Base class for all package errors."""


class ShapeError(MZENError, ValueError):
    """Operands or inputs have incompatible shapes."""

    def __init__(self, message, *shapes):
        super().__init__(message)
        self.shapes = shapes


class GraphError(MZENError, RuntimeError):
    """Misuse of a computation graph (e.g. backward before forward)."""


class NumericalError(MZENError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""

    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


class PhaseViolation(MZENError, RuntimeError):
    """A phase tried to touch an image or parameter group it may not use."""

    def __init__(self, message, phase=None):
        super().__init__(message)
        self.phase = phase


class ManifestError(MZENError, ValueError):
    """A dataset manifest or checkpoint file is malformed."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DataError(MZENError, ValueError):
    """Inputs are inconsistent with the requested operation."""
