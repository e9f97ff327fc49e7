#!/usr/bin/env python3
"""
Exception hierarchy for the MD cell toolkit
Library code raises these, the CLI maps them to exit codes
"""

from typing import Optional


class MDCellsError(Exception):
    """Base class for all toolkit errors"""


class ContractViolation(MDCellsError, ValueError):
    """Arguments violate an operation's preconditions"""


class DivergedRunError(MDCellsError, FloatingPointError):
    """A NaN or Inf showed up in a forward or backward pass"""

    def __init__(self, message: str, position: Optional[str] = None):
        super().__init__(message if position is None else f"{message} at {position}")
        self.position = position


class InfeasibleTargetError(MDCellsError, ValueError):
    """A CTC target needs more frames than the posterior sequence has"""

    def __init__(self, target_length: int, required_frames: int, frames: int):
        super().__init__(
            f"target of length {target_length} needs {required_frames} frames, got {frames}"
        )
        self.target_length = target_length
        self.required_frames = required_frames
        self.frames = frames
        self.loss = float('inf')


class CorpusError(MDCellsError):
    """A corpus record could not be read"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = path or ''
        if line is not None:
            location = f"{location}:{line}"
        super().__init__(f"{location}: {message}" if location else message)
        self.path = path
        self.line = line
