# src/harbench/errors.py
"""
Error types raised by harbench.

Library code raises these; the search loop records
them per experiment and the CLI maps them to exit
codes.
"""

#


class HarbenchError(Exception):
  """Base class for all harbench errors."""


class RejectedInputError(HarbenchError, ValueError):
  """Input tensor, label or range is invalid."""


class FrameTooShortError(RejectedInputError):
  """
  A frame has fewer samples than a convolution,
  pooling or window stage needs.
  """


class RejectedConfigError(HarbenchError, ValueError):
  """A configuration value is out of its domain."""


class IngestionError(HarbenchError, OSError):
  """
  Dataset files are missing or garbled.

  Attributes
  ----------
  missing : list[str]
      The files that could not be found or parsed.
  """

  def __init__(
    self, message: str, missing: list[str] | None = None
  ) -> None:
    super().__init__(message)
    self.missing = missing or []


class UndefinedMetricError(HarbenchError, ValueError):
  """A metric was requested on an empty matrix."""


class DivergenceError(HarbenchError, ArithmeticError):
  """Loss or gradients became non-finite."""


class SinkWriteError(HarbenchError, OSError):
  """An experiment record could not be persisted."""
