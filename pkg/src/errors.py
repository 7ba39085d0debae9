"""Exception hierarchy for idp-lab.

Every domain error derives from IDPLabError and from the closest builtin,
so callers that catch ValueError / RuntimeError keep working.
"""


class IDPLabError(Exception):
    """Base class for all idp-lab errors."""


class ShapeError(IDPLabError, ValueError):
    """Operand extents do not line up."""


class NonFiniteError(IDPLabError, ArithmeticError):
    """An operation produced NaN or Inf."""


class MaskError(IDPLabError, ValueError):
    """An attention row has no unmasked entry."""


class TraceError(IDPLabError, RuntimeError):
    """Gradient trace misuse: non-scalar loss or replaying a consumed trace."""


class SequenceOverflowError(IDPLabError, ValueError):
    """Total sequence length exceeds the model's max_seq_len."""


class LayoutError(IDPLabError, ValueError):
    """Invalid segment layout, or a layout that does not match the embeddings."""


class ConfigError(IDPLabError, ValueError):
    """Invalid configuration value (unknown kind, out-of-range bits, rank, ...)."""


class VocabularyError(IDPLabError, IndexError):
    """Token index outside the vocabulary, or vocabulary too small for a task."""


class ContainerError(IDPLabError, ValueError):
    """Malformed or mismatched tensor container file."""


class SelectionError(IDPLabError, ValueError):
    """Prompt selection could not be performed."""


class EvaluationError(IDPLabError, ValueError):
    """Evaluation input is empty or malformed."""
