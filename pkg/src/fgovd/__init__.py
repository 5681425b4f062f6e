"""Dynamic-vocabulary benchmark builder and evaluator for fine-grained
open-vocabulary detection."""

__version__ = "0.1.0"
