"""
Exception hierarchy shared by the library and the CLI.
"""

from pathlib import Path
from typing import Any, Dict, Optional


class MaggieError(Exception):
    """Base class for every error raised by the package"""


class InputValidationError(MaggieError, ValueError):
    """Shape, range or bounds violation on an input"""


class CapacityError(InputValidationError):
    """More instances than the embedding table can address"""


class ConfigError(MaggieError):
    """Invalid run configuration"""


class CompatibilityError(MaggieError):
    """Checkpoint and configuration disagree on the architecture"""


class GenerationError(MaggieError):
    """Dataset synthesis could not satisfy its constraints"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingError(MaggieError):
    """Training aborted (non-finite loss and similar)"""

    def __init__(self, message: str, dump_path: Optional[Path] = None):
        super().__init__(message)
        self.dump_path = dump_path
