"""Exception hierarchy shared by the pipeline stages and the CLI."""
from pathlib import Path
from typing import List, Optional


class TTSOpsError(Exception):
    """Base error; ``exit_code`` is what the CLI returns for it."""

    exit_code: int = 1


class ConfigError(TTSOpsError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(TTSOpsError):
    """Input data violates a contract (manifests, score maps, vectors)."""

    exit_code = 3


class ManifestError(DataError):
    """A manifest file could not be parsed or validated."""

    def __init__(
        self,
        message: str,
        path: Optional[Path] = None,
        line: Optional[int] = None
    ):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        elif line is not None:
            location = f"line {line}: "
        super().__init__(f"{location}{message}")


class StageError(TTSOpsError):
    """A pipeline or loop stage failed.

    Carries the stage name and, for pipeline runs, the artifacts written by
    stages that completed before the failure.
    """

    exit_code = 4

    def __init__(
        self,
        stage: str,
        message: str,
        variant: Optional[str] = None,
        completed: Optional[List[Path]] = None
    ):
        self.stage = stage
        self.variant = variant
        self.completed = list(completed or [])
        tag = f"[{stage}]" if variant is None else f"[{stage}:{variant}]"
        super().__init__(f"{tag} {message}")
