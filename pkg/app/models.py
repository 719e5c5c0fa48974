import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field

from mathstruct import __version__
from mathstruct.errors import ArtifactIOError

MANIFEST_NAME = "manifest.json"


class RunManifest(BaseModel):
    command: str
    argv: List[str]
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    # sha256 of every deterministic output file, keyed like outputs
    digests: Dict[str, str] = Field(default_factory=dict)
    seed: int = 0
    version: str = __version__

    def save(self, path: Union[str, Path]) -> None:
        try:
            Path(path).write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(str(path), e.strerror or str(e)) from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        try:
            return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as e:
            raise ArtifactIOError(str(path), e.strerror or str(e)) from e


class ReplayResult(BaseModel):
    command: str
    reproduced: bool
    mismatched: List[str] = Field(default_factory=list)


class ErrorLine(BaseModel):
    error: str
    message: str


def manifest_path(output: Union[str, Path]) -> Path:
    """Directory outputs get manifest.json inside; file outputs get <file>.manifest.json."""
    output = Path(output)
    if output.is_dir():
        return output / MANIFEST_NAME
    return output.with_name(output.name + ".manifest.json")


def file_digest(path: Union[str, Path]) -> Optional[str]:
    path = Path(path)
    if not path.is_file():
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()
