import re
from pathlib import Path
from typing import List, Optional, Tuple, Union

from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.config import ModelConfig
from ..nn.params import ParameterSet
from ..observability.telemetry_collector import TelemetryCollector

_STEP_FILE = re.compile(r"^checkpoint-step(\d+)\.mfmr$")
FINAL_NAME = "checkpoint-final.mfmr"


class CheckpointManager:
    """Checkpoint files of one training run inside an output directory."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.telemetry = TelemetryCollector("checkpoint")

    def path_for(self, step: Optional[int] = None) -> Path:
        name = FINAL_NAME if step is None else f"checkpoint-step{step:06d}.mfmr"
        return self.directory / name

    def save(self, params: ParameterSet, cfg: ModelConfig, step: Optional[int] = None) -> Path:
        path = self.path_for(step)
        save_checkpoint(str(path), params, cfg)
        self.telemetry.collect("checkpoint_written", {"path": str(path), "step": step})
        return path

    def list_checkpoints(self) -> List[Tuple[int, Path]]:
        """
        Step checkpoints sorted by step.
        """
        if not self.directory.is_dir():
            return []
        found = []
        for entry in self.directory.iterdir():
            m = _STEP_FILE.match(entry.name)
            if m:
                found.append((int(m.group(1)), entry))
        return sorted(found)

    def get_latest_checkpoint(self) -> Optional[Path]:
        """
        The final checkpoint if present, else the highest step.
        """
        final = self.directory / FINAL_NAME
        if final.is_file():
            return final
        steps = self.list_checkpoints()
        return steps[-1][1] if steps else None

    def load_latest(self) -> Tuple[ParameterSet, ModelConfig]:
        path = self.get_latest_checkpoint()
        if path is None:
            raise FileNotFoundError(f"no checkpoint in {self.directory}")
        return load_checkpoint(str(path))
