from typing import Dict, Any
from .logger import logger


class TelemetryCollector:
    def __init__(self, component: str):
        self.log = logger.bind(component=component)

    def collect(self, event_type: str, data: Dict[str, Any]):
        """
        Emit one pipeline milestone as a structured event.
        """
        self.log.info(event_type, **data)

    def warn(self, event_type: str, data: Dict[str, Any]):
        self.log.warning(event_type, **data)
