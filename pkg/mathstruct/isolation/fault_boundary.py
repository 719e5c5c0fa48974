import concurrent.futures
from typing import Any, Callable, Dict, Iterable, List

from ..observability.logger import logger

log = logger.bind(component="fault_boundary")


class FaultBoundary:
    """
    Runs per-item work on a bounded thread pool.

    Results come back in submission order; an exception in one item is
    contained as a failed entry and does not stop the others.
    """
    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))

    def execute_safe(self, func: Callable, *args, **kwargs) -> Dict[str, Any]:
        try:
            return {"success": True, "result": func(*args, **kwargs)}
        except Exception as e:
            log.error("item_failed", error=str(e), error_type=type(e).__name__)
            return {"success": False, "error": e}

    def map(self, func: Callable, items: Iterable[Any]) -> List[Dict[str, Any]]:
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [self.execute_safe(func, item) for item in items]
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.threads) as executor:
            return list(executor.map(lambda item: self.execute_safe(func, item), items))
