from typing import Dict

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, generate_latest


class MetricsExporter:
    """In-process pipeline metrics on a private registry (no HTTP server)."""

    def __init__(self):
        self.registry = CollectorRegistry()
        self.pairs_counter = Counter(
            'mathstruct_pairs_extracted_total',
            'Formula-context pairs written to a dataset',
            registry=self.registry,
        )
        self.skip_counter = Counter(
            'mathstruct_formulas_skipped_total',
            'Equations skipped during extraction',
            ['reason'],
            registry=self.registry,
        )
        self.file_error_counter = Counter(
            'mathstruct_files_failed_total',
            'Source files that could not be read',
            registry=self.registry,
        )
        self.step_counter = Counter(
            'mathstruct_train_steps_total',
            'Optimizer updates applied',
            ['phase'],
            registry=self.registry,
        )
        self.loss_gauge = Gauge(
            'mathstruct_loss_current',
            'Most recent batch loss per task',
            ['task'],
            registry=self.registry,
        )
        self.latency_histogram = Histogram(
            'mathstruct_step_latency_seconds',
            'Wall time of one training step',
            registry=self.registry,
        )

    def record_pairs(self, count: int):
        self.pairs_counter.inc(count)

    def record_skip(self, reason: str, count: int = 1):
        if count:
            self.skip_counter.labels(reason=reason).inc(count)

    def record_file_error(self):
        self.file_error_counter.inc()

    def record_step(self, phase: str, losses: Dict[str, float], seconds: float):
        self.step_counter.labels(phase=phase).inc()
        for task, value in losses.items():
            self.loss_gauge.labels(task=task).set(value)
        self.latency_histogram.observe(seconds)

    def snapshot(self) -> Dict[str, float]:
        """Flat sample-name -> value map of everything recorded so far."""
        values: Dict[str, float] = {}
        for metric in self.registry.collect():
            for sample in metric.samples:
                if sample.name.endswith("_created"):
                    continue
                key = sample.name
                if sample.labels:
                    key += "{" + ",".join(f"{k}={v}" for k, v in sorted(sample.labels.items())) + "}"
                values[key] = sample.value
        return values

    def exposition(self) -> bytes:
        return generate_latest(self.registry)
