"""Time-indexed training metrics shared by the model runners and harness."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConsistencyError


@dataclass
class Record:
    task: int           # 1-based sub-task index
    iteration: int      # 1-based training iteration within the task
    accuracy: float | None  # joint-test accuracy, only at scheduled points
    loglik: float | None    # mean per-column log-likelihood of the batch
    loss: float | None      # classifier / total loss of the batch


@dataclass
class MetricsLog:
    model: str = ""
    dataset: str = ""
    slt: str = ""
    param: str = ""       # K for the mixture model, eps for the baseline
    repetition: int = 0
    records: list[Record] = field(default_factory=list)

    def add(self, task, iteration, accuracy=None, loglik=None, loss=None) -> Record:
        rec = Record(task=task, iteration=iteration, accuracy=accuracy, loglik=loglik, loss=loss)
        self.records.append(rec)
        return rec

    def accuracy_records(self) -> list[Record]:
        return [r for r in self.records if r.accuracy is not None]

    def max_accuracy(self) -> float:
        pts = self.accuracy_records()
        if not pts:
            raise ConsistencyError("log holds no test points")
        return max(r.accuracy for r in pts)

    def validate(self) -> None:
        last = {}
        for r in self.records:
            if r.accuracy is not None and not 0.0 <= r.accuracy <= 1.0:
                raise ConsistencyError(f"accuracy {r.accuracy} outside [0, 1]")
            prev = last.get(r.task)
            if prev is not None and r.iteration < prev:
                raise ConsistencyError(
                    f"iterations not increasing within task {r.task}: {prev} -> {r.iteration}"
                )
            last[r.task] = r.iteration
