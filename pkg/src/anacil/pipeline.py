"""Sequential training over tasks: features, declarative record, consolidation."""

from __future__ import annotations

import logging
import time

import numpy as np

from .classifier import (ConsolidatedSolution, MemoryStatistic, consolidate, forget_tasks,
                         make_record, predict)
from .errors import session_context
from .features import FeatureExtractor

log = logging.getLogger(__name__)


class IncrementalLearner:
    """Class-incremental learner holding the extractor, memory statistic and solution."""

    def __init__(self, extractor: FeatureExtractor, *, rho_ridge: float = 2.0 ** -30,
                 gamma: float = 1e4, gamma_overrides: dict[int, float] | None = None,
                 capacity: int | None = None, update_columns: str = "all",
                 use_fisher: bool = True, use_anchor: bool = True):
        self.extractor = extractor
        self.rho_ridge = rho_ridge
        self.gamma = gamma
        self.gamma_overrides = dict(gamma_overrides or {})
        self.statistic = MemoryStatistic(capacity=capacity)
        self.solution: ConsolidatedSolution | None = None
        self.update_columns = update_columns
        self.use_fisher = use_fisher
        self.use_anchor = use_anchor
        self.forgotten: list[int] = []

    def gamma_for(self, task_id: int) -> float:
        return float(self.gamma_overrides.get(task_id, self.gamma))

    def learn(self, batch) -> float:
        """Train one session on ``batch``; returns the wall time in seconds."""
        t0 = time.perf_counter()
        tid = batch.task_id
        with session_context(tid, "features"):
            self.extractor.fit(batch.X)
            A = self.extractor.transform(batch.X).matrix
        with session_context(tid, "declarative"):
            record = make_record(tid, A, batch.Y, batch.columns, self.rho_ridge, self.gamma_for(tid))
        with session_context(tid, "consolidate"):
            if self.solution is None:
                self.solution = ConsolidatedSolution(record.omega.copy(), [tid])
            else:
                self.solution = consolidate(
                    A, batch.Y, self.statistic, self.solution, task_id=tid,
                    update_columns=self.update_columns, use_fisher=self.use_fisher,
                    use_anchor=self.use_anchor, rho_ridge=self.rho_ridge)
        evicted = self.statistic.add(record)
        self.forgotten += [r.task_id for r in evicted]
        elapsed = time.perf_counter() - t0
        log.info("task %d: %d samples, %d classes, %.3fs", tid, len(batch), len(batch.columns), elapsed)
        return elapsed

    def forget(self, victims) -> list[int]:
        before = set(self.statistic.task_ids)
        self.statistic = forget_tasks(self.statistic, victims)
        dropped = sorted(before - set(self.statistic.task_ids))
        self.forgotten += dropped
        return dropped

    def scores(self, X) -> np.ndarray:
        return predict(self.extractor.transform(X).matrix, self.solution)[0]

    def accuracy(self, batch) -> float:
        if self.solution is None:
            raise RuntimeError("no task has been learned yet")
        with session_context(batch.task_id, "evaluate"):
            _, labels = predict(self.extractor.transform(batch.X).matrix, self.solution)
        return float(np.mean(labels == batch.targets))

    @property
    def n_params(self) -> int:
        omega = 0 if self.solution is None else self.solution.omega.size
        return self.extractor.n_params + omega
