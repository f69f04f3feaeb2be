"""
Overfit harness: plain gradient descent on one fixture.

    run = train_steps(fixture, params, config, steps=50, lr=0.1)
    run.totals[0], run.totals[-1]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from logging import getLogger
from typing import List, Optional

from tqdm import tqdm

from ..config import HarnessConfig
from ..errors import DivergenceError
from ..harness.fixtures import SceneFixture
from ..losses.losses import LossReport
from .model import backward, forward
from .params import ModelParams

log = getLogger(__name__)


@dataclass
class TrainingRun:
    params: ModelParams
    reports: List[LossReport] = field(default_factory=list)

    @property
    def totals(self) -> List[float]:
        return [r.total for r in self.reports]

    def rows(self):
        """``(step, total, l_ce, l_scal_sem, l_scal_geo, l_d, l_recon)`` per step."""
        for step, r in enumerate(self.reports):
            yield (step, r.total, r.l_ce, r.l_scal_sem, r.l_scal_geo, r.l_d, r.l_recon)


TRAJECTORY_HEADER = ("step", "total", "l_ce", "l_scal_sem", "l_scal_geo", "l_d", "l_recon")


def train_steps(fixture: SceneFixture, params: ModelParams, config: HarnessConfig,
                steps: Optional[int] = None, lr: Optional[float] = None,
                seed: Optional[int] = None, progress: bool = False) -> TrainingRun:
    """
    Run ``steps`` forward/backward passes, updating ``params`` after each.

    The returned run records the loss report of every evaluated step (the
    parameters it carries are those after the last update).

    Raises
    ------
    DivergenceError
        When an update leaves non-finite parameters or a step produces a
        non-finite loss; carries the step index.
    """
    steps = config.steps if steps is None else steps
    lr = config.lr if lr is None else lr
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")

    run = TrainingRun(params)
    for step in tqdm(range(steps), desc="train", unit="step", disable=not progress):
        if not run.params.all_finite():
            log.error(f"step {step}: parameters are no longer finite")
            raise DivergenceError(step, math.nan)
        result = forward(fixture, run.params, config, seed=seed)
        total = result.report.total
        if not math.isfinite(total):
            log.error(f"step {step}: total loss {total!r}")
            raise DivergenceError(step, total)
        run.reports.append(result.report)
        log.info(f"step {step:4d}  total={total:.6f}  ce={result.report.l_ce:.6f}")
        if lr:
            grads = backward(result)
            run.params = run.params.apply_gradient(grads, lr)
    return run
