"""SGD with momentum, per-group weight decay and epoch schedules."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, ContractError

# parameter name -> weight-decay group; biases decay with their weights
GROUP_OF = {"W": "W", "b": "W", "R": "R", "B": "B"}


def group_of(key):
    return GROUP_OF[key[0]]


@dataclass
class SgdState:
    """Optimizer state.

    ``lr`` and ``weight_decay`` are the values in force for the current
    epoch; the ``base_*`` copies are what :func:`advance_epoch` scales from.
    ``lr_scale`` multiplies the learning rate per group (0 freezes a group
    when its decay is 0 too).
    """

    lr: float
    momentum: float = 0.9
    weight_decay: Dict[str, float] = field(default_factory=dict)
    decoupled: bool = False
    lr_scale: Dict[str, float] = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)
    base_lr: Optional[float] = None
    base_weight_decay: Optional[Dict[str, float]] = None
    epoch: Optional[int] = None

    def __post_init__(self):
        if self.lr < 0:
            raise ContractError(f"learning rate must be non-negative, got {self.lr}")
        if any(v < 0 for v in self.lr_scale.values()):
            raise ContractError("learning-rate multipliers must be non-negative")
        if self.base_lr is None:
            self.base_lr = self.lr
        if self.base_weight_decay is None:
            self.base_weight_decay = dict(self.weight_decay)


def step(params, updates, state):
    """One in-place SGD step.

    ``updates`` holds batch-averaged plasticity directions ``D`` (the update
    a rule prescribes is ``lr * D``).  With coupled decay the effective
    gradient is ``g = -D + wd * p``; then ``v <- momentum * v + g`` and
    ``p <- p - lr * v``.  Decoupled decay keeps ``wd`` out of the velocity
    and subtracts ``lr * wd * p`` separately.
    """
    directions = updates.directions
    for key, p in params.items():
        d = directions.get(key)
        if d is None:
            continue
        if d.shape != p.shape:
            raise ContractError(f"update for {key} has shape {d.shape}, parameter {p.shape}")
        group = group_of(key)
        wd = state.weight_decay.get(group, 0.0)
        lr = state.lr * state.lr_scale.get(group, 1.0)
        # g = wd * p - d, built in place to spare temporaries on large R
        if wd and not state.decoupled:
            g = np.multiply(p, wd)
            g -= d
        else:
            g = np.negative(d)
        v = state.velocity.get(key)
        if v is None or state.momentum == 0.0:
            v = g.copy()
        else:
            v *= state.momentum
            v += g
        state.velocity[key] = v
        if state.decoupled and wd:
            p -= lr * wd * p
        p -= np.multiply(v, lr, out=g)


@dataclass
class Schedule:
    """LR milestones ``(epoch, multiplier)`` and decay overrides ``(epoch, group, value)``.

    Multipliers are cumulative.  An override holds from its epoch onward
    until a later override for the same group replaces it.
    """

    milestones: List[Tuple[int, float]] = field(default_factory=list)
    decay_overrides: List[Tuple[int, str, float]] = field(default_factory=list)

    def __post_init__(self):
        self.milestones = [(int(e), float(m)) for e, m in self.milestones]
        epochs = [e for e, _ in self.milestones]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigError(f"LR milestones must be strictly increasing, got {epochs}")
        self.decay_overrides = sorted(
            ((int(e), str(g), float(v)) for e, g, v in self.decay_overrides),
            key=lambda item: item[0],
        )
        for _, g, _ in self.decay_overrides:
            if g not in set(GROUP_OF.values()):
                raise ConfigError(f"unknown weight-decay group {g!r}")


def advance_epoch(schedule, epoch, state):
    """Set ``lr`` and weight decay in force during ``epoch`` (0-based).

    Values are recomputed from the base values, so calling this twice for
    the same epoch changes nothing.
    """
    if state.epoch is not None and epoch < state.epoch:
        raise ContractError(f"epoch went backwards: {state.epoch} -> {epoch}")
    state.epoch = epoch
    lr = state.base_lr
    for at, mult in schedule.milestones:
        if at <= epoch:
            lr *= mult
    state.lr = lr
    decay = dict(state.base_weight_decay)
    for at, group, value in schedule.decay_overrides:
        if at <= epoch:
            decay[group] = value
    state.weight_decay = decay
