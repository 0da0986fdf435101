from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import torch
from torch.optim.optimizer import Optimizer

from services.errors import NonFiniteError, ShapeError


@dataclass
class AdamState:
    """First and second moments plus the per-parameter step count."""
    steps: List[int] = field(default_factory=list)
    exp_avg: List[torch.Tensor] = field(default_factory=list)
    exp_avg_sq: List[torch.Tensor] = field(default_factory=list)


def init_adam_state(params: Sequence[torch.Tensor]) -> AdamState:
    return AdamState(
        steps=[0] * len(params),
        exp_avg=[torch.zeros_like(p) for p in params],
        exp_avg_sq=[torch.zeros_like(p) for p in params],
    )


@torch.no_grad()
def adam_step(params: Sequence[torch.Tensor], grads: Sequence[Optional[torch.Tensor]], state: AdamState,
              lr: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """
    One Adam update with bias correction, applied to `params` in place.

    Parameters whose gradient is None are skipped and keep their step count.
    """
    if not (len(params) == len(grads) == len(state.exp_avg)):
        raise ShapeError(f'{len(params)} params, {len(grads)} grads, {len(state.exp_avg)} state entries')
    for i, g in enumerate(grads):
        if g is None:
            continue
        if g.shape != params[i].shape:
            raise ShapeError(f'grad {i}: shape {tuple(g.shape)} does not match param {tuple(params[i].shape)}')
        if not torch.isfinite(g).all():
            raise NonFiniteError(f'gradient {i} is not finite', {'param_index': i})

    b1, b2 = betas
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        state.steps[i] += 1
        t = state.steps[i]
        m, v = state.exp_avg[i], state.exp_avg_sq[i]
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.sub_(lr * m_hat / (v_hat.sqrt() + eps))
    return state


class HandAdam(Optimizer):
    """torch.optim front end over adam_step; state lives in one AdamState per group."""

    def __init__(self, params: Iterable[torch.nn.Parameter], lr: float = 1e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f'learning rate must be positive, got {lr}')
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps))
        self.adam_states = [init_adam_state(group['params']) for group in self.param_groups]

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group, state in zip(self.param_groups, self.adam_states):
            params = group['params']
            adam_step(params, [p.grad for p in params], state, group['lr'], group['betas'], group['eps'])
        return loss

    def flat_state(self) -> Tuple[List[int], List[torch.Tensor], List[torch.Tensor]]:
        steps, m, v = [], [], []
        for state in self.adam_states:
            steps += state.steps
            m += state.exp_avg
            v += state.exp_avg_sq
        return steps, m, v

    def load_flat_state(self, steps: Sequence[int], exp_avg: Sequence[torch.Tensor],
                        exp_avg_sq: Sequence[torch.Tensor]) -> None:
        offset = 0
        for state in self.adam_states:
            n = len(state.steps)
            if offset + n > len(steps):
                raise ShapeError('optimizer state is shorter than the parameter list')
            state.steps = [int(s) for s in steps[offset:offset + n]]
            for j in range(n):
                if exp_avg[offset + j].shape != state.exp_avg[j].shape:
                    raise ShapeError(f'optimizer moment {offset + j} has the wrong shape')
                state.exp_avg[j].copy_(exp_avg[offset + j])
                state.exp_avg_sq[j].copy_(exp_avg_sq[offset + j])
            offset += n
        if offset != len(steps):
            raise ShapeError('optimizer state is longer than the parameter list')
