# app/models/optim.py
import logging

import numpy as np

from app.errors import ContainerError, NonFiniteError

logger = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay.

    Moment buffers live here, keyed by the position of each parameter in the
    list given at construction, and survive across ``step`` calls.
    """

    def __init__(self, params, lr=2e-4, betas=(0.8, 0.99), eps=1e-8, weight_decay=0.01):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = [np.zeros_like(p.data) for p in self.params]
        self.exp_avg_sq = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        """Apply one update; a NaN or Inf anywhere rejects the whole step"""
        for i, p in enumerate(self.params):
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"Non-finite gradient in parameter #{i} with shape {p.shape}; step rejected")

        self.step_count += 1
        t = self.step_count
        bias1 = 1 - self.beta1 ** t
        bias2 = 1 - self.beta2 ** t
        for i, p in enumerate(self.params):
            dtype = p.data.dtype.type
            grad = p.grad
            m = self.exp_avg[i] * dtype(self.beta1) + grad * dtype(1 - self.beta1)
            v = self.exp_avg_sq[i] * dtype(self.beta2) + grad * grad * dtype(1 - self.beta2)
            self.exp_avg[i] = m
            self.exp_avg_sq[i] = v

            value = p.data * dtype(1 - self.lr * self.weight_decay)
            m_hat = m / dtype(bias1)
            v_hat = v / dtype(bias2)
            value = value - dtype(self.lr) * m_hat / (np.sqrt(v_hat) + dtype(self.eps))
            p.assign(value)

    def state_dict(self):
        state = {'step_count': self.step_count, 'lr': self.lr}
        for i in range(len(self.params)):
            state[f'exp_avg.{i}'] = np.array(self.exp_avg[i])
            state[f'exp_avg_sq.{i}'] = np.array(self.exp_avg_sq[i])
        return state

    def load_state_dict(self, state):
        for i, p in enumerate(self.params):
            for key, buffers in ((f'exp_avg.{i}', self.exp_avg), (f'exp_avg_sq.{i}', self.exp_avg_sq)):
                if key not in state:
                    raise ContainerError(f"Optimizer state is missing '{key}'")
                arr = np.asarray(state[key], dtype=p.data.dtype)
                if arr.shape != p.shape:
                    raise ContainerError(f"Optimizer buffer '{key}' has shape {arr.shape}, expected {p.shape}")
                buffers[i] = np.array(arr)
        self.step_count = int(state['step_count'])
        self.lr = float(state.get('lr', self.lr))


def adamw_step(optimizer, lr=None):
    """One AdamW update, optionally at a new learning rate"""
    if lr is not None:
        optimizer.lr = lr
    optimizer.step()
    logger.debug("AdamW step %d at lr %.3g", optimizer.step_count, optimizer.lr)
