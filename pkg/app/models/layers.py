# app/models/layers.py
import numpy as np

from app.errors import ContainerError
from app.models.ops import conv1d, conv_transpose1d, conv_weight_init
from app.models.tensor import Parameter


class Module:
    """Base class for anything that owns Parameters or sub-modules.

    Parameters are discovered from instance attributes (and lists of them) in
    definition order, which makes ``named_parameters`` and checkpoints stable.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError()

    def named_parameters(self, prefix=''):
        for name, value in vars(self).items():
            yield from _named(value, f"{prefix}{name}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: np.array(p.data) for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise ContainerError(f"State is missing parameters: {', '.join(missing[:5])}")
        for name, param in own.items():
            param.assign(state[name])


def _named(value, name):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _named(item, f"{name}.{i}")


def same_padding(kernel, dilation=1):
    return dilation * (kernel - 1) // 2


class Conv1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, dilation=1, padding=None):
        self.stride = stride
        self.dilation = dilation
        self.padding = same_padding(kernel_size, dilation) if padding is None else padding
        fan_in = in_channels * kernel_size
        self.weight = Parameter(conv_weight_init(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter(conv_weight_init(rng, (out_channels,), fan_in))

    def forward(self, x):
        return conv1d(x, self.weight, self.bias, stride=self.stride, dilation=self.dilation, padding=self.padding)

    def zero_(self):
        self.weight.assign(np.zeros(self.weight.shape))
        self.bias.assign(np.zeros(self.bias.shape))


class ConvTranspose1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride, rng, padding=0):
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        self.weight = Parameter(conv_weight_init(rng, (in_channels, out_channels, kernel_size), fan_in))
        self.bias = Parameter(conv_weight_init(rng, (out_channels,), fan_in))

    def forward(self, x):
        return conv_transpose1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
