# app/errors.py


class ShapeError(ValueError):
    """Operand shapes, lengths or channel counts do not fit together"""


class GraphError(RuntimeError):
    """Backward was called on something that is not a live scalar graph"""


class NonFiniteError(FloatingPointError):
    """NaN or Inf showed up in activations, losses or gradients"""


class AudioFormatError(ValueError):
    """WAV file is malformed or not 16-bit PCM mono"""


class ContainerError(ValueError):
    """Feature or checkpoint container is malformed or lacks a section"""


class ConfigMismatchError(ValueError):
    """Inputs were produced with a configuration the model was not built for"""


class MissingF0Error(ValueError):
    """Features carry no F0 track and the checkpoint has no F0 predictor"""
