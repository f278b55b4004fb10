from gfte.nn.gradcheck import gradcheck
from gfte.nn.layers import ParamSet
from gfte.nn.optim import Adam, AdamState, adam_step
from gfte.nn.tensor import Tensor, precision

__all__ = ["Adam", "AdamState", "ParamSet", "Tensor", "adam_step", "gradcheck", "precision"]
