"""Road-boundary segmentation with convolutions and row-distributed LSTMs."""

from .tensor import Shape3, Tensor3, make_rng, tensor_create, tensor_map2, tensor_row
from .network import Network, NetworkSpec, build_roadnet, load_weights, save_weights
from .analysis import analyze, compare_conv_lstm, count_flops, count_params

__all__ = [
    "Shape3", "Tensor3", "make_rng", "tensor_create", "tensor_map2", "tensor_row",
    "Network", "NetworkSpec", "build_roadnet", "load_weights", "save_weights",
    "analyze", "compare_conv_lstm", "count_flops", "count_params",
]
