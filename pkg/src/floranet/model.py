"""Graph executor: materializes parameters for a descriptor and runs
forward/backward over its nodes."""

from __future__ import annotations

import numpy as np

from .arch import ArchDescriptor, FreezePlan
from .layers import LayerError, Parameter, init_params, layer_backward, layer_forward
from .tensor import Rng


class Model:
    """A descriptor plus materialized parameters.

    A single instance is not thread-safe while training (forward caches are
    instance state); read-only inference on an unchanging instance is.
    """

    def __init__(self, desc: ArchDescriptor, rng: Rng | None = None,
                 dtype: str = "f32",
                 params: list[list[Parameter]] | None = None):
        self.desc = desc
        self.dtype = dtype
        if params is None:
            rng = rng or Rng(0)
            params = [init_params(node, rng.child(i), dtype)
                      for i, node in enumerate(desc.nodes)]
        self.params = params
        self.frozen: frozenset = frozenset()
        self._caches = None
        self._n_out = None

    def apply_freeze_plan(self, plan: FreezePlan) -> None:
        self.frozen = plan.frozen_node_indices
        for idx in self.frozen:
            for p in self.params[idx]:
                p.trainable = False

    def parameters(self) -> list[Parameter]:
        """All parameters flattened in node order (checkpoint blob order)."""
        return [p for group in self.params for p in group]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grads.data[...] = 0

    def forward(self, x: np.ndarray, mode: str = "infer",
                return_all: bool = False):
        """Run the graph on a batch N x H x W x C; returns class probabilities.

        mode='train' caches intermediates for backward and lets batch norm
        use batch statistics; frozen batch-norm nodes always run in
        inference mode so their moving statistics stay fixed.
        """
        desc = self.desc
        if x.ndim != 4 or tuple(x.shape[1:]) != desc.input_shape:
            raise LayerError(
                f"model input must be N x {desc.input_shape}, got {x.shape}")
        x = np.ascontiguousarray(x, dtype=np.float32 if self.dtype == "f32" else np.float64)

        n_nodes = len(desc.nodes)
        outputs: list = [None] * n_nodes
        caches: list = [None] * n_nodes
        # consumer counts let inference free activations early
        consumers = [0] * n_nodes
        for node in desc.nodes:
            for j in node.inputs:
                consumers[j] += 1

        outputs[0] = x
        pending = consumers[:]
        for i in range(1, n_nodes):
            node = desc.nodes[i]
            ins = [outputs[j] for j in node.inputs]
            node_mode = mode
            if mode == "train" and node.kind == "BatchNorm" and i in self.frozen:
                node_mode = "infer"
            outputs[i], caches[i] = layer_forward(node, self.params[i], ins, node_mode)
            if mode != "train" and not return_all:
                for j in node.inputs:
                    pending[j] -= 1
                    if pending[j] == 0:
                        outputs[j] = None

        if mode == "train":
            self._caches = caches
            self._n_out = outputs[-1]
        if return_all:
            return outputs
        return outputs[-1]

    def backward_from_logits(self, glogits: np.ndarray) -> None:
        """Backpropagate a gradient given w.r.t. the pre-softmax logits.

        Requires a preceding forward in train mode. Frozen nodes pass input
        gradients through but accumulate no parameter gradients.
        """
        if self._caches is None:
            raise LayerError("backward before forward")
        desc = self.desc
        n_nodes = len(desc.nodes)
        bufs: list = [None] * n_nodes
        bufs[-1] = glogits
        for i in range(n_nodes - 1, 0, -1):
            g = bufs[i]
            bufs[i] = None
            if g is None:
                continue
            node = desc.nodes[i]
            gins = layer_backward(node, self.params[i], self._caches[i], g,
                                  accumulate=i not in self.frozen,
                                  from_logits=(i == n_nodes - 1))
            for j, gi in zip(node.inputs, gins):
                if j == 0:
                    continue
                if bufs[j] is None:
                    bufs[j] = gi.copy() if any(
                        k != j and gk is gi for k, gk in zip(node.inputs, gins)
                    ) else gi
                else:
                    bufs[j] = bufs[j] + gi
        self._caches = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Predicted class index per sample (lowest index wins ties)."""
        probs = self.forward(x, mode="infer")
        return probs.argmax(axis=1)

    def copy_weights_from(self, other: "Model", node_indices) -> None:
        """Copy parameter values for the given node indices from another model
        with an identical base layout."""
        for i in node_indices:
            src, dst = other.params[i], self.params[i]
            if len(src) != len(dst):
                raise LayerError(
                    f"node {self.desc.nodes[i].name}: parameter count mismatch")
            for ps, pd in zip(src, dst):
                if ps.values.shape != pd.values.shape:
                    raise LayerError(
                        f"node {self.desc.nodes[i].name}/{ps.name}: shape mismatch "
                        f"{ps.values.shape} vs {pd.values.shape}")
                pd.values.data[...] = ps.values.data
