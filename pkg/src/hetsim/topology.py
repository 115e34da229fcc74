"""Branched network topologies and shared/local parameter partitioning.

A topology is a shared stem plus named branches. Two schemes exist:

* share-first: branches are independent heads on the stem; only stem
  parameters are shared between devices.
* cascaded: the lightweight network is fully contained in the complex
  one. The complex device's output is softmax(add(branch-dropout(complex
  logits), lightweight logits)); the lightweight network remains usable
  standalone. Everything except the complex-branch extension is shared.

The canonical flat parameter order on every device is: shared tensors
first (stem in layer order, then, in cascade mode, the lightweight
branch), then the device's local tensors. Within a layer, weights come
before biases. This order is what crosses the wire, so it must be stable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.layers import (
    Add,
    BranchDropout,
    Layer,
    ShapeError,
    Softmax,
    chain_shapes,
    count_operations,
    count_parameters as chain_count_parameters,
)
from .nn.network import (
    backward_chain,
    build_layout,
    ensure_finite,
    forward_chain,
    init_chain_params,
    make_keyed,
    _dropout_mask,
    _softmax_backward,
    _softmax_forward,
)
from .nn.params import ParamStore


@dataclass(frozen=True)
class CascadeSpec:
    complex_branch: str
    lightweight_branch: str
    branch_dropout_p: float


@dataclass(frozen=True)
class ParameterPartition:
    """Lengths of the shared and local slices of a device's flat vector."""

    branch_id: str
    shared_len: int
    local_len: int

    @property
    def total_len(self) -> int:
        return self.shared_len + self.local_len


@dataclass(frozen=True)
class BranchedTopology:
    input_shape: tuple[int, ...]
    stem: tuple[Layer, ...]
    branches: dict[str, tuple[Layer, ...]]
    cascade: CascadeSpec | None = None

    @property
    def stem_output_shape(self) -> tuple[int, ...]:
        shape = tuple(self.input_shape)
        if self.stem:
            shape = chain_shapes(self.stem, shape)[-1]
        return shape

    def branch_output_shape(self, branch_id: str) -> tuple[int, ...]:
        layers = self.branches[branch_id]
        shape = self.stem_output_shape
        if layers:
            shape = chain_shapes(layers, shape)[-1]
        return shape


def _validate_chain(layers, input_shape, what: str):
    try:
        chain_shapes(layers, input_shape)
    except ShapeError as exc:
        raise ShapeError(f"{what}: {exc}") from exc


def build_share_first(stem, branches: dict, input_shape) -> BranchedTopology:
    """Topology where branches are independent heads on a shared stem."""
    stem = tuple(stem)
    input_shape = tuple(input_shape)
    if not branches:
        raise ValueError("at least one branch is required")
    if any(isinstance(l, Add) for l in stem):
        raise ShapeError("Add is not a chain layer")
    _validate_chain(stem, input_shape, "stem")
    topo = BranchedTopology(input_shape, stem, {k: tuple(v) for k, v in branches.items()})
    for branch_id, layers in topo.branches.items():
        if any(isinstance(l, Add) for l in layers):
            raise ShapeError("Add is not a chain layer")
        _validate_chain(layers, topo.stem_output_shape, f"branch {branch_id!r}")
    return topo


def build_cascaded(stem, complex_spec, lightweight_spec, branch_dropout_p: float,
                   input_shape, complex_id: str = "complex",
                   lightweight_id: str = "lightweight") -> BranchedTopology:
    """Topology where the lightweight network is contained in the complex one.

    ``lightweight_spec`` must end with Softmax (it is a standalone network);
    ``complex_spec`` must end at its logits (no Softmax) because its output
    goes through add-then-softmax with the lightweight logits.
    """
    if not 0.0 <= branch_dropout_p <= 1.0:
        raise ValueError("branch_dropout_p must be in [0, 1]")
    lightweight_spec = tuple(lightweight_spec)
    complex_spec = tuple(complex_spec)
    if not lightweight_spec or not isinstance(lightweight_spec[-1], Softmax):
        raise ShapeError("cascaded lightweight branch must end with Softmax")
    if complex_spec and isinstance(complex_spec[-1], Softmax):
        raise ShapeError("cascaded complex branch must end at its logits, not Softmax")
    topo = build_share_first(
        stem, {complex_id: complex_spec, lightweight_id: lightweight_spec}, input_shape)
    light_logits = chain_shapes(lightweight_spec[:-1], topo.stem_output_shape)[-1] \
        if len(lightweight_spec) > 1 else topo.stem_output_shape
    complex_logits = topo.branch_output_shape(complex_id)
    if light_logits != complex_logits:
        raise ShapeError(
            f"cascade logits disagree: complex {complex_logits} vs lightweight {light_logits}")
    return BranchedTopology(topo.input_shape, topo.stem, topo.branches,
                            CascadeSpec(complex_id, lightweight_id, branch_dropout_p))


def _branch_scope(branch_id: str) -> str:
    return f"branch:{branch_id}"


class DeviceNetwork:
    """One device's view of a topology: its layers, parameters and partition.

    Handles both plain chains (share-first branches, cascade lightweight
    device) and the cascaded complex device whose forward pass merges two
    branch outputs.
    """

    def __init__(self, topology: BranchedTopology, branch_id: str):
        if branch_id not in topology.branches:
            raise KeyError(f"unknown branch {branch_id!r}")
        self.topology = topology
        self.branch_id = branch_id
        self.input_shape = topology.input_shape
        cascade = topology.cascade
        self.is_cascade_complex = bool(cascade) and branch_id == cascade.complex_branch

        stem_keyed = make_keyed("stem", topology.stem)
        own_keyed = make_keyed(_branch_scope(branch_id), topology.branches[branch_id])
        stem_out = topology.stem_output_shape

        if cascade is not None:
            light_id = cascade.lightweight_branch
            light_keyed = make_keyed(_branch_scope(light_id), topology.branches[light_id])
            if branch_id == light_id:
                self._shared_keyed = stem_keyed + own_keyed
                self._local_keyed = []
            elif self.is_cascade_complex:
                self._shared_keyed = stem_keyed + light_keyed
                self._local_keyed = own_keyed
                self._light_keyed = light_keyed
                # lightweight logits live just below its final softmax
                self._light_head = light_keyed[:-1]
            else:
                raise KeyError(f"branch {branch_id!r} is not part of the cascade")
        else:
            self._shared_keyed = stem_keyed
            self._local_keyed = own_keyed

        self._stem_keyed = stem_keyed
        self._stem_out_shape = stem_out

        shared_layout = []
        shape = tuple(self.input_shape)
        # shared layout follows the shared chain(s) in canonical order
        shared_layout += build_layout(stem_keyed, shape)
        if cascade is not None:
            light_layers = topology.branches[cascade.lightweight_branch]
            light_keyed_all = make_keyed(_branch_scope(cascade.lightweight_branch), light_layers)
            shared_layout += build_layout(light_keyed_all, stem_out)
        local_layout = build_layout(self._local_keyed, stem_out) if self._local_keyed else []

        self._layout = shared_layout + local_layout
        self._shared_len = sum(int(np.prod(s)) for _, s in shared_layout)
        self._local_len = sum(int(np.prod(s)) for _, s in local_layout)
        self.partition = ParameterPartition(branch_id, self._shared_len, self._local_len)

    # -- construction ------------------------------------------------------

    def init_store(self, shared_rng: np.random.Generator,
                   local_rng: np.random.Generator | None = None,
                   dtype=np.float64) -> ParamStore:
        """Initialize parameters; shared tensors draw from ``shared_rng``.

        Devices that agree on the topology and ``shared_rng`` stream get
        bit-identical shared blocks, which is how the coordinator and all
        devices start from one broadcast state.
        """
        store = ParamStore(self._layout, dtype)
        init_chain_params(self._stem_keyed, self.input_shape, store, shared_rng)
        cascade = self.topology.cascade
        if cascade is not None:
            light_keyed = make_keyed(_branch_scope(cascade.lightweight_branch),
                                     self.topology.branches[cascade.lightweight_branch])
            init_chain_params(light_keyed, self._stem_out_shape, store, shared_rng)
        if self._local_keyed:
            rng = local_rng if local_rng is not None else shared_rng
            init_chain_params(self._local_keyed, self._stem_out_shape, store, rng)
        return store

    @property
    def layout(self):
        return list(self._layout)

    def count_params(self) -> int:
        return self._shared_len + self._local_len

    def output_shape(self) -> tuple[int, ...]:
        return self.topology.branch_output_shape(self.branch_id)

    # -- forward / backward -------------------------------------------------

    def forward(self, store: ParamStore, x: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None,
                force_branch_drop: bool = False):
        """Returns (output, cache). Output is the device's network output.

        ``force_branch_drop`` zeroes the complex-branch contribution
        regardless of mode, for verifying that the cascaded network with
        the branch dropped equals the standalone lightweight network.
        """
        if not self.is_cascade_complex:
            if force_branch_drop:
                raise ValueError("force_branch_drop only applies to the cascaded "
                                 "complex network")
            # own branch layers sit in the local block, except for the cascade
            # lightweight device whose whole network is shared
            own = self._local_keyed or self._shared_keyed[len(self._stem_keyed):]
            return forward_chain(self._stem_keyed + own, store, x, mode=mode, rng=rng)

        stem_out, stem_cache = forward_chain(self._stem_keyed, store, x, mode=mode, rng=rng)
        light_logits, light_cache = forward_chain(self._light_head, store, stem_out,
                                                  mode=mode, rng=rng)
        complex_logits, complex_cache = forward_chain(self._local_keyed, store, stem_out,
                                                      mode=mode, rng=rng)
        p = self.topology.cascade.branch_dropout_p
        if force_branch_drop:
            scale = store.dtype.type(0.0)
            merged = light_logits.copy()
        elif mode == "train":
            if rng is None:
                raise ValueError("train-mode branch dropout needs an rng")
            bd = BranchDropout(p)
            scale = _dropout_mask(bd, complex_logits.shape, rng, store.dtype)
            merged = complex_logits * scale + light_logits
        else:
            scale = None
            merged = complex_logits + light_logits
        out = _softmax_forward(merged)
        ensure_finite("cascade output", out)
        return out, ("cascade", stem_cache, light_cache, complex_cache, scale, out)

    def backward(self, cache, dy: np.ndarray, store: ParamStore,
                 from_logits: bool = False) -> ParamStore:
        """Gradient ParamStore for an upstream gradient ``dy``.

        With ``from_logits`` the upstream gradient is taken w.r.t. the
        pre-softmax logits (the fused cross-entropy form) and the final
        softmax is skipped.
        """
        grads = store.zeros_like()
        if not isinstance(cache, tuple) or cache[0] != "cascade":
            chain_cache = cache
            if from_logits:
                if not isinstance(chain_cache.keyed_layers[-1][1], Softmax):
                    raise ValueError("from_logits requires a Softmax-terminated network")
                chain_cache = type(chain_cache)(
                    chain_cache.keyed_layers[:-1], chain_cache.per_layer[:-1],
                    chain_cache.mode, chain_cache.input_shape,
                    chain_cache.params_checksum)
            backward_chain(chain_cache, dy, store, grads)
            return grads

        _, stem_cache, light_cache, complex_cache, scale, out = cache
        dmerged = np.asarray(dy) if from_logits else _softmax_backward(out, np.asarray(dy))
        dlight = dmerged
        dcomplex = dmerged * scale if scale is not None else dmerged
        d_stem_light = backward_chain(light_cache, dlight, store, grads)
        d_stem_complex = backward_chain(complex_cache, dcomplex, store, grads)
        backward_chain(stem_cache, d_stem_light + d_stem_complex, store, grads)
        return grads


def partition_parameters(topology: BranchedTopology, branch_id: str) -> ParameterPartition:
    """Shared/local split of one branch's full network parameters."""
    return DeviceNetwork(topology, branch_id).partition


def count_parameters(topology: BranchedTopology, branch_id: str) -> int:
    """Total parameter count of the stem plus the given branch's network."""
    if topology.cascade is not None and branch_id == topology.cascade.complex_branch:
        return DeviceNetwork(topology, branch_id).count_params()
    return chain_count_parameters(
        list(topology.stem) + list(topology.branches[branch_id]), topology.input_shape)


def count_branch_operations(topology: BranchedTopology, branch_id: str) -> int:
    """Forward-pass operation estimate for the stem plus one branch."""
    ops = count_operations(list(topology.stem) + list(topology.branches[branch_id]),
                           topology.input_shape)
    if topology.cascade is not None and branch_id == topology.cascade.complex_branch:
        light = topology.branches[topology.cascade.lightweight_branch]
        ops += count_operations(list(light[:-1]), topology.stem_output_shape)
        out = topology.branch_output_shape(branch_id)
        ops += int(np.prod(out))  # the add at the combine point
    return ops


def split_gradient(flat: np.ndarray, partition: ParameterPartition):
    """Split a canonical flat vector into (shared, local) copies."""
    flat = np.asarray(flat)
    if flat.shape != (partition.total_len,):
        raise ValueError(
            f"flat vector length {flat.shape} != partition total {partition.total_len}")
    return flat[:partition.shared_len].copy(), flat[partition.shared_len:].copy()


def concat_parameters(local: np.ndarray, shared: np.ndarray,
                      partition: ParameterPartition) -> np.ndarray:
    """Rebuild a canonical flat vector (shared block first) from its parts."""
    local = np.asarray(local)
    shared = np.asarray(shared)
    if shared.shape != (partition.shared_len,):
        raise ValueError(f"shared length {shared.shape} != {partition.shared_len}")
    if local.shape != (partition.local_len,):
        raise ValueError(f"local length {local.shape} != {partition.local_len}")
    return np.concatenate([shared, local])
