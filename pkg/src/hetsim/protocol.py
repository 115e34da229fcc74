"""Synchronization protocol between devices and the coordinator.

Devices accumulate an update over a sync period, send only the shared
slice of it to the coordinator, and receive fresh shared parameters back.
The coordinator merges updates either synchronously (barrier over all
registered devices, then one broadcast) or asynchronously (apply each
update on arrival, reply to the sender only).

Two device-side accounting modes share the same wire format:

* ``local-step``: the optimizer runs on-device every step; the update sent
  is the parameter delta of the shared slice since the last sync. The
  coordinator applies weighted deltas with no extra step size.
* ``accumulate``: raw gradients are accumulated between syncs; the shared
  slice is sent as-is and the local slice is fed through the device
  optimizer at sync time.

Everything here is single-threaded and deterministic: channels are plain
FIFO queues, and a :class:`LocalHub` routes messages inline.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .nn.optim import Optimizer
from .nn.params import ParamStore
from .topology import ParameterPartition

WEIGHTINGS = ("data-proportional", "uniform-average", "uniform-sum")

TAG_GRADIENT_UPDATE = 1
TAG_PARAM_BROADCAST = 2

_HEADER = struct.Struct("<IIQ")  # tag, device_id (or round), vector length


class ProtocolError(RuntimeError):
    pass


class SyncStallError(ProtocolError):
    """A synchronous round cannot complete because updates are missing."""


class DeviceHaltedError(ProtocolError):
    """The channel to the coordinator is gone; the device must stop."""


@dataclass
class GradientUpdate:
    device_id: int
    delta: np.ndarray
    local_step_count: int = 0


@dataclass
class ParamBroadcast:
    params: np.ndarray
    round_index: int = 0


def encode_message(msg, dtype=np.float64) -> bytes:
    """Length-prefixed little-endian frame: u32 tag, u32 id, u64 length, reals.

    The id slot carries the device id for updates and the round counter for
    broadcasts. Step counters are in-process metadata and do not cross the
    wire.
    """
    dtype = np.dtype(dtype)
    if isinstance(msg, GradientUpdate):
        vec = np.ascontiguousarray(msg.delta, dtype=dtype)
        head = _HEADER.pack(TAG_GRADIENT_UPDATE, msg.device_id, vec.size)
    elif isinstance(msg, ParamBroadcast):
        vec = np.ascontiguousarray(msg.params, dtype=dtype)
        head = _HEADER.pack(TAG_PARAM_BROADCAST, msg.round_index, vec.size)
    else:
        raise TypeError(f"cannot encode {msg!r}")
    return head + vec.astype(dtype.newbyteorder("<"), copy=False).tobytes()


def decode_message(buf: bytes, dtype=np.float64):
    dtype = np.dtype(dtype)
    if len(buf) < _HEADER.size:
        raise ProtocolError("frame shorter than header")
    tag, ident, length = _HEADER.unpack_from(buf)
    expected = _HEADER.size + length * dtype.itemsize
    if len(buf) != expected:
        raise ProtocolError(f"frame length {len(buf)} != expected {expected}")
    vec = np.frombuffer(buf, dtype=dtype.newbyteorder("<"), offset=_HEADER.size,
                        count=length).astype(dtype)
    if tag == TAG_GRADIENT_UPDATE:
        return GradientUpdate(ident, vec)
    if tag == TAG_PARAM_BROADCAST:
        return ParamBroadcast(vec, ident)
    raise ProtocolError(f"unknown frame tag {tag}")


def payload_nbytes(vector_len: int, dtype=np.float64) -> int:
    """Bytes of real-valued payload in one frame (header excluded)."""
    return int(vector_len) * np.dtype(dtype).itemsize


# ---------------------------------------------------------------------------
# Merge weighting
# ---------------------------------------------------------------------------

def compute_merge_weights(data_sizes, source: str) -> np.ndarray:
    """Per-device aggregation weights.

    data-proportional: |D_k| / |D| (requires positive sizes);
    uniform-average: 1/n; uniform-sum: all ones.
    """
    if source not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {source!r}")
    sizes = np.asarray(list(data_sizes), dtype=np.float64)
    n = sizes.size
    if n == 0:
        raise ValueError("no devices")
    if source == "uniform-sum":
        return np.ones(n)
    if source == "uniform-average":
        return np.full(n, 1.0 / n)
    if np.any(sizes <= 0):
        raise ValueError("data-proportional weighting needs positive data sizes")
    total = sizes.sum()
    return sizes / total


def merge_deltas(weights, deltas) -> np.ndarray:
    """Elementwise weighted sum of equal-length flat vectors."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(deltas) != weights.size:
        raise ValueError(f"{weights.size} weights but {len(deltas)} deltas")
    if not deltas:
        raise ValueError("no deltas to merge")
    length = np.asarray(deltas[0]).shape
    out = np.zeros_like(np.asarray(deltas[0]), dtype=np.float64)
    for w, d in zip(weights, deltas):
        d = np.asarray(d)
        if d.shape != length:
            raise ValueError(f"delta length {d.shape} != {length}")
        out += w * d
    return out


# ---------------------------------------------------------------------------
# Coordinator
# ---------------------------------------------------------------------------

@dataclass
class _Registration:
    device_id: int
    shared_len: int
    data_size: int


class Coordinator:
    """Holds the authoritative shared parameters and merges device updates.

    ``mode`` "sync" implements a barrier: one update per registered device,
    then a single broadcast. ``mode`` "async" applies each update as it
    arrives and replies to the sender only.
    """

    def __init__(self, mode: str = "sync", weighting: str = "data-proportional"):
        if mode not in ("sync", "async"):
            raise ValueError(f"coordinator mode must be sync or async, got {mode!r}")
        if weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {weighting!r}")
        self.mode = mode
        self.weighting = weighting
        self.theta: np.ndarray | None = None
        self.round_index = 0
        self._registrations: list[_Registration] = []
        self._weights: dict[int, float] | None = None
        self._pending: dict[int, np.ndarray] = {}

    # -- registration handshake (precedes round 0) --------------------------

    def register(self, device_id: int, shared_len: int, data_size: int) -> None:
        if self._weights is not None:
            raise ProtocolError("registration is closed")
        if any(r.device_id == device_id for r in self._registrations):
            raise ProtocolError(f"device {device_id} already registered")
        if self._registrations and self._registrations[0].shared_len != shared_len:
            raise ProtocolError(
                f"device {device_id} announces shared_len {shared_len}, "
                f"coordinator expects {self._registrations[0].shared_len}")
        self._registrations.append(_Registration(device_id, shared_len, data_size))

    def initialize(self, theta0: np.ndarray) -> ParamBroadcast:
        """Close registration, adopt the initial shared vector, broadcast it."""
        if not self._registrations:
            raise ProtocolError("no devices registered")
        theta0 = np.asarray(theta0, dtype=np.float64)
        if theta0.shape != (self._registrations[0].shared_len,):
            raise ProtocolError("initial shared vector has the wrong length")
        weights = compute_merge_weights(
            [r.data_size for r in self._registrations], self.weighting)
        if self.weighting != "uniform-sum":
            assert abs(weights.sum() - 1.0) < 1e-12
        self._weights = {r.device_id: float(w)
                         for r, w in zip(self._registrations, weights)}
        self.theta = theta0.copy()
        return ParamBroadcast(self.theta.copy(), self.round_index)

    @property
    def device_ids(self) -> list[int]:
        return [r.device_id for r in self._registrations]

    def weight_of(self, device_id: int) -> float:
        if self._weights is None:
            raise ProtocolError("coordinator not initialized")
        return self._weights[device_id]

    def missing_device_ids(self) -> list[int]:
        """Devices whose update for the current synchronous round is missing."""
        return [r.device_id for r in self._registrations
                if r.device_id not in self._pending]

    # -- update handling -----------------------------------------------------

    def _check(self, update: GradientUpdate) -> None:
        if self.theta is None or self._weights is None:
            raise ProtocolError("coordinator not initialized")
        if update.device_id not in self._weights:
            raise ProtocolError(f"unknown device id {update.device_id}")
        if np.asarray(update.delta).shape != self.theta.shape:
            raise ProtocolError(
                f"update length {np.asarray(update.delta).shape} != shared "
                f"length {self.theta.shape}")

    def handle_update(self, update: GradientUpdate) -> list[tuple[int | None, ParamBroadcast]]:
        """Process one update; returns (destination, broadcast) pairs.

        Destination None means every registered device. In sync mode the
        list is empty until the round's last update arrives.
        """
        self._check(update)
        if self.mode == "async":
            self.theta += self._weights[update.device_id] * np.asarray(
                update.delta, dtype=self.theta.dtype)
            self.round_index += 1
            return [(update.device_id, ParamBroadcast(self.theta.copy(), self.round_index))]
        if update.device_id in self._pending:
            raise ProtocolError(
                f"device {update.device_id} sent two updates in one round")
        self._pending[update.device_id] = np.asarray(update.delta, dtype=self.theta.dtype)
        if self.missing_device_ids():
            return []
        merged = merge_deltas(
            [self._weights[r.device_id] for r in self._registrations],
            [self._pending[r.device_id] for r in self._registrations])
        self.theta += merged
        self._pending.clear()
        self.round_index += 1
        return [(None, ParamBroadcast(self.theta.copy(), self.round_index))]


# ---------------------------------------------------------------------------
# Device-side endpoint
# ---------------------------------------------------------------------------

class DeviceEndpoint:
    """Device-side bookkeeping for one device's sync behaviour.

    Owns the split/merge of the device's canonical flat vector (shared
    block first). In ``local-step`` mode the update is the shared-slice
    delta since the last broadcast; in ``accumulate`` mode gradients are
    summed into a buffer between syncs and the local slice is applied
    through ``local_optimizer`` at sync time.
    """

    def __init__(self, device_id: int, partition: ParameterPartition, store: ParamStore,
                 mode: str = "local-step", local_optimizer: Optimizer | None = None,
                 data_size: int = 1, sync_period: int = 1):
        if mode not in ("local-step", "accumulate"):
            raise ValueError(f"unknown device mode {mode!r}")
        if store.size != partition.total_len:
            raise ValueError("store size does not match partition")
        if mode == "accumulate" and partition.local_len > 0 and local_optimizer is None:
            raise ValueError("accumulate mode needs a local optimizer")
        self.device_id = device_id
        self.partition = partition
        self.store = store
        self.mode = mode
        self.local_optimizer = local_optimizer
        self.data_size = int(data_size)
        self.sync_period = int(sync_period)
        self.steps_since_sync = 0
        self.sync_count = 0
        self._shared_ref = store.flat[:partition.shared_len].copy()
        self._acc = np.zeros(partition.total_len, dtype=store.dtype) \
            if mode == "accumulate" else None

    @property
    def shared_len(self) -> int:
        return self.partition.shared_len

    def shared_slice(self) -> np.ndarray:
        return self.store.flat[:self.partition.shared_len]

    def local_slice(self) -> np.ndarray:
        return self.store.flat[self.partition.shared_len:]

    def note_step(self) -> None:
        self.steps_since_sync += 1

    def accumulate_gradient(self, flat_grad: np.ndarray) -> None:
        if self.mode != "accumulate":
            raise ProtocolError("accumulate_gradient only valid in accumulate mode")
        flat_grad = np.asarray(flat_grad)
        if flat_grad.shape != (self.partition.total_len,):
            raise ValueError("gradient length does not match parameters")
        self._acc += flat_grad

    def make_update(self) -> GradientUpdate:
        """Shared-slice update to send; does not yet clear local state."""
        s = self.partition.shared_len
        if self.mode == "local-step":
            delta = self.store.flat[:s] - self._shared_ref
        else:
            delta = self._acc[:s].copy()
        return GradientUpdate(self.device_id, delta, self.steps_since_sync)

    def apply_broadcast(self, broadcast: ParamBroadcast) -> None:
        """Adopt fresh shared parameters and finish the sync bookkeeping."""
        vec = np.asarray(broadcast.params)
        s = self.partition.shared_len
        if vec.shape != (s,):
            raise ProtocolError(
                f"broadcast length {vec.shape} != shared length {s}")
        self.store.flat[:s] = vec
        self._shared_ref = self.store.flat[:s].copy()
        if self.mode == "accumulate":
            if self.partition.local_len > 0:
                local = self.store.flat[s:]
                self.local_optimizer.step(local, self._acc[s:])
            self._acc[:] = 0.0
        self.steps_since_sync = 0
        self.sync_count += 1

    # checkpoint support
    def state_dict(self) -> dict:
        return {
            "shared_ref": self._shared_ref.copy(),
            "acc": None if self._acc is None else self._acc.copy(),
            "steps_since_sync": self.steps_since_sync,
            "sync_count": self.sync_count,
        }

    def load_state_dict(self, state: dict) -> None:
        self._shared_ref = state["shared_ref"].copy()
        if state["acc"] is not None:
            self._acc = state["acc"].copy()
        self.steps_since_sync = int(state["steps_since_sync"])
        self.sync_count = int(state["sync_count"])


# ---------------------------------------------------------------------------
# Deterministic in-process wiring
# ---------------------------------------------------------------------------

class Channel:
    """FIFO message queue with a closed flag."""

    def __init__(self):
        self._queue: list = []
        self.closed = False

    def send(self, msg) -> None:
        if self.closed:
            raise DeviceHaltedError("channel closed")
        self._queue.append(msg)

    def recv(self):
        if not self._queue:
            return None
        return self._queue.pop(0)

    def __len__(self) -> int:
        return len(self._queue)

    def close(self) -> None:
        self.closed = True


class LocalHub:
    """Routes device updates straight into the coordinator, inline.

    Replies are queued per device. Payload traffic is metered per update
    so the harness can report exact bytes sent (header bytes excluded).
    """

    def __init__(self, coordinator: Coordinator, dtype=np.float64):
        self.coordinator = coordinator
        self.dtype = np.dtype(dtype)
        self.inboxes: dict[int, Channel] = {}
        self.update_log: list[tuple[int, int]] = []  # (device_id, payload bytes)

    def connect(self, device_id: int) -> Channel:
        inbox = Channel()
        self.inboxes[device_id] = inbox
        return inbox

    def broadcast_initial(self, theta0: np.ndarray) -> None:
        broadcast = self.coordinator.initialize(theta0)
        for inbox in self.inboxes.values():
            inbox.send(ParamBroadcast(broadcast.params.copy(), broadcast.round_index))

    def send_update(self, update: GradientUpdate) -> None:
        if update.device_id not in self.inboxes:
            raise ProtocolError(f"device {update.device_id} is not connected")
        self.update_log.append(
            (update.device_id, payload_nbytes(np.asarray(update.delta).size, self.dtype)))
        for dest, broadcast in self.coordinator.handle_update(update):
            if dest is None:
                for inbox in self.inboxes.values():
                    inbox.send(ParamBroadcast(broadcast.params.copy(),
                                              broadcast.round_index))
            else:
                self.inboxes[dest].send(broadcast)

    def take_reply(self, device_id: int) -> ParamBroadcast:
        msg = self.inboxes[device_id].recv()
        if msg is None:
            missing = self.coordinator.missing_device_ids()
            raise SyncStallError(
                f"device {device_id} is waiting for a broadcast; round stalled, "
                f"missing updates from devices {missing}")
        return msg


def device_sync(endpoint: DeviceEndpoint, hub: LocalHub) -> None:
    """One full sync from a device's point of view: send, wait, adopt.

    Under a synchronous coordinator this only completes inline for the last
    device of a round; use :func:`sync_round` to run a whole barrier round
    deterministically.
    """
    inbox = hub.inboxes.get(endpoint.device_id)
    if inbox is None or inbox.closed:
        raise DeviceHaltedError(
            f"device {endpoint.device_id} has no open channel to the coordinator")
    hub.send_update(endpoint.make_update())
    endpoint.apply_broadcast(hub.take_reply(endpoint.device_id))


def sync_round(endpoints, hub: LocalHub) -> None:
    """Run one synchronous barrier round over all endpoints, deterministically.

    All devices send first (in the order given), then all adopt the
    broadcast. Matches the blocking semantics of real device loops without
    threads.
    """
    for endpoint in endpoints:
        hub.send_update(endpoint.make_update())
    for endpoint in endpoints:
        endpoint.apply_broadcast(hub.take_reply(endpoint.device_id))
