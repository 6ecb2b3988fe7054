"""In-process message passing between rank threads, with traffic accounting.

A :class:`TransportGroup` connects ``size`` ranks. Sends are buffered and
never block; receives are posted as handles and completed by ``wait``.
Messages sharing a (source, dest, tag) triple are delivered in send order.
When every live rank is blocked and none of the blocking conditions can ever
be satisfied, the group fails all waiters with :class:`DeadlockError`.
"""
from __future__ import annotations

import copy
import csv
import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np


class TransportError(RuntimeError):
    pass


class DeadlockError(TransportError):
    pass


def payload_nbytes(payload) -> int:
    if isinstance(payload, np.ndarray):
        return int(payload.nbytes)
    if isinstance(payload, (bytes, bytearray, memoryview)):
        return len(payload)
    if payload is None:
        return 0
    raise TypeError(f"unsupported payload type {type(payload).__name__}")


def _copy_payload(payload):
    if isinstance(payload, np.ndarray):
        return payload.copy()
    if isinstance(payload, (bytearray, memoryview)):
        return bytes(payload)
    return copy.copy(payload)


def _phase_of(tag) -> str:
    if isinstance(tag, tuple) and tag:
        return str(tag[0])
    return "default"


@dataclass
class TrafficCounter:
    msgs_sent: int = 0
    bytes_sent: int = 0
    msgs_recv: int = 0
    bytes_recv: int = 0


@dataclass(eq=False)
class RecvHandle:
    rank: int
    source: int
    tag: object
    done: bool = False
    payload: object = None

    def __repr__(self) -> str:
        state = "done" if self.done else "pending"
        return f"RecvHandle(rank={self.rank}, source={self.source}, tag={self.tag!r}, {state})"


@dataclass(eq=False)
class SendHandle:
    rank: int
    dest: int
    tag: object
    nbytes: int
    done: bool = True


@dataclass(eq=False)
class _Waiter:
    rank: int
    what: str
    ready: object  # callable returning bool


class TransportGroup:
    """Message passing among ``size`` ranks.

    Parameters
    ----------
    size : int
        Number of ranks.
    seed : int, optional
        Seeds per-rank random pauses before every transport call, which
        perturbs the interleaving of rank threads in :meth:`run`.
    jitter : float
        Upper bound of those pauses in seconds (0 disables them).
    """

    def __init__(self, size: int, seed: int | None = None, jitter: float = 0.0):
        if size < 1:
            raise ValueError("group size must be at least 1")
        self.size = int(size)
        self._cond = threading.Condition()
        self._mail: dict = defaultdict(deque)
        self._posted: dict = {}
        self._waiters: list[_Waiter] = []
        self._active = 0
        self._failure: Exception | None = None
        self._barrier_count = 0
        self._barrier_gen = 0
        self._collective_seq = [0] * self.size
        self.counters: dict = defaultdict(TrafficCounter)
        self.jitter = float(jitter)
        self._rngs = [random.Random(None if seed is None else seed * 1_000_003 + r)
                      for r in range(self.size)]

    # -- helpers -----------------------------------------------------------
    def _check_rank(self, rank, what="rank"):
        if not 0 <= rank < self.size:
            raise TransportError(f"{what} {rank} out of range for group of {self.size}")

    def _pause(self, rank):
        if self.jitter > 0:
            time.sleep(self._rngs[rank].uniform(0, self.jitter))

    def _block_until(self, rank: int, ready, what: str) -> None:
        """Wait on the condition (lock held) until ``ready()``; detect deadlock."""
        waiter = _Waiter(rank, what, ready)
        self._waiters.append(waiter)
        try:
            while True:
                if self._failure is not None:
                    raise self._failure
                if ready():
                    return
                if len(self._waiters) >= self._active and not any(w.ready() for w in self._waiters):
                    pending = [repr(h) for h in self._posted.values() if not h.done]
                    blocked = [f"rank {w.rank}: {w.what}" for w in self._waiters]
                    err = DeadlockError(
                        "all live ranks are blocked; waiting on " + "; ".join(blocked)
                        + ("; pending receives: " + ", ".join(pending) if pending else ""))
                    if self._active:
                        # fail the other blocked rank threads as well
                        self._failure = err
                        self._cond.notify_all()
                    raise err
                self._cond.wait(timeout=0.5)
        finally:
            self._waiters.remove(waiter)

    # -- point to point ----------------------------------------------------
    def post_recv(self, rank: int, source: int, tag) -> RecvHandle:
        self._check_rank(rank)
        self._check_rank(source, "source")
        if source == rank:
            raise TransportError("a rank cannot receive from itself")
        self._pause(rank)
        key = (rank, source, tag)
        with self._cond:
            if key in self._posted:
                raise TransportError(f"receive already posted for source {source}, tag {tag!r}")
            handle = RecvHandle(rank, source, tag)
            self._posted[key] = handle
            return handle

    def send(self, rank: int, dest: int, tag, payload) -> SendHandle:
        self._check_rank(rank)
        self._check_rank(dest, "dest")
        if dest == rank:
            raise TransportError("a rank cannot send to itself")
        nbytes = payload_nbytes(payload)
        data = _copy_payload(payload)
        self._pause(rank)
        with self._cond:
            self._mail[(dest, rank, tag)].append(data)
            c = self.counters[(rank, _phase_of(tag))]
            c.msgs_sent += 1
            c.bytes_sent += nbytes
            self._cond.notify_all()
        return SendHandle(rank, dest, tag, nbytes)

    def test(self, handle: RecvHandle) -> bool:
        with self._cond:
            return handle.done or bool(self._mail.get((handle.rank, handle.source, handle.tag)))

    def wait(self, handle: RecvHandle):
        """Complete a posted receive and return its payload."""
        if isinstance(handle, SendHandle):
            return None
        self._pause(handle.rank)
        key = (handle.rank, handle.source, handle.tag)
        with self._cond:
            if handle.done:
                raise TransportError(f"{handle!r} already completed")
            if self._posted.get(key) is not handle:
                raise TransportError(f"{handle!r} was not posted to this group")
            box = self._mail[key]
            self._block_until(handle.rank, lambda: bool(box),
                              f"receive from {handle.source} tag {handle.tag!r}")
            data = box.popleft()
            if not box:
                del self._mail[key]
            handle.payload = data
            handle.done = True
            del self._posted[key]
            c = self.counters[(handle.rank, _phase_of(handle.tag))]
            c.msgs_recv += 1
            c.bytes_recv += payload_nbytes(data)
            return data

    def waitall(self, handles) -> list:
        return [self.wait(h) for h in handles]

    def recv(self, rank: int, source: int, tag):
        return self.wait(self.post_recv(rank, source, tag))

    # -- collectives -------------------------------------------------------
    def barrier(self, rank: int) -> None:
        self._check_rank(rank)
        self._pause(rank)
        with self._cond:
            gen = self._barrier_gen
            self._barrier_count += 1
            if self._barrier_count == self.size:
                self._barrier_count = 0
                self._barrier_gen += 1
                self._cond.notify_all()
                return
            self._block_until(rank, lambda: self._barrier_gen != gen, "barrier")

    def all_to_all(self, rank: int, payloads, phase: str = "alltoall") -> list:
        """Rank ``rank`` sends payloads[j] to rank j and returns the list received.

        Element i of the result is the payload rank i addressed to this rank.
        All ranks must call this the same number of times.
        """
        self._check_rank(rank)
        payloads = list(payloads)
        if len(payloads) != self.size:
            raise TransportError(f"all_to_all needs {self.size} payloads, got {len(payloads)}")
        kinds = {(type(p), getattr(p, "dtype", None), getattr(p, "ndim", None)) for p in payloads}
        if len(kinds) > 1:
            raise TransportError("all_to_all payloads have mismatched types or shapes")
        seq = self._collective_seq[rank]
        self._collective_seq[rank] += 1
        handles = {j: self.post_recv(rank, j, (phase, "a2a", seq, j, rank))
                   for j in range(self.size) if j != rank}
        for j in range(self.size):
            if j != rank:
                self.send(rank, j, (phase, "a2a", seq, rank, j), payloads[j])
        out = [None] * self.size
        out[rank] = _copy_payload(payloads[rank])
        for j, h in handles.items():
            out[j] = self.wait(h)
        self.barrier(rank)
        return out

    # -- running ranks -----------------------------------------------------
    def endpoint(self, rank: int) -> "Endpoint":
        self._check_rank(rank)
        return Endpoint(self, rank)

    def run(self, fn, *args, **kwargs) -> list:
        """Run ``fn(endpoint, *args, **kwargs)`` on every rank in its own thread."""
        results = [None] * self.size
        errors: list = []

        def worker(r):
            try:
                results[r] = fn(self.endpoint(r), *args, **kwargs)
            except BaseException as exc:  # propagate to the caller
                errors.append((r, exc))
                with self._cond:
                    if self._failure is None:
                        self._failure = TransportError(f"rank {r} failed: {exc!r}")
                    self._cond.notify_all()
            finally:
                with self._cond:
                    self._active -= 1
                    self._cond.notify_all()

        with self._cond:
            if self._active:
                raise TransportError("group is already running")
            self._active = self.size
            self._failure = None
        threads = [threading.Thread(target=worker, args=(r,), daemon=True) for r in range(self.size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            # report the root cause rather than a secondary failure
            errors.sort(key=lambda e: isinstance(e[1], TransportError) and "failed:" in str(e[1]))
            raise errors[0][1]
        return results

    # -- accounting --------------------------------------------------------
    def totals(self, phase: str | None = None) -> TrafficCounter:
        out = TrafficCounter()
        for (rank, ph), c in self.counters.items():
            if phase is None or ph == phase:
                out.msgs_sent += c.msgs_sent
                out.bytes_sent += c.bytes_sent
                out.msgs_recv += c.msgs_recv
                out.bytes_recv += c.bytes_recv
        return out

    def rank_totals(self, rank: int) -> TrafficCounter:
        out = TrafficCounter()
        for (r, _), c in self.counters.items():
            if r == rank:
                out.msgs_sent += c.msgs_sent
                out.bytes_sent += c.bytes_sent
                out.msgs_recv += c.msgs_recv
                out.bytes_recv += c.bytes_recv
        return out

    def traffic_rows(self) -> list:
        return [{"rank": r, "phase": ph, **vars(c)} for (r, ph), c in sorted(self.counters.items())]

    def write_traffic_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["rank", "phase", "msgs_sent", "bytes_sent", "msgs_recv", "bytes_recv"])
            for row in self.traffic_rows():
                out.writerow([row["rank"], row["phase"], row["msgs_sent"], row["bytes_sent"],
                              row["msgs_recv"], row["bytes_recv"]])

    def in_flight(self) -> int:
        with self._cond:
            return sum(len(q) for q in self._mail.values())


@dataclass(frozen=True)
class Endpoint:
    """A rank's view of its group."""

    group: TransportGroup
    rank: int

    @property
    def size(self) -> int:
        return self.group.size

    def send(self, dest, tag, payload):
        return self.group.send(self.rank, dest, tag, payload)

    def post_recv(self, source, tag):
        return self.group.post_recv(self.rank, source, tag)

    def wait(self, handle):
        return self.group.wait(handle)

    def waitall(self, handles):
        return self.group.waitall(handles)

    def recv(self, source, tag):
        return self.group.recv(self.rank, source, tag)

    def barrier(self):
        self.group.barrier(self.rank)

    def all_to_all(self, payloads, phase="alltoall"):
        return self.group.all_to_all(self.rank, payloads, phase)
