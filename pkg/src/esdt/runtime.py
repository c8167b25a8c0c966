"""Master-worker execution of ES generations with seed-only communication.

The master broadcasts small task messages; workers evaluate their slice of
the population and return scalar fitnesses; every node then reconstructs the
identical parameter update locally from the (offset, sign, weight) list.
Full parameter vectors only ever cross the wire on an explicit resync.

Determinism rules:

* episode seeds and VBN-collection coin flips are pure functions of
  (master_seed, iteration, population index), so results do not depend on
  which worker evaluated what;
* the master consumes results in canonical population order, never arrival
  order, and VBN batches are merged in that same order;
* episode seeds alternate parity with the episode number, so environments
  that key a hidden bit on parity (key_corridor) see balanced draws.
"""

import hashlib
import queue
import socket
import struct
import time

import numpy as np

from . import es
from .errors import TransportError, WorkerFailure
from .protocol import (
    PROTOCOL_VERSION,
    RegisterMessage,
    ResultMessage,
    ResyncReplyMessage,
    ResyncRequestMessage,
    ShutdownMessage,
    TaskMessage,
    UpdateMessage,
    decode,
    encode,
)

_EPISODE_TAG = 0xE5EED
_VBN_TAG = 0xB47C4
_EVAL_TAG = 0xEA1


def theta_digest(theta):
    """64-bit content digest of a parameter vector."""
    h = hashlib.blake2b(np.ascontiguousarray(theta, dtype="<f8").tobytes(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def episode_seed(master_seed, iteration, entry_index, episode):
    """Deterministic env seed; its parity follows the episode number.

    Antithetic partners (entries 2i and 2i+1) share seeds, so the +/- pair
    is compared on the same episodes (common random numbers).
    """
    pair = int(entry_index) // 2
    ss = np.random.SeedSequence([int(master_seed), _EPISODE_TAG, int(iteration), pair, int(episode)])
    raw = int(ss.generate_state(1, np.uint64)[0])
    return (raw & ~1) | (episode & 1)


def eval_seed(master_seed, k):
    """Held-out evaluation seed (fixed across iterations), parity of k."""
    ss = np.random.SeedSequence([int(master_seed), _EVAL_TAG, int(k)])
    raw = int(ss.generate_state(1, np.uint64)[0])
    return (raw & ~1) | (k & 1)


def vbn_coin(master_seed, iteration, entry_index):
    """Uniform [0,1) draw deciding whether an evaluation donates VBN data."""
    ss = np.random.SeedSequence([int(master_seed), _VBN_TAG, int(iteration), int(entry_index)])
    return float(np.random.default_rng(ss).random())


# ---------------------------------------------------------------------------
# Transports


class Connection:
    """One end of a framed message channel with byte accounting."""

    def __init__(self):
        self.bytes_sent = 0
        self.bytes_received = 0

    def send(self, msg):
        frame = encode(msg)
        self.bytes_sent += len(frame)
        self._send_frame(frame)

    def recv(self, timeout=None):
        frame = self._recv_frame(timeout)
        self.bytes_received += len(frame)
        return decode(frame)

    def close(self):
        pass


class InProcConnection(Connection):
    def __init__(self, inbox, outbox):
        super().__init__()
        self._inbox = inbox
        self._outbox = outbox

    def _send_frame(self, frame):
        self._outbox.put(frame)

    def _recv_frame(self, timeout):
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("in-process recv timed out") from None


def inproc_pair():
    """(master_side, worker_side) connections over in-process queues."""
    a, b = queue.Queue(), queue.Queue()
    return InProcConnection(a, b), InProcConnection(b, a)


class TcpConnection(Connection):
    def __init__(self, sock):
        super().__init__()
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _send_frame(self, frame):
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _read_exact(self, n, deadline):
        chunks = []
        got = 0
        while got < n:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportError("tcp recv timed out")
                self._sock.settimeout(remaining)
            else:
                self._sock.settimeout(None)
            try:
                chunk = self._sock.recv(n - got)
            except socket.timeout:
                raise TransportError("tcp recv timed out") from None
            except OSError as exc:
                raise TransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise TransportError("connection closed by peer")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def _recv_frame(self, timeout):
        deadline = None if timeout is None else time.monotonic() + timeout
        header = self._read_exact(4, deadline)
        (length,) = struct.unpack("<I", header)
        body = self._read_exact(length, deadline)
        return header + body

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


def tcp_listen(addr, n_workers, timeout=60.0):
    """Accept and register ``n_workers`` TCP workers; returns their connections."""
    host, port = addr.rsplit(":", 1)
    server = socket.create_server((host, int(port)))
    server.settimeout(timeout)
    conns = {}
    try:
        while len(conns) < n_workers:
            try:
                sock, _ = server.accept()
            except socket.timeout:
                raise TransportError(
                    f"only {len(conns)}/{n_workers} workers registered before timeout"
                ) from None
            conn = TcpConnection(sock)
            hello = conn.recv(timeout=timeout)
            if not isinstance(hello, RegisterMessage) or hello.protocol_version != PROTOCOL_VERSION:
                conn.close()
                raise TransportError(f"bad registration from worker: {hello!r}")
            conns[hello.worker_id] = conn
    finally:
        server.close()
    return [conns[w] for w in sorted(conns)]


def tcp_connect(addr, worker_id, timeout=60.0, retry_for=30.0):
    """Connect a worker to the master, retrying while it comes up."""
    host, port = addr.rsplit(":", 1)
    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection((host, int(port)), timeout=timeout)
            break
        except OSError:
            if time.monotonic() >= deadline:
                raise TransportError(f"could not reach master at {addr}") from None
            time.sleep(0.2)
    conn = TcpConnection(sock)
    conn.send(RegisterMessage(worker_id=worker_id))
    return conn


# ---------------------------------------------------------------------------
# Worker


class WorkerContext:
    """Everything a worker owns: config-derived constants plus its ES mirror."""

    def __init__(self, worker_id, state, table, fitness, population,
                 master_seed, vbn_probability):
        self.worker_id = worker_id
        self.state = state
        self.table = table
        self.fitness = fitness
        self.population = population
        self.master_seed = master_seed
        self.vbn_probability = vbn_probability
        self.needs_resync = False


def _install_resync(ctx, reply):
    st = ctx.state
    st.theta = reply.theta
    st.iteration = reply.iteration
    st.optimizer.kind = reply.opt_kind
    st.optimizer.learning_rate = reply.learning_rate
    st.optimizer.step = reply.opt_step
    st.optimizer.m = reply.opt_m
    st.optimizer.v = reply.opt_v
    st.vbn = reply.vbn
    if theta_digest(st.theta) != reply.theta_version:
        raise TransportError("resync reply digest mismatch; aborting")
    ctx.needs_resync = False


def worker_loop(conn, ctx):
    """Serve tasks until shutdown; keeps a bit-exact replica of the ES state."""
    while True:
        msg = conn.recv()
        if isinstance(msg, ShutdownMessage):
            return
        if isinstance(msg, ResyncReplyMessage):
            _install_resync(ctx, msg)
            continue
        if isinstance(msg, UpdateMessage):
            _apply_update(ctx, msg)
            continue
        if isinstance(msg, TaskMessage):
            _serve_task(conn, ctx, msg)
            continue
        raise TransportError(f"worker got unexpected message {type(msg).__name__}")


def _serve_task(conn, ctx, task):
    if ctx.needs_resync or theta_digest(ctx.state.theta) != task.theta_version:
        conn.send(ResyncRequestMessage(worker_id=ctx.worker_id))
        reply = conn.recv()
        if not isinstance(reply, ResyncReplyMessage):
            raise TransportError(f"expected resync reply, got {type(reply).__name__}")
        _install_resync(ctx, reply)
        if theta_digest(ctx.state.theta) != task.theta_version:
            raise TransportError("theta still diverges after resync")
    ctx.state.sigma = task.sigma
    pairs = es.sample_offsets(
        task.rng_seed, task.iteration, ctx.population, ctx.table,
        ctx.state.theta.shape[0],
    )
    entries = []
    for local in range(task.count):
        idx = task.first_index + local
        offset, sign = pairs[idx]
        params = es.perturb(ctx.state.theta, ctx.table, offset, sign, task.sigma)
        seeds = [
            episode_seed(ctx.master_seed, task.iteration, idx, e)
            for e in range(task.episodes_per_eval)
        ]
        collect = vbn_coin(ctx.master_seed, task.iteration, idx) < ctx.vbn_probability
        fit, steps, batch = ctx.fitness(params, seeds, ctx.state.vbn, collect)
        entries.append(es.GenerationEntry(offset, sign, float(fit), int(steps), batch))
    conn.send(ResultMessage(worker_id=ctx.worker_id, entries=entries))


def _apply_update(ctx, update):
    entries = [es.GenerationEntry(off, sign, 0.0, 0) for off, sign, _ in update.entries]
    weights = np.array([w for _, _, w in update.entries])
    es.apply_generation(ctx.state, entries, weights, ctx.table)
    ctx.state.vbn = update.vbn
    if theta_digest(ctx.state.theta) != update.theta_version:
        # Diverged replica: recover at the next task instead of blocking here.
        ctx.needs_resync = True


# ---------------------------------------------------------------------------
# Master


class IterationRecord:
    def __init__(self, iteration, mean_fitness, max_fitness, total_steps, bytes_sent):
        self.iteration = iteration
        self.mean_fitness = mean_fitness
        self.max_fitness = max_fitness
        self.total_steps = total_steps
        self.bytes_sent = bytes_sent


def partition(population, n_workers):
    """Contiguous (first, count) slices covering 0..population-1 exactly."""
    chunk = -(-population // n_workers)
    slices = []
    first = 0
    for _ in range(n_workers):
        count = min(chunk, population - first)
        slices.append((first, max(count, 0)))
        first += max(count, 0)
    return slices


class Master:
    """Coordinates one ES run over a set of worker connections."""

    def __init__(self, state, table, conns, population, episodes_per_eval,
                 master_seed, vbn_probability, worker_timeout=120.0):
        self.state = state
        self.table = table
        self.conns = conns
        self.population = population
        self.episodes_per_eval = episodes_per_eval
        self.master_seed = master_seed
        self.vbn_probability = vbn_probability
        self.worker_timeout = worker_timeout

    def _traffic(self):
        return sum(c.bytes_sent + c.bytes_received for c in self.conns)

    def _resync_reply(self):
        st = self.state
        return ResyncReplyMessage(
            iteration=st.iteration,
            theta=st.theta,
            opt_kind=st.optimizer.kind,
            learning_rate=st.optimizer.learning_rate,
            opt_step=st.optimizer.step,
            opt_m=st.optimizer.m,
            opt_v=st.optimizer.v,
            vbn=st.vbn,
            theta_version=theta_digest(st.theta),
        )

    def _collect(self, pending, results):
        """Wait for one ResultMessage per pending worker; serve resyncs inline.

        Returns the worker indices that failed to deliver in time.
        """
        deadline = time.monotonic() + self.worker_timeout
        missing = set(pending)
        for w in list(pending):
            conn = self.conns[w]
            while w in missing:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                try:
                    msg = conn.recv(timeout=remaining)
                except TransportError:
                    break
                if isinstance(msg, ResyncRequestMessage):
                    conn.send(self._resync_reply())
                elif isinstance(msg, ResultMessage):
                    results[w] = msg
                    missing.discard(w)
                else:
                    raise TransportError(f"unexpected {type(msg).__name__} from worker")
        return missing

    def run_iteration(self):
        """Sample, dispatch, collect, update, broadcast; one full generation."""
        st = self.state
        before = self._traffic()
        t0 = time.monotonic()
        pairs = es.sample_offsets(
            st.rng_seed, st.iteration, self.population, self.table, st.theta.shape[0]
        )
        version = theta_digest(st.theta)
        slices = partition(self.population, len(self.conns))

        def task_for(first, count):
            return TaskMessage(
                iteration=st.iteration,
                rng_seed=st.rng_seed,
                sigma=st.sigma,
                episodes_per_eval=self.episodes_per_eval,
                first_index=first,
                count=count,
                theta_version=version,
            )

        for w, (first, count) in enumerate(slices):
            self.conns[w].send(task_for(first, count))
        results = {}
        missing = self._collect(range(len(self.conns)), results)
        if missing:
            # One retry: hand the missing slices to workers that responded.
            alive = [w for w in range(len(self.conns)) if w not in missing]
            if not alive:
                raise WorkerFailure("all workers failed to report results")
            retry = []
            for i, w in enumerate(sorted(missing)):
                helper = alive[i % len(alive)]
                first, count = slices[w]
                self.conns[helper].send(task_for(first, count))
                retry.append((helper, w))
            extra = {}
            failed = self._collect([h for h, _ in retry], extra)
            if failed:
                raise WorkerFailure("worker failure persisted after one retry")
            for helper, w in retry:
                results[w] = extra[helper]

        # Canonical population order, independent of arrival order.
        by_index = {}
        for w, (first, count) in enumerate(slices):
            msg = results.get(w)
            if count == 0:
                continue
            if len(msg.entries) != count:
                raise TransportError(
                    f"worker returned {len(msg.entries)} entries for a slice of {count}"
                )
            for local, entry in enumerate(msg.entries):
                idx = first + local
                if (entry.offset, entry.sign) != pairs[idx]:
                    raise TransportError("worker entry does not match its assigned slice")
                if not np.isfinite(entry.fitness):
                    raise TransportError("non-finite fitness reported")
                by_index[idx] = entry
        if sorted(by_index) != list(range(self.population)):
            raise TransportError("population slices did not partition exactly")
        entries = [by_index[i] for i in range(self.population)]

        for entry in entries:
            if entry.vbn_batch is not None:
                st.vbn = es.vbn_update(st.vbn, entry.vbn_batch)
        fitnesses = np.array([e.fitness for e in entries])
        weights = es.centered_ranks(fitnesses)
        es.apply_generation(st, entries, weights, self.table)
        new_version = theta_digest(st.theta)
        update = UpdateMessage(
            iteration=st.iteration - 1,
            entries=[(e.offset, e.sign, w) for e, w in zip(entries, weights)],
            theta_version=new_version,
            vbn=st.vbn,
        )
        for conn in self.conns:
            conn.send(update)
        return IterationRecord(
            iteration=st.iteration - 1,
            mean_fitness=float(fitnesses.mean()),
            max_fitness=float(fitnesses.max()),
            total_steps=int(sum(e.episode_steps for e in entries)),
            bytes_sent=self._traffic() - before,
        ), time.monotonic() - t0

    def shutdown(self):
        for conn in self.conns:
            try:
                conn.send(ShutdownMessage())
            except TransportError:
                pass
