# -*- coding: utf-8 -*-
"""Slot-level simulation of buffered slotted Aloha with K-exponential backoff.

The network state is two integer arrays, queue lengths and HOL phases, one
entry per node. In each slot, packets arrive first (Bernoulli, rate λ per
node), so a packet reaching an empty queue may transmit in that same slot.
Every busy node then transmits with probability q**phase. A lone transmitter
succeeds and its next packet, if any, starts over at phase 0; colliding HOL
packets advance one phase, up to the cutoff.

Random draws come from numpy generators spawned off one master seed: one
stream for arrivals and one per node. They are drawn in chunks of slots, so
a run is reproducible bit for bit.

-------

This program is free software: you can redistribute it and/or modify it under
the terms of the GNU General Public License as published by the Free Software
Foundation, either version 3 of the License, or (at your option) any later
version.

This program is distributed in the hope that it will be useful, but WITHOUT ANY
WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS FOR A
PARTICULAR PURPOSE. See the GNU General Public License for more details.

You should have received a copy of the GNU General Public License along with
this program. If not, see <https://www.gnu.org/licenses/>.

"""

###########
# IMPORTS #
###########

import enum
import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from alohalab.errors import DomainError
from alohalab.steady_state import NetworkConfig

#############
# CONSTANTS #
#############

DEFAULT_SEED = 20080422
DEFAULT_WARMUP_SLOTS = 100_000
DEFAULT_MEASURE_SLOTS = 1_000_000

# Slots of random draws generated at once.
CHUNK_SLOTS = 4096

# Chunks between progress messages.
_PROGRESS_CHUNKS = 256

# Winner recorded for a slot without a success.
NO_WINNER = -1

###########
# CLASSES #
###########


class Outcome(enum.Enum):
    IDLE = 'idle'
    SUCCESS = 'success'
    COLLISION = 'collision'


@dataclass(frozen=True)
class SlotOutcome:
    """What happened on the channel in one slot, and to which nodes."""

    outcome: Outcome
    nodes: Tuple[int, ...] = ()


@dataclass(frozen=True)
class NodeState:
    """A snapshot of one node. The phase means nothing on an empty queue."""

    queue_length: int
    hol_phase: int
    attempts: int
    successes: int
    busy_slots: int


@dataclass(frozen=True)
class SlotDraws:
    """Random input for one slot: a uniform per node, and arrival flags."""

    uniforms: np.ndarray
    arrivals: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SimConfig:
    network: NetworkConfig
    seed: int = DEFAULT_SEED
    warmup_slots: int = DEFAULT_WARMUP_SLOTS
    measure_slots: int = DEFAULT_MEASURE_SLOTS
    saturated: bool = False
    trace_node: Optional[int] = None

    def __post_init__(self):
        if self.measure_slots < 1:
            raise DomainError(f'Need at least one measured slot, not '
                              f'{self.measure_slots}.')
        if self.warmup_slots < 0:
            raise DomainError(f'Warmup cannot be negative: '
                              f'{self.warmup_slots}.')
        if self.seed < 0:
            raise DomainError(f'Seed must be non-negative: {self.seed}.')
        if self.trace_node is not None and not \
                0 <= self.trace_node < self.network.n:
            raise DomainError(f'Node index {self.trace_node} out of range '
                              f'for {self.network.n} nodes.')


@dataclass(frozen=True, eq=False)
class SimMetrics:
    """Counters from the measured slots of one run, and estimates from them.

    Totals of arrivals and departures cover the whole run, warmup included,
    so that they balance against the final queue lengths.

    """

    config: SimConfig
    slots: int
    attempts: int
    successes: int
    collisions: int
    idle_slots: int
    busy_node_slots: int
    arrivals_total: int
    departures_total: int
    final_queue_lengths: np.ndarray
    node_attempts: np.ndarray
    node_successes: np.ndarray
    node_busy_slots: np.ndarray
    phase_histogram: np.ndarray
    queue_trace: Optional[np.ndarray] = None
    winner_trace: Optional[np.ndarray] = None

    @property
    def p_hat(self) -> float:
        """Return successes per attempt, or 1 without any attempt."""
        if self.attempts == 0:
            return 1.0
        return self.successes / self.attempts

    @property
    def g_hat(self) -> float:
        return self.attempts / self.slots

    @property
    def throughput_hat(self) -> float:
        return self.successes / self.slots

    @property
    def rho_hat(self) -> float:
        """Return the fraction of node-slots with a non-empty queue."""
        return self.busy_node_slots / (self.config.network.n * self.slots)

    @property
    def empirical_phases(self) -> np.ndarray:
        """Return the empirical HOL phase distribution, f_0 first."""
        total = self.phase_histogram.sum()
        if total == 0:
            return self.phase_histogram.astype(float)
        return self.phase_histogram / total

    @property
    def trace_start(self) -> int:
        """Return the index of the first measured slot."""
        return self.config.warmup_slots

    def trace_rows(self) -> Iterator[Tuple[int, int]]:
        """Generate (slot, queue length) for the traced node."""
        if self.queue_trace is None:
            return
        for offset, length in enumerate(self.queue_trace):
            yield self.trace_start + offset, int(length)

    def departures_of(self, node: int) -> np.ndarray:
        """Return per-slot flags of successful transmissions by a node."""
        if self.winner_trace is None:
            raise DomainError('Departures per slot need a traced run.')
        return self.winner_trace == node

    def identical(self, other: 'SimMetrics') -> bool:
        """Compare every counter and array with another run's."""
        for name in self.__dataclass_fields__:
            mine, theirs = getattr(self, name), getattr(other, name)
            if isinstance(mine, np.ndarray) or isinstance(theirs, np.ndarray):
                if mine is None or theirs is None or \
                        not np.array_equal(mine, theirs):
                    return False
            elif mine != theirs:
                return False
        return True


@dataclass(frozen=True)
class CaptureStatistics:
    """Departure patterns of one node.

    A burst is a run of that node's successes with no other node's success
    in between; idle and collided slots do not break it.

    """

    node: int
    longest_silence: int
    longest_burst: int
    departures: int


class RandomStreams:
    """Per-node and arrival generators spawned from one master seed."""

    def __init__(self, seed: int, nodes: int):
        children = np.random.SeedSequence(seed).spawn(nodes + 1)
        self.nodes = nodes
        self._arrivals = np.random.default_rng(children[0])
        self._per_node = [np.random.default_rng(c) for c in children[1:]]

    def chunk(self,
              slots: int,
              rate: float,
              arrivals: bool = True
              ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Draw uniforms and arrival flags for a number of slots.

        Both arrays are indexed [slot, node]. Each node's uniforms come from
        that node's own stream.

        """
        uniforms = np.column_stack([g.random(slots) for g in self._per_node])
        if not arrivals:
            return uniforms, None
        return uniforms, self._arrivals.random((slots, self.nodes)) < rate


@dataclass(eq=False)
class SlottedAlohaNetwork:
    """Mutable state of all n nodes, advanced one slot at a time."""

    network: NetworkConfig
    saturated: bool = False
    queue: np.ndarray = field(init=False)
    phase: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.network.n
        self.queue = np.full(n, 1 if self.saturated else 0, dtype=np.int64)
        self.phase = np.zeros(n, dtype=np.int64)
        self._cap = None if self.network.unbounded else self.network.cutoff
        self.arrivals_total = 0
        self.departures_total = 0
        self.reset_counters()

    def reset_counters(self):
        """Zero the measurement counters; queues and phases are kept."""
        n = self.network.n
        self.slots = 0
        self.attempts = 0
        self.successes = 0
        self.collisions = 0
        self.idle_slots = 0
        self.node_attempts = np.zeros(n, dtype=np.int64)
        self.node_successes = np.zeros(n, dtype=np.int64)
        self.node_busy_slots = np.zeros(n, dtype=np.int64)
        self.phase_histogram = np.zeros(2, dtype=np.int64)

    def node(self, index: int) -> NodeState:
        return NodeState(int(self.queue[index]), int(self.phase[index]),
                         int(self.node_attempts[index]),
                         int(self.node_successes[index]),
                         int(self.node_busy_slots[index]))

    def step(self, draws: SlotDraws) -> SlotOutcome:
        """Advance the network by one slot."""
        if draws.arrivals is not None and not self.saturated:
            self.queue += draws.arrivals
            self.arrivals_total += int(np.count_nonzero(draws.arrivals))

        busy = self.queue > 0
        transmit = busy & (draws.uniforms < self.network.q**self.phase)
        self.slots += 1
        self.node_busy_slots += busy
        self.node_attempts += transmit
        self._count_phases(self.phase[busy])

        transmitters = np.flatnonzero(transmit)
        self.attempts += len(transmitters)
        if len(transmitters) == 1:
            winner = int(transmitters[0])
            self.successes += 1
            self.node_successes[winner] += 1
            self.phase[winner] = 0
            if not self.saturated:
                self.queue[winner] -= 1
                self.departures_total += 1
            return SlotOutcome(Outcome.SUCCESS, (winner, ))
        if len(transmitters) > 1:
            self.collisions += 1
            self.phase[transmitters] += 1
            if self._cap is not None:
                np.minimum(self.phase, self._cap, out=self.phase)
            return SlotOutcome(Outcome.COLLISION,
                               tuple(int(i) for i in transmitters))
        self.idle_slots += 1
        return SlotOutcome(Outcome.IDLE)

    def _count_phases(self, phases: np.ndarray):
        counts = np.bincount(phases)
        if len(counts) > len(self.phase_histogram):
            self.phase_histogram = np.pad(
                self.phase_histogram,
                (0, len(counts) - len(self.phase_histogram)))
        self.phase_histogram[:len(counts)] += counts


#######################
# INTERFACE FUNCTIONS #
#######################


def run(config: SimConfig) -> SimMetrics:
    """Simulate warmup slots, then measure."""
    network = config.network
    state = SlottedAlohaNetwork(network, saturated=config.saturated)
    streams = RandomStreams(config.seed, network.n)
    logging.info(f'Simulating n = {network.n}, λ̂ = {network.aggregate_rate}, '
                 f'K = {network.cutoff}, q = {network.q} for '
                 f'{config.warmup_slots} + {config.measure_slots} slots.')

    _advance(state, streams, config.warmup_slots, network.rate)
    state.reset_counters()

    queue_trace = winner_trace = None
    if config.trace_node is None:
        _advance(state, streams, config.measure_slots, network.rate)
    else:
        queue_trace = np.zeros(config.measure_slots, dtype=np.int64)
        winner_trace = np.full(config.measure_slots,
                               NO_WINNER,
                               dtype=np.int32)
        _advance(state, streams, config.measure_slots, network.rate,
                 trace=(config.trace_node, queue_trace, winner_trace))

    return SimMetrics(config=config,
                      slots=state.slots,
                      attempts=state.attempts,
                      successes=state.successes,
                      collisions=state.collisions,
                      idle_slots=state.idle_slots,
                      busy_node_slots=int(state.node_busy_slots.sum()),
                      arrivals_total=state.arrivals_total,
                      departures_total=state.departures_total,
                      final_queue_lengths=state.queue.copy(),
                      node_attempts=state.node_attempts,
                      node_successes=state.node_successes,
                      node_busy_slots=state.node_busy_slots,
                      phase_histogram=state.phase_histogram,
                      queue_trace=queue_trace,
                      winner_trace=winner_trace)


def sweep(configs: Sequence[SimConfig],
          workers: int = 1) -> List[Tuple[float, SimMetrics]]:
    """Run configurations that differ only in q, one row per q, in order."""
    if not configs:
        return []
    first = configs[0].network
    for config in configs[1:]:
        other = config.network
        if (other.n, other.aggregate_rate, other.cutoff) != \
                (first.n, first.aggregate_rate, first.cutoff):
            raise DomainError('Sweep rows must share n, λ̂ and K.')

    if workers > 1 and len(configs) > 1:
        with multiprocessing.Pool(min(workers, len(configs))) as pool:
            results = pool.map(run, configs)
    else:
        results = [run(c) for c in configs]
    return [(c.network.q, m) for c, m in zip(configs, results)]


def row_seeds(seed: int, count: int) -> List[int]:
    """Derive independent 64-bit seeds for the rows of a sweep."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def standard_error(metrics: SimMetrics) -> float:
    """Return the binomial standard error of p_hat."""
    if metrics.attempts == 0:
        return 0.0
    p = metrics.p_hat
    return math.sqrt(p * (1 - p) / metrics.attempts)


def capture_statistics(metrics: SimMetrics,
                       node: Optional[int] = None) -> CaptureStatistics:
    """Find a node's longest silence and longest uninterrupted burst.

    The node defaults to the traced one. Any node can be examined, since a
    traced run records the winner of every measured slot.

    """
    if metrics.winner_trace is None:
        raise DomainError('Capture statistics need a traced node.')
    if node is None:
        node = metrics.config.trace_node
    assert node is not None
    departures = metrics.departures_of(node)
    winners = metrics.winner_trace[metrics.winner_trace != NO_WINNER]
    return CaptureStatistics(node, _longest_run(departures, False),
                             _longest_run(winners == node, True),
                             int(np.count_nonzero(departures)))


############
# INTERNAL #
############


def _advance(state: SlottedAlohaNetwork,
             streams: RandomStreams,
             slots: int,
             rate: float,
             trace: Optional[Tuple[int, np.ndarray, np.ndarray]] = None):
    """Step through a number of slots, drawing randomness in chunks."""
    arrivals = not state.saturated
    done = 0
    chunks = 0
    while done < slots:
        size = min(CHUNK_SLOTS, slots - done)
        uniforms, flags = streams.chunk(size, rate, arrivals)
        for i in range(size):
            outcome = state.step(
                SlotDraws(uniforms[i], None if flags is None else flags[i]))
            if trace is not None:
                node, queue_trace, winner_trace = trace
                queue_trace[done + i] = state.queue[node]
                if outcome.outcome is Outcome.SUCCESS:
                    winner_trace[done + i] = outcome.nodes[0]
        done += size
        chunks += 1
        if chunks % _PROGRESS_CHUNKS == 0:
            logging.debug(f'{done} of {slots} slots.')


def _longest_run(flags: np.ndarray, value: bool) -> int:
    matches = np.concatenate(([False], flags == value, [False]))
    edges = np.flatnonzero(np.diff(matches.astype(np.int8)))
    if len(edges) == 0:
        return 0
    return int((edges[1::2] - edges[::2]).max())
