"""Peak-memory analysis and memory-efficient execution.

Three related tools live here:

* ``schedule_memory`` evaluates the peak of one execution order of a
  compute graph: at every step the cost is the sum of all live tensors
  plus the running op's workspace, and the peak is the max over steps.
  A tensor is live from the step that produces it (graph inputs from the
  start) through its last consuming step.

* ``min_memory_schedule`` searches all topological orders for the one
  with the smallest peak, by depth-first branch-and-bound with the
  running peak as the bound and a dominance memo on the executed set.
  Exact up to a configurable op-count limit; beyond it the caller should
  fall back to ``greedy_memory_schedule``, which is clearly labeled
  non-optimal.

* ``cascade_execute`` runs a bottleneck block as a sum over channel
  groups of the expanded tensor.  Because the inner stages act
  per-channel, the block output equals the sum over groups of
  (project o inner o expand) applied to each group's slice, so only one
  group-sized inner tensor is ever materialized.  The multiply-add count
  is independent of the group count.

``memory_table`` reproduces the per-resolution materialization summary
for a model: bottleneck blocks are treated as single operations with
disposable inner tensors, grouped by the resolution they consume, and
each resolution reports the widest output any of its blocks must hold.
The highest-resolution group (adjacent to the stem) can be executed in
channel-split streaming fashion and is reported as a single materialized
channel, excluded from the overall peak.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .blocks import BottleneckParams
from .errors import GraphError, GraphTooLargeError, InvalidShapeError
from .kernels import Conv2dParams, DepthwiseParams, conv2d, depthwise_conv, relu6
from .model import BottleneckLayer, ModelSpec, build_model
from .tensor import assert_activation


@dataclass(frozen=True)
class TensorNode:
    name: str
    nbytes: int


@dataclass(frozen=True)
class OpNode:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    workspace: int = 0


class ComputeGraph:
    """DAG of operations over sized tensors; every non-source tensor has
    exactly one producer."""

    def __init__(self, tensors: Iterable[TensorNode], ops: Iterable[OpNode]):
        self.tensors: dict[str, TensorNode] = {}
        for t in tensors:
            if t.name in self.tensors:
                raise GraphError(f"duplicate tensor {t.name!r}")
            if t.nbytes < 0:
                raise GraphError(f"tensor {t.name!r} has negative size")
            self.tensors[t.name] = t
        self.ops: list[OpNode] = list(ops)
        names = set()
        self.producer: dict[str, int] = {}
        self.consumers: dict[str, list[int]] = {n: [] for n in self.tensors}
        for i, op in enumerate(self.ops):
            if op.name in names:
                raise GraphError(f"duplicate op {op.name!r}")
            names.add(op.name)
            if len(set(op.inputs)) != len(op.inputs):
                raise GraphError(f"op {op.name!r} lists an input twice")
            for t in op.inputs + op.outputs:
                if t not in self.tensors:
                    raise GraphError(f"op {op.name!r} references unknown tensor {t!r}")
            for t in op.outputs:
                if t in self.producer:
                    raise GraphError(f"tensor {t!r} has two producers")
                self.producer[t] = i
            for t in op.inputs:
                self.consumers[t].append(i)
        self.op_index = {op.name: i for i, op in enumerate(self.ops)}
        # Predecessor ops (producers of non-source inputs).
        self.preds: list[set[int]] = []
        for op in self.ops:
            self.preds.append(
                {self.producer[t] for t in op.inputs if t in self.producer}
            )
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        indeg = [len(p) for p in self.preds]
        succs: list[list[int]] = [[] for _ in self.ops]
        for i, preds in enumerate(self.preds):
            for p in preds:
                succs[p].append(i)
        ready = [i for i, d in enumerate(indeg) if d == 0]
        seen = 0
        while ready:
            i = ready.pop()
            seen += 1
            for j in succs[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(j)
        if seen != len(self.ops):
            raise GraphError("compute graph contains a cycle")

    def sources(self) -> list[str]:
        return [n for n in self.tensors if n not in self.producer]

    def is_topological(self, order: Iterable[str]) -> bool:
        pos = {name: k for k, name in enumerate(order)}
        if len(pos) != len(self.ops) or set(pos) != set(self.op_index):
            return False
        for i, op in enumerate(self.ops):
            for p in self.preds[i]:
                if pos[self.ops[p].name] >= pos[op.name]:
                    return False
        return True

    def dump_jsonl(self, fp) -> None:
        for t in self.tensors.values():
            fp.write(json.dumps({"kind": "tensor", "name": t.name, "bytes": t.nbytes}) + "\n")
        for op in self.ops:
            fp.write(json.dumps({
                "kind": "op", "name": op.name, "inputs": list(op.inputs),
                "outputs": list(op.outputs), "workspace": op.workspace,
            }) + "\n")

    @classmethod
    def load_jsonl(cls, fp) -> "ComputeGraph":
        tensors, ops = [], []
        for line in fp:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec["kind"] == "tensor":
                tensors.append(TensorNode(rec["name"], int(rec["bytes"])))
            elif rec["kind"] == "op":
                ops.append(OpNode(rec["name"], tuple(rec["inputs"]),
                                  tuple(rec["outputs"]), int(rec.get("workspace", 0))))
            else:
                raise GraphError(f"unknown record kind {rec['kind']!r}")
        return cls(tensors, ops)


@dataclass
class Schedule:
    order: tuple[str, ...]
    optimal: bool = True


@dataclass
class StepCost:
    op: str
    live_bytes: int
    workspace: int

    @property
    def total(self) -> int:
        return self.live_bytes + self.workspace


@dataclass
class ResolutionRow:
    resolution: int
    channels: int
    nbytes: int
    streamed: bool = False

    @property
    def kilobytes(self) -> float:
        return self.nbytes / 1000.0


@dataclass
class MemoryReport:
    peak_bytes: int
    steps: Optional[list[StepCost]] = None
    rows: Optional[list[ResolutionRow]] = None

    @property
    def peak_kilobytes(self) -> float:
        return self.peak_bytes / 1000.0


def schedule_memory(g: ComputeGraph, schedule: Schedule | tuple[str, ...]) -> MemoryReport:
    """Per-step live bytes and their max for one fixed topological order."""
    order = schedule.order if isinstance(schedule, Schedule) else tuple(schedule)
    if not g.is_topological(order):
        raise GraphError("schedule is not a topological order of the graph")
    pos = {name: k for k, name in enumerate(order)}
    produced_at: dict[str, int] = {}
    last_use: dict[str, int] = {}
    for t in g.tensors:
        prod = g.producer.get(t)
        produced_at[t] = -1 if prod is None else pos[g.ops[prod].name]
        uses = [pos[g.ops[c].name] for c in g.consumers[t]]
        if prod is not None:
            uses.append(produced_at[t])  # an unconsumed output is live at its step
        last_use[t] = max(uses) if uses else -2  # unused source: never live
    steps: list[StepCost] = []
    peak = 0
    for k, name in enumerate(order):
        op = g.ops[g.op_index[name]]
        live = sum(
            g.tensors[t].nbytes
            for t in g.tensors
            if produced_at[t] <= k <= last_use[t]
        )
        steps.append(StepCost(name, live, op.workspace))
        peak = max(peak, live + op.workspace)
    return MemoryReport(peak_bytes=peak, steps=steps)


class _SearchState:
    """Incremental liveness bookkeeping shared by the search strategies."""

    def __init__(self, g: ComputeGraph):
        self.g = g
        self.refcount = {t: len(g.consumers[t]) for t in g.tensors}
        self.live = {t: g.tensors[t].nbytes for t in g.sources() if self.refcount[t] > 0}
        self.live_bytes = sum(self.live.values())
        self.remaining_preds = [len(p) for p in g.preds]
        self.succs: list[list[int]] = [[] for _ in g.ops]
        for i, preds in enumerate(g.preds):
            for p in preds:
                self.succs[p].append(i)

    def step_cost(self, i: int) -> int:
        op = self.g.ops[i]
        fresh = sum(self.g.tensors[t].nbytes for t in op.outputs)
        return self.live_bytes + fresh + op.workspace

    def execute(self, i: int):
        """Apply op i; returns an undo record."""
        op = self.g.ops[i]
        freed: list[tuple[str, int]] = []
        added: list[str] = []
        for t in op.outputs:
            self.live[t] = self.g.tensors[t].nbytes
            self.live_bytes += self.g.tensors[t].nbytes
            added.append(t)
        for t in op.inputs:
            self.refcount[t] -= 1
        # Free inputs that are now dead and outputs nobody consumes.
        for t in list(op.inputs) + list(op.outputs):
            if self.refcount[t] == 0 and t in self.live:
                freed.append((t, self.live.pop(t)))
                self.live_bytes -= freed[-1][1]
        for j in self.succs[i]:
            self.remaining_preds[j] -= 1
        return (op, freed, added)

    def undo(self, i: int, record) -> None:
        op, freed, added = record
        for j in self.succs[i]:
            self.remaining_preds[j] += 1
        for t, nbytes in freed:
            self.live[t] = nbytes
            self.live_bytes += nbytes
        for t in op.inputs:
            self.refcount[t] += 1
        for t in added:
            if t in self.live:
                self.live_bytes -= self.live[t]
                del self.live[t]


def min_memory_schedule(g: ComputeGraph, exact_limit: int = 16) -> tuple[Schedule, int]:
    """Exact minimum-peak schedule via branch-and-bound.

    Ties between equal-peak schedules break toward the lexicographically
    smallest op-index sequence (depth-first exploration visits those
    first and only strictly better peaks replace the incumbent).
    Raises GraphTooLargeError above ``exact_limit`` ops; callers fall
    back to ``greedy_memory_schedule``.
    """
    n = len(g.ops)
    if n == 0:
        return Schedule(order=(), optimal=True), 0
    if n > exact_limit:
        raise GraphTooLargeError(
            f"graph has {n} ops, exact search limited to {exact_limit}"
        )
    state = _SearchState(g)
    best_peak = None
    best_order: list[int] | None = None
    order: list[int] = []
    # Dominance memo: executed-set -> smallest running peak that reached it.
    memo: dict[int, int] = {}

    def dfs(mask: int, running_peak: int) -> None:
        nonlocal best_peak, best_order
        if best_peak is not None and running_peak >= best_peak:
            return
        seen = memo.get(mask)
        if seen is not None and seen <= running_peak:
            return
        memo[mask] = running_peak
        if len(order) == n:
            if best_peak is None or running_peak < best_peak:
                best_peak = running_peak
                best_order = list(order)
            return
        for i in range(n):
            if mask & (1 << i) or state.remaining_preds[i] != 0:
                continue
            cost = state.step_cost(i)
            new_peak = max(running_peak, cost)
            if best_peak is not None and new_peak >= best_peak:
                continue
            record = state.execute(i)
            order.append(i)
            dfs(mask | (1 << i), new_peak)
            order.pop()
            state.undo(i, record)

    dfs(0, 0)
    assert best_order is not None and best_peak is not None
    names = tuple(g.ops[i].name for i in best_order)
    return Schedule(order=names, optimal=True), best_peak


def greedy_memory_schedule(g: ComputeGraph) -> tuple[Schedule, int]:
    """Cheapest-next-step heuristic order; peak is an upper bound only."""
    state = _SearchState(g)
    n = len(g.ops)
    done = [False] * n
    order: list[int] = []
    peak = 0
    for _ in range(n):
        candidates = [
            i for i in range(n) if not done[i] and state.remaining_preds[i] == 0
        ]
        i = min(candidates, key=lambda i: (state.step_cost(i), i))
        peak = max(peak, state.step_cost(i))
        state.execute(i)
        done[i] = True
        order.append(i)
    names = tuple(g.ops[i].name for i in order)
    return Schedule(order=names, optimal=False), peak


def unique_topological_order(g: ComputeGraph) -> tuple[str, ...]:
    """The single feasible order, or GraphError if the graph branches."""
    remaining = [len(p) for p in g.preds]
    succs: list[list[int]] = [[] for _ in g.ops]
    for i, preds in enumerate(g.preds):
        for p in preds:
            succs[p].append(i)
    done = [False] * len(g.ops)
    order: list[str] = []
    for _ in range(len(g.ops)):
        ready = [i for i in range(len(g.ops)) if not done[i] and remaining[i] == 0]
        if len(ready) != 1:
            raise GraphError(
                f"graph has non-trivial parallel structure ({len(ready)} ops ready)"
            )
        i = ready[0]
        done[i] = True
        order.append(g.ops[i].name)
        for j in succs[i]:
            remaining[j] -= 1
    return tuple(order)


def linear_bound_memory(g: ComputeGraph) -> int:
    """Closed-form peak for graphs whose only parallelism is shortcuts.

    Equals max over ops of (inputs + outputs + workspace + tensors carried
    across the op).  On block-granular chains nothing is carried and this
    is literally the max combined input/output size over operations; it
    always equals the peak of the unique schedule, which is how it is
    computed.
    """
    order = unique_topological_order(g)
    return schedule_memory(g, order).peak_bytes


@dataclass(frozen=True)
class CascadePlan:
    """Contiguous partition of the expanded channels into execution groups."""

    groups: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.groups:
            raise InvalidShapeError("cascade plan needs at least one group")
        prev = 0
        for start, stop in self.groups:
            if start != prev or stop <= start:
                raise InvalidShapeError(
                    f"cascade groups must be contiguous and non-empty, got {self.groups}"
                )
            prev = stop

    @property
    def total_channels(self) -> int:
        return self.groups[-1][1]

    @property
    def max_group(self) -> int:
        return max(stop - start for start, stop in self.groups)

    @classmethod
    def from_split(cls, channels: int, split: int) -> "CascadePlan":
        """``split`` equal groups of channels // split; the last group absorbs
        the remainder."""
        if split < 1:
            raise InvalidShapeError(f"split must be >= 1, got {split}")
        if split > channels:
            raise InvalidShapeError(
                f"split {split} exceeds the {channels} expanded channels"
            )
        base = channels // split
        bounds = [(i * base, (i + 1) * base) for i in range(split - 1)]
        bounds.append(((split - 1) * base, channels))
        return cls(tuple(bounds))


def cascade_peak_bytes(
    p: BottleneckParams,
    h: int,
    w: int,
    plan: CascadePlan,
    bytes_per_activation: int = 4,
    batch: int = 1,
) -> int:
    """Working-set bound of the split execution: input + output + one
    group-sized inner tensor at each resolution it passes through."""
    oh = -(-h // p.stride)
    ow = -(-w // p.stride)
    bpa = bytes_per_activation
    in_bytes = batch * h * w * p.in_channels * bpa
    out_bytes = batch * oh * ow * p.out_channels * bpa
    inner = batch * plan.max_group * (h * w + oh * ow) * bpa
    return in_bytes + out_bytes + inner


def cascade_execute(
    x: np.ndarray, p: BottleneckParams, plan: CascadePlan
) -> tuple[np.ndarray, int]:
    """Split execution of one block; returns (output, peak working-set bytes).

    Group contributions accumulate in group-index order in float32.  The
    projection bias is applied once, after all groups, and the shortcut
    (when present) joins last, matching the monolithic operand order so a
    single-group plan is exactly the monolithic result.
    """
    assert_activation(x, "cascade input")
    inner_total = p.expanded_channels
    if plan.total_channels != inner_total:
        raise InvalidShapeError(
            f"plan covers {plan.total_channels} channels, block has {inner_total}"
        )
    b, h, w, _ = x.shape
    oh = -(-h // p.stride)
    ow = -(-w // p.stride)
    acc = np.zeros((b, oh, ow, p.out_channels), dtype=np.float32)
    for start, stop in plan.groups:
        width = stop - start
        if p.expand is not None:
            sub = Conv2dParams(
                kernel=1, stride=1,
                in_channels=p.in_channels, out_channels=width,
                weights=p.expand.weights[:, :, :, start:stop],
                bias=p.expand.bias[start:stop],
            )
            g = relu6(conv2d(x, sub))
        else:
            g = x[:, :, :, start:stop]
        sub_dw = DepthwiseParams(
            kernel=p.depthwise.kernel, stride=p.stride, channels=width,
            weights=p.depthwise.weights[:, :, start:stop],
            bias=p.depthwise.bias[start:stop],
        )
        g = relu6(depthwise_conv(g, sub_dw))
        sub_proj = Conv2dParams(
            kernel=1, stride=1, in_channels=width, out_channels=p.out_channels,
            weights=p.project.weights[:, :, start:stop, :],
            bias=np.zeros(p.out_channels, dtype=np.float32),
        )
        acc += conv2d(g, sub_proj)
    out = acc + p.project.bias
    if p.use_shortcut:
        out = out + x
    peak = cascade_peak_bytes(p, h, w, plan, bytes_per_activation=4, batch=b)
    return out, peak


def memory_table(
    spec: ModelSpec,
    bytes_per_activation: int = 2,
    stream_first: bool = True,
) -> MemoryReport:
    """Max materialized channels/bytes per spatial resolution.

    Blocks count as single ops with disposable inner tensors; each block
    charges its output width at the resolution it consumes, and every
    resolution reports the widest such charge.  The pooled head feature
    appears as the final 1x1 row.  With ``stream_first`` the
    stem-adjacent resolution is executed channel-by-channel and reports a
    single materialized channel, excluded from the overall peak.
    """
    if bytes_per_activation not in (2, 4):
        raise InvalidShapeError(
            f"bytes_per_activation must be 2 or 4, got {bytes_per_activation}"
        )
    model = build_model(spec)
    per_res: dict[int, int] = {}
    prev_res = spec.resolution
    first_block_res = None
    for layer in model.layers:
        if isinstance(layer, BottleneckLayer):
            if first_block_res is None:
                first_block_res = prev_res
            out_ch = layer.out_shape[2]
            per_res[prev_res] = max(per_res.get(prev_res, 0), out_ch)
        prev_res = layer.out_shape[0]
    rows = []
    for res in sorted(per_res, reverse=True):
        streamed = stream_first and res == first_block_res
        channels = 1 if streamed else per_res[res]
        rows.append(ResolutionRow(
            resolution=res,
            channels=channels,
            nbytes=res * res * channels * bytes_per_activation,
            streamed=streamed,
        ))
    head = spec.scaled_head_channels
    rows.append(ResolutionRow(1, head, head * bytes_per_activation))
    peak = max(r.nbytes for r in rows if not r.streamed)
    return MemoryReport(peak_bytes=peak, rows=rows)


def block_graph(
    spec: ModelSpec,
    bytes_per_activation: int = 2,
    first_block: int = 0,
    include_head: bool = True,
) -> ComputeGraph:
    """Block-granular compute graph (each block one op, shortcuts internal).

    ``first_block`` drops that many leading blocks, modelling the case
    where the high-resolution prefix is handled by streamed execution and
    the planner only sees the materialized tail.
    """
    model = build_model(spec)
    blocks = model.bottleneck_layers()
    if not 0 <= first_block < len(blocks):
        raise GraphError(f"first_block {first_block} out of range")
    bpa = bytes_per_activation

    def nbytes(shape: tuple[int, int, int]) -> int:
        return shape[0] * shape[1] * shape[2] * bpa

    # Input of block[first_block] is the output of whatever precedes it.
    idx = model.layers.index(blocks[first_block])
    in_shape = (
        model.layers[idx - 1].out_shape
        if idx > 0
        else (spec.resolution, spec.resolution, 3)
    )
    tensors = [TensorNode("in", nbytes(in_shape))]
    ops = []
    prev = "in"
    for layer in blocks[first_block:]:
        out_name = f"{layer.name}_out"
        tensors.append(TensorNode(out_name, nbytes(layer.out_shape)))
        ops.append(OpNode(layer.name, (prev,), (out_name,)))
        prev = out_name
    if include_head:
        res = blocks[-1].out_shape[0]
        head = spec.scaled_head_channels
        tensors.append(TensorNode("head_out", res * res * head * bpa))
        ops.append(OpNode("head", (prev,), ("head_out",)))
        tensors.append(TensorNode("pooled", head * bpa))
        ops.append(OpNode("avgpool", ("head_out",), ("pooled",)))
        tensors.append(TensorNode("logits", spec.classes * bpa))
        ops.append(OpNode("classifier", ("pooled",), ("logits",)))
    return ComputeGraph(tensors, ops)
