"""Executable layer graphs for coupled, stacked, and dense U-Net cascades.

A NetworkGraph is an explicit DAG: an ordered node list (creation order is
topological), tagged edges (main_flow / skip / coupling / head), named
parameter tensors, running-stat buffers, and the ordered list of supervised
head nodes. `forward` walks the node list; `param_count` walks the parameter
map; `to_dot` renders the same structure for inspection.

Cascade layout per U-Net: `depth` down blocks (2x max-pool between levels),
one bottom block, `depth` up blocks (2x nearest upsample between levels),
with the m-channel output of down level l added element-wise into the
upsampled stream entering up level l. Every semantic block also exports n
fresh channels; with coupling enabled, block (path, level) of U-Net i
receives those exports from the same position of every earlier U-Net, so its
concat input is m + n*i channels. With coupling disabled the exports go
unread and the cascade degenerates to plain stacked U-Nets.

The stem is conv7x7 stride 1 pad 3 -> BN -> ReLU -> two 2x max-pools, giving
working resolution input_res/4. (A stride-2 7x7 conv cannot halve an even
extent under this engine's exact-division conv contract, so the second
halving is a pool.) Heads are side branches BN -> ReLU -> conv1x1 to
`keypoints` channels; deleting one never changes the trunk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import CUNetConfig, DenseUNetConfig
from .supervision import place_supervisions
from .tensor import (Tensor, add, batch_norm, concat_channels, conv2d,
                     max_pool2, relu, upsample_nearest2)

__all__ = [
    "LayerNode",
    "Edge",
    "BlockInfo",
    "DenseBlockInfo",
    "NetworkGraph",
    "CalibrationError",
    "build_cu_net",
    "build_dense_unet",
    "build_semantic_block",
    "calibrate_dense",
    "calibrate_dense_to_target",
    "param_count",
    "param_breakdown",
    "forward",
    "to_dot",
]

EDGE_TAGS = ("main_flow", "skip", "coupling", "head")


@dataclass
class LayerNode:
    """One executable operation with channel/resolution annotations."""

    name: str
    kind: str  # input | conv | bn | relu | pool | upsample | concat | add
    inputs: tuple[str, ...]
    out_channels: int
    resolution: int
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    weight: str = ""
    bias: str = ""
    gamma: str = ""
    beta: str = ""


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    tag: str
    channels: int


@dataclass(frozen=True)
class BlockInfo:
    """Introspection handle for one semantic block of one U-Net."""

    unet: int
    path: str  # down | bottom | up
    level: int
    concat_in: str
    bottleneck: str
    coupling_out: str
    concat_mid: str
    main_out: str
    concat_in_channels: int
    bottleneck_channels: int
    coupling_channels: int
    concat_mid_channels: int
    main_channels: int


@dataclass(frozen=True)
class DenseBlockInfo:
    path: str
    level: int
    layer_in_channels: tuple[int, ...]
    compression_in_channels: int
    out_channels: int


class CalibrationError(ValueError):
    """Raised when no dense configuration lands within the target ratio."""

    def __init__(self, message: str, best_ratio: float, best_config=None):
        super().__init__(message)
        self.best_ratio = best_ratio
        self.best_config = best_config


@dataclass
class NetworkGraph:
    arch: str  # cu | stacked | dense | block
    config: object
    nodes: list[LayerNode] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    heads: list[str] = field(default_factory=list)
    blocks: list[BlockInfo] = field(default_factory=list)
    dense_blocks: list[DenseBlockInfo] = field(default_factory=list)
    initialized: bool = True
    _by_name: dict[str, LayerNode] = field(default_factory=dict)

    def node(self, name: str) -> LayerNode:
        return self._by_name[name]

    def has_node(self, name: str) -> bool:
        return name in self._by_name

    def coupling_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.tag == "coupling"]

    def validate(self) -> None:
        """Structural sanity: topological order, channel bookkeeping, edge tags."""
        position = {node.name: i for i, node in enumerate(self.nodes)}
        if len(position) != len(self.nodes):
            raise ValueError("graph: duplicate node names")
        for i, node in enumerate(self.nodes):
            for src in node.inputs:
                if src not in position:
                    raise ValueError(f"graph: node {node.name} reads unknown node {src}")
                if position[src] >= i:
                    raise ValueError(f"graph: node {node.name} reads {src} which is "
                                     f"not earlier in the node list (cycle or misorder)")
            if node.kind == "concat":
                total = sum(self.node(s).out_channels for s in node.inputs)
                if total != node.out_channels:
                    raise ValueError(f"graph: concat {node.name} annotated "
                                     f"{node.out_channels} channels, inputs sum to {total}")
            elif node.kind == "add":
                chans = {self.node(s).out_channels for s in node.inputs}
                if len(chans) != 1 or chans.pop() != node.out_channels:
                    raise ValueError(f"graph: add {node.name} joins mismatched channels")
        for e in self.edges:
            if e.tag not in EDGE_TAGS:
                raise ValueError(f"graph: edge {e.src}->{e.dst} has unknown tag {e.tag}")
            if e.channels != self.node(e.src).out_channels:
                raise ValueError(f"graph: edge {e.src}->{e.dst} carries {e.channels} "
                                 f"channels, source emits {self.node(e.src).out_channels}")


class _Builder:
    """Appends nodes/edges/params to a NetworkGraph in execution order."""

    def __init__(self, graph: NetworkGraph, rng, dtype, init: bool):
        self.g = graph
        self.rng = rng
        self.dtype = dtype
        self.init = init

    def _add_node(self, node: LayerNode, tags: tuple[str, ...]) -> str:
        if node.name in self.g._by_name:
            raise ValueError(f"graph: duplicate node name {node.name}")
        self.g.nodes.append(node)
        self.g._by_name[node.name] = node
        for src, tag in zip(node.inputs, tags):
            self.g.edges.append(Edge(src, node.name, tag,
                                     self.g.node(src).out_channels))
        return node.name

    def input(self, name: str, channels: int, resolution: int) -> str:
        return self._add_node(
            LayerNode(name, "input", (), channels, resolution), ())

    def conv(self, name: str, src: str, out_channels: int, kernel: int,
             stride: int = 1, pad: int = 0, tag: str = "main_flow") -> str:
        src_node = self.g.node(src)
        cin = src_node.out_channels
        wname, bname = name + ".w", name + ".b"
        fan_in = cin * kernel * kernel
        if self.init:
            wdata = (self.rng.standard_normal((out_channels, cin, kernel, kernel))
                     * np.sqrt(2.0 / fan_in)).astype(self.dtype)
        else:
            wdata = np.zeros((out_channels, cin, kernel, kernel), dtype=self.dtype)
        self.g.params[wname] = Tensor(wdata, requires_grad=True)
        self.g.params[bname] = Tensor(np.zeros(out_channels, dtype=self.dtype),
                                      requires_grad=True)
        num = src_node.resolution + 2 * pad - kernel
        res = num // stride + 1
        return self._add_node(
            LayerNode(name, "conv", (src,), out_channels, res, kernel=kernel,
                      stride=stride, pad=pad, weight=wname, bias=bname), (tag,))

    def bn(self, name: str, src: str, tag: str = "main_flow") -> str:
        src_node = self.g.node(src)
        c = src_node.out_channels
        gname, bname = name + ".gamma", name + ".beta"
        self.g.params[gname] = Tensor(np.ones(c, dtype=self.dtype), requires_grad=True)
        self.g.params[bname] = Tensor(np.zeros(c, dtype=self.dtype), requires_grad=True)
        self.g.buffers[name + ".running_mean"] = np.zeros(c, dtype=self.dtype)
        self.g.buffers[name + ".running_var"] = np.ones(c, dtype=self.dtype)
        return self._add_node(
            LayerNode(name, "bn", (src,), c, src_node.resolution,
                      gamma=gname, beta=bname), (tag,))

    def relu(self, name: str, src: str) -> str:
        s = self.g.node(src)
        return self._add_node(
            LayerNode(name, "relu", (src,), s.out_channels, s.resolution),
            ("main_flow",))

    def pool(self, name: str, src: str) -> str:
        s = self.g.node(src)
        return self._add_node(
            LayerNode(name, "pool", (src,), s.out_channels, s.resolution // 2),
            ("main_flow",))

    def upsample(self, name: str, src: str) -> str:
        s = self.g.node(src)
        return self._add_node(
            LayerNode(name, "upsample", (src,), s.out_channels, s.resolution * 2),
            ("main_flow",))

    def concat(self, name: str, srcs: list[str], tags: list[str]) -> str:
        total = sum(self.g.node(s).out_channels for s in srcs)
        res = self.g.node(srcs[0]).resolution
        return self._add_node(
            LayerNode(name, "concat", tuple(srcs), total, res), tuple(tags))

    def add(self, name: str, a: str, b: str, tag_b: str = "skip") -> str:
        na = self.g.node(a)
        return self._add_node(
            LayerNode(name, "add", (a, b), na.out_channels, na.resolution),
            ("main_flow", tag_b))

    def bn_relu_conv(self, prefix: str, src: str, out_channels: int, kernel: int,
                     pad: int = 0) -> str:
        h = self.bn(prefix + ".bn", src)
        h = self.relu(prefix + ".relu", h)
        return self.conv(prefix + ".conv", h, out_channels, kernel, pad=pad)


def _semantic_block(b: _Builder, prefix: str, unet: int, path: str, level: int,
                    main_src: str, coupling_srcs: list[str],
                    m: int, n: int) -> BlockInfo:
    """One semantic block: concat -> 1x1 to 4m -> 3x3 to n -> concat -> 1x1 to m.

    Every conv is preceded by BN-ReLU. The 3x3 output is the block's coupling
    export; the final 1x1 sees the original concat plus that export.
    """
    gathered = b.concat(prefix + ".gather", [main_src] + coupling_srcs,
                        ["main_flow"] + ["coupling"] * len(coupling_srcs))
    bottleneck = b.bn_relu_conv(prefix + ".squeeze", gathered, 4 * m, 1)
    fresh = b.bn_relu_conv(prefix + ".grow", bottleneck, n, 3, pad=1)
    merged = b.concat(prefix + ".merge", [gathered, fresh],
                      ["main_flow", "main_flow"])
    out = b.bn_relu_conv(prefix + ".fuse", merged, m, 1)
    info = BlockInfo(
        unet=unet, path=path, level=level,
        concat_in=gathered, bottleneck=bottleneck, coupling_out=fresh,
        concat_mid=merged, main_out=out,
        concat_in_channels=b.g.node(gathered).out_channels,
        bottleneck_channels=b.g.node(bottleneck).out_channels,
        coupling_channels=b.g.node(fresh).out_channels,
        concat_mid_channels=b.g.node(merged).out_channels,
        main_channels=b.g.node(out).out_channels)
    b.g.blocks.append(info)
    return info


def _stem(b: _Builder, in_node: str, width: int) -> str:
    h = b.conv("stem.conv", in_node, width, 7, stride=1, pad=3)
    h = b.bn("stem.bn", h)
    h = b.relu("stem.relu", h)
    h = b.pool("stem.pool1", h)
    return b.pool("stem.pool2", h)


def _head(b: _Builder, g: NetworkGraph, index: int, src: str, keypoints: int) -> None:
    h = b.bn(f"head{index}.bn", src, tag="head")
    h = b.relu(f"head{index}.relu", h)
    h = b.conv(f"head{index}.conv", h, keypoints, 1)
    g.heads.append(h)


def build_cu_net(cfg: CUNetConfig, dtype=np.float32, init: bool = True) -> NetworkGraph:
    """Build the full cascade graph (coupled when cfg.coupling, else stacked).

    `init=False` creates zero parameters without drawing from the RNG, which
    is enough for counting and introspection; `forward` rejects such graphs.
    """
    cfg.validate()
    g = NetworkGraph(arch="cu" if cfg.coupling else "stacked", config=cfg,
                     initialized=init)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    b = _Builder(g, rng, np.dtype(dtype), init)
    m, n, depth = cfg.m, cfg.n, cfg.depth

    x = b.input("input", cfg.in_channels, cfg.input_res)
    current = _stem(b, x, m)

    plan = place_supervisions(cfg.supervisions, cfg.u)
    supervised = set(plan.indices)
    # coupling export registry: (path, level) -> exports from earlier U-Nets
    exports: dict[tuple[str, int], list[str]] = {}
    head_sources: list[tuple[int, str]] = []

    for i in range(cfg.u):
        def couplings(path: str, level: int) -> list[str]:
            return list(exports.get((path, level), [])) if cfg.coupling else []

        down_outs: list[str] = []
        for level in range(depth):
            if level > 0:
                current = b.pool(f"u{i}.down{level}.pool", current)
            info = _semantic_block(b, f"u{i}.down{level}", i, "down", level,
                                   current, couplings("down", level), m, n)
            exports.setdefault(("down", level), []).append(info.coupling_out)
            current = info.main_out
            down_outs.append(current)

        current = b.pool(f"u{i}.bottom.pool", current)
        info = _semantic_block(b, f"u{i}.bottom", i, "bottom", depth,
                               current, couplings("bottom", depth), m, n)
        exports.setdefault(("bottom", depth), []).append(info.coupling_out)
        current = info.main_out

        for level in range(depth - 1, -1, -1):
            up = b.upsample(f"u{i}.up{level}.upsample", current)
            joined = b.add(f"u{i}.up{level}.skip", up, down_outs[level])
            info = _semantic_block(b, f"u{i}.up{level}", i, "up", level,
                                   joined, couplings("up", level), m, n)
            exports.setdefault(("up", level), []).append(info.coupling_out)
            current = info.main_out

        if (i + 1) in supervised:
            head_sources.append((i, current))

    # Heads last so trunk parameter initialization order is independent of
    # the supervision plan.
    for i, src in head_sources:
        _head(b, g, i, src, cfg.keypoints)

    g.validate()
    return g


def build_semantic_block(unet_index: int, m: int, n: int,
                         extra_in: int | None = None, resolution: int = 8,
                         seed: int = 0, dtype=np.float64) -> NetworkGraph:
    """A standalone one-block graph for direct inspection and testing.

    `extra_in`, when given, must equal n * unet_index; any other value is a
    connectivity bug and is rejected.
    """
    if unet_index < 0 or m < 1 or n < 1:
        raise ValueError(f"build_semantic_block: bad arguments "
                         f"unet_index={unet_index} m={m} n={n}")
    if extra_in is not None and extra_in != n * unet_index:
        raise ValueError(f"build_semantic_block: extra_in={extra_in} does not equal "
                         f"n*i={n * unet_index} (connectivity bug)")
    g = NetworkGraph(arch="block", config=None)
    rng = np.random.Generator(np.random.PCG64(seed))
    b = _Builder(g, rng, np.dtype(dtype), True)
    main = b.input("main", m, resolution)
    coup = [b.input(f"coupled{j}", n, resolution) for j in range(unet_index)]
    _semantic_block(b, "block", unet_index, "down", 0, main, coup, m, n)
    g.validate()
    return g


def build_dense_unet(cfg: DenseUNetConfig, dtype=np.float32,
                     init: bool = True) -> NetworkGraph:
    """Single U-Net whose semantic positions hold DenseNet-style blocks.

    Each block runs `layers` rounds of BN-ReLU-conv1x1 (to 4*growth) then
    BN-ReLU-conv3x3 (to `growth`) on the concatenation of the block input and
    all previous layer outputs, then compresses back to `width` with a final
    BN-ReLU-conv1x1. Stem, pooling, skip adds, and head match the cascade.
    """
    cfg.validate()
    g = NetworkGraph(arch="dense", config=cfg, initialized=init)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    b = _Builder(g, rng, np.dtype(dtype), init)
    w, k, layers, depth = cfg.width, cfg.growth, cfg.layers, cfg.depth

    def dense_block(prefix: str, path: str, level: int, src: str) -> str:
        feats = [src]
        layer_ins = []
        for j in range(layers):
            gathered = b.concat(f"{prefix}.l{j}.gather", list(feats),
                                ["main_flow"] * len(feats))
            layer_ins.append(b.g.node(gathered).out_channels)
            hidden = b.bn_relu_conv(f"{prefix}.l{j}.squeeze", gathered, 4 * k, 1)
            fresh = b.bn_relu_conv(f"{prefix}.l{j}.grow", hidden, k, 3, pad=1)
            feats.append(fresh)
        merged = b.concat(f"{prefix}.merge", feats, ["main_flow"] * len(feats))
        out = b.bn_relu_conv(f"{prefix}.fuse", merged, w, 1)
        g.dense_blocks.append(DenseBlockInfo(
            path=path, level=level, layer_in_channels=tuple(layer_ins),
            compression_in_channels=b.g.node(merged).out_channels,
            out_channels=w))
        return out

    x = b.input("input", cfg.in_channels, cfg.input_res)
    current = _stem(b, x, w)

    down_outs: list[str] = []
    for level in range(depth):
        if level > 0:
            current = b.pool(f"down{level}.pool", current)
        current = dense_block(f"down{level}", "down", level, current)
        down_outs.append(current)
    current = b.pool("bottom.pool", current)
    current = dense_block("bottom", "bottom", depth, current)
    for level in range(depth - 1, -1, -1):
        up = b.upsample(f"up{level}.upsample", current)
        joined = b.add(f"up{level}.skip", up, down_outs[level])
        current = dense_block(f"up{level}", "up", level, joined)

    _head(b, g, 0, current, cfg.keypoints)
    g.validate()
    return g


# ---------------------------------------------------------------------------
# counting and calibration

def param_count(graph: NetworkGraph) -> int:
    """Total scalar parameters: conv weights and biases, BN gammas and betas."""
    return sum(int(p.data.size) for p in graph.params.values())


def param_breakdown(graph: NetworkGraph) -> dict[str, int]:
    """Counts grouped by top-level prefix (stem, u0..., head0..., down0...)."""
    out: dict[str, int] = {}
    for name, p in graph.params.items():
        prefix = name.split(".", 1)[0]
        out[prefix] = out.get(prefix, 0) + int(p.data.size)
    return out


def calibrate_dense_to_target(target: int, template: DenseUNetConfig,
                              layers: int, max_ratio: float = 0.02,
                              width_band: float = 0.25) -> DenseUNetConfig:
    """Find a dense config whose parameter count is within max_ratio of target.

    Stage one scans the growth rate over [1, 4*width] with the template width
    (the contract's search). When integer growth granularity overshoots the
    window, a bounded second stage jointly adjusts growth and width within
    +-width_band of the template width, preferring the smallest width change.
    """
    if target <= 0:
        raise ValueError(f"calibrate_dense_to_target: target must be positive, got {target}")

    def count_for(k: int, width: int) -> tuple[int, DenseUNetConfig]:
        cfg = DenseUNetConfig(
            layers=layers, growth=k, width=width, depth=template.depth,
            keypoints=template.keypoints, in_channels=template.in_channels,
            input_res=template.input_res, seed=template.seed)
        return param_count(build_dense_unet(cfg, init=False)), cfg

    def ratio(count: int) -> float:
        return abs(count - target) / target

    best_cfg = None
    best_ratio = float("inf")
    best_k = 1
    for k in range(1, 4 * template.width + 1):
        count, cfg = count_for(k, template.width)
        r = ratio(count)
        if r < best_ratio:
            best_ratio, best_cfg, best_k = r, cfg, k
        if count > target and r > best_ratio:
            break  # counts are monotone in growth; past the target and worsening
        if r == 0.0:
            break
    if best_ratio <= max_ratio:
        return best_cfg

    # Growth alone is too coarse here; trade small width changes for fit.
    lo = max(1, int(template.width * (1 - width_band)))
    hi = int(np.ceil(template.width * (1 + width_band)))
    candidates = []
    for width in range(lo, hi + 1):
        for k in range(max(1, best_k - 2), best_k + 3):
            count, cfg = count_for(k, width)
            candidates.append((ratio(count), abs(width - template.width), cfg))
    candidates.sort(key=lambda t: (t[0], t[1], t[2].growth))
    r, _, cfg = candidates[0]
    if r < best_ratio:
        best_ratio, best_cfg = r, cfg
    if best_ratio <= max_ratio:
        return best_cfg
    raise CalibrationError(
        f"calibrate_dense: no dense config within {max_ratio:.0%} of {target} "
        f"parameters (closest ratio {best_ratio:.4f})", best_ratio, best_cfg)


def calibrate_dense(cu_cfg: CUNetConfig, template: DenseUNetConfig,
                    base_u: int = 2, max_ratio: float = 0.02) -> DenseUNetConfig:
    """Dense config parameter-matched to the cascade `cu_cfg`.

    Layer count follows the one-extra-layer-per-extra-U-Net rule relative to
    (base_u, template.layers); growth (and, if needed, width) is then searched
    so the dense count lands within max_ratio of the cascade count.
    """
    cu_cfg.validate()
    template.validate()
    layers = template.layers + (cu_cfg.u - base_u)
    if layers < 1:
        raise ValueError(f"calibrate_dense: derived layers {layers} < 1 "
                         f"(u={cu_cfg.u}, base_u={base_u}, base layers={template.layers})")
    target = param_count(build_cu_net(cu_cfg, init=False))
    return calibrate_dense_to_target(target, template, layers, max_ratio)


# ---------------------------------------------------------------------------
# execution

def forward(graph: NetworkGraph, x, mode: str = "train",
            update_stats: bool | None = None,
            kink_trace: list | None = None) -> list[Tensor]:
    """Run the graph on a batch, returning head outputs in cascade order.

    Output values depend only on (parameters, input, mode); train mode also
    folds batch statistics into the BN buffers unless update_stats is False.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"forward: mode must be 'train' or 'eval', got {mode!r}")
    if not graph.initialized:
        raise ValueError("forward: graph parameters are uninitialized "
                         "(built with init=False)")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    in_node = graph.nodes[0]
    expected = (in_node.out_channels, in_node.resolution, in_node.resolution)
    if x.data.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"forward: input shape {x.shape} does not match "
                         f"(N, {expected[0]}, {expected[1]}, {expected[2]})")
    train = mode == "train"

    values: dict[str, Tensor] = {}
    for node in graph.nodes:
        if node.kind == "input":
            values[node.name] = x
        elif node.kind == "conv":
            values[node.name] = conv2d(values[node.inputs[0]],
                                       graph.params[node.weight],
                                       graph.params[node.bias],
                                       stride=node.stride, pad=node.pad)
        elif node.kind == "bn":
            values[node.name] = batch_norm(
                values[node.inputs[0]], graph.params[node.gamma],
                graph.params[node.beta],
                graph.buffers[node.name + ".running_mean"],
                graph.buffers[node.name + ".running_var"],
                train=train, update_stats=update_stats)
        elif node.kind == "relu":
            values[node.name] = relu(values[node.inputs[0]], trace=kink_trace)
        elif node.kind == "pool":
            values[node.name] = max_pool2(values[node.inputs[0]], trace=kink_trace)
        elif node.kind == "upsample":
            values[node.name] = upsample_nearest2(values[node.inputs[0]])
        elif node.kind == "concat":
            values[node.name] = concat_channels([values[s] for s in node.inputs])
        elif node.kind == "add":
            values[node.name] = add(values[node.inputs[0]], values[node.inputs[1]])
        else:  # pragma: no cover - builder emits only the kinds above
            raise ValueError(f"forward: unknown node kind {node.kind!r}")
    return [values[h] for h in graph.heads]


def to_dot(graph: NetworkGraph) -> str:
    """Render the graph in DOT. Coupling edges are the dashed red ones."""
    styles = {
        "main_flow": "",
        "skip": ' [style=dotted, label="skip"]',
        "coupling": ' [style=dashed, color=red, label="coupling"]',
        "head": ' [color=blue, label="to_head"]',
    }
    lines = [f"digraph {graph.arch} {{", "  rankdir=TB;",
             '  node [shape=box, fontsize=10];']
    for node in graph.nodes:
        label = f"{node.name}\\n{node.kind} {node.out_channels}ch @{node.resolution}"
        lines.append(f'  "{node.name}" [label="{label}"];')
    for e in graph.edges:
        lines.append(f'  "{e.src}" -> "{e.dst}"{styles[e.tag]};')
    lines.append("}")
    return "\n".join(lines) + "\n"
