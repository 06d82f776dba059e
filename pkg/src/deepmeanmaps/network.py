"""Network graphs: declarative specs, shape propagation, execution, persistence.

A :class:`NetworkSpec` is an ordered DAG of named nodes. Node inputs name
earlier nodes, or ``"input"`` for the image batch. Parameters live outside
the spec in a dict keyed by slot id, so a spec can be instantiated with any
parameter set (snapshots, checkpoints, float64 copies for gradient checks).
"""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .kernels import RffBasis, save_basis
from .meanmap import MeanMapLayer
from .tensor import F32, F64, Rng, derive_seed, load_tensor, save_tensor, uniform

INPUT = "input"
LOSS_KINDS = ("softmax_xent", "squared")
KINDS = ("conv", "relu", "maxpool", "flatten", "fc", "meanmap", "dropout", "concat",
         "gap", "cosine") + LOSS_KINDS


class ShapeError(ValueError):
    pass


@dataclass
class Node:
    name: str
    kind: str
    inputs: list[str]
    hyper: dict = field(default_factory=dict)
    slots: dict[str, str] = field(default_factory=dict)


@dataclass
class SlotInfo:
    shape: tuple
    owner: str
    init: str
    trainable: bool = True
    fan_in: int = 1


@dataclass
class NetworkSpec:
    input_shape: tuple
    nodes: list[Node] = field(default_factory=list)
    output: str | None = None
    loss: str | None = None
    top: str | None = None
    penultimate: str | None = None
    final_block: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    slots: dict[str, SlotInfo] = field(default_factory=dict)
    shapes: dict[str, tuple] = field(default_factory=dict)

    def add(self, name: str, kind: str, inputs, slot_prefix: str | None = None, **hyper) -> str:
        if kind not in KINDS:
            raise ValueError(f"unknown layer kind {kind!r}")
        if name == INPUT or any(n.name == name for n in self.nodes):
            raise ValueError(f"duplicate node name {name!r}")
        inputs = [inputs] if isinstance(inputs, str) else list(inputs)
        prefix = slot_prefix or name
        slots = {}
        if kind in ("conv", "fc"):
            slots = {"W": f"{prefix}.W", "b": f"{prefix}.b"}
        elif kind == "meanmap":
            slots = {k: f"{prefix}.{k}" for k in ("omega", "offsets", "log_scale")}
        self.nodes.append(Node(name, kind, inputs, dict(hyper), slots))
        return name

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def consumers(self, name: str) -> list[str]:
        return [n.name for n in self.nodes if name in n.inputs]

    def out_degree(self, name: str) -> int:
        return len(self.consumers(name))

    def count(self, kind: str) -> int:
        return sum(n.kind == kind for n in self.nodes)

    def validate(self) -> "NetworkSpec":
        """Propagate shapes through the graph and derive parameter slots."""
        shapes: dict[str, tuple] = {INPUT: tuple(self.input_shape)}
        slots: dict[str, SlotInfo] = {}
        for node in self.nodes:
            for src in node.inputs:
                if src not in shapes:
                    raise ShapeError(f"{node.name}: input {src!r} is not defined earlier (cycle or typo)")
            ins = [shapes[s] for s in node.inputs]
            try:
                out, node_slots = _infer(node, ins)
            except ShapeError as err:
                raise ShapeError(f"{node.name}: {err}") from None
            for local, info in node_slots.items():
                sid = node.slots[local]
                if sid in slots:
                    raise ShapeError(f"{node.name}: slot {sid!r} already owned by {slots[sid].owner}")
                info.owner = node.name
                slots[sid] = info
            shapes[node.name] = out
        for ref in (self.output, self.loss, self.top, self.penultimate, *self.final_block):
            if ref is not None and ref not in shapes:
                raise ShapeError(f"designated node {ref!r} does not exist")
        self.shapes = shapes
        self.slots = slots
        return self

    def param_count(self, trainable_only: bool = False) -> int:
        return int(sum(np.prod(s.shape) for s in self.slots.values()
                       if s.trainable or not trainable_only))

    def to_json(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "nodes": [asdict(n) for n in self.nodes],
            "output": self.output, "loss": self.loss, "top": self.top,
            "penultimate": self.penultimate, "final_block": list(self.final_block),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "NetworkSpec":
        spec = cls(tuple(d["input_shape"]), [Node(**n) for n in d["nodes"]], d["output"], d["loss"],
                   d.get("top"), d.get("penultimate"), list(d.get("final_block", [])), d.get("meta", {}))
        return spec.validate()


def _conv_out(n, k, s):
    if k > n:
        raise ShapeError(f"window {k} larger than input extent {n}")
    return (n - k) // s + 1


def _infer(node: Node, ins: list[tuple]):
    h = node.hyper
    k = node.kind
    if k == "concat":
        if any(len(s) != 1 for s in ins):
            raise ShapeError(f"concat needs vectors, got {ins}")
        return (sum(s[0] for s in ins),), {}
    if len(ins) != 1:
        raise ShapeError(f"{k} takes exactly one input, got {len(ins)}")
    (x,) = ins
    if k == "conv":
        if len(x) != 3:
            raise ShapeError(f"conv needs a c x h x w input, got {x}")
        kk, s, f = h["kernel"], h.get("stride", 1), h["filters"]
        out = (f, _conv_out(x[1], kk, s), _conv_out(x[2], kk, s))
        fan = x[0] * kk * kk
        return out, {"W": SlotInfo((f, x[0], kk, kk), "", "he", True, fan),
                     "b": SlotInfo((f,), "", "zeros", True, fan)}
    if k == "maxpool":
        if len(x) != 3:
            raise ShapeError(f"maxpool needs a c x h x w input, got {x}")
        w, s = h["window"], h["stride"]
        return (x[0], _conv_out(x[1], w, s), _conv_out(x[2], w, s)), {}
    if k in ("relu", "dropout", "cosine"):
        return x, {}
    if k == "flatten":
        return (int(np.prod(x)),), {}
    if k == "gap":
        if len(x) != 3:
            raise ShapeError(f"gap needs a c x h x w input, got {x}")
        return (x[0],), {}
    if k == "fc":
        if len(x) != 1:
            raise ShapeError(f"fc needs a vector input, got {x}; add a flatten")
        u = h["units"]
        return (u,), {"W": SlotInfo((u, x[0]), "", "he", True, x[0]),
                      "b": SlotInfo((u,), "", "zeros", True, x[0])}
    if k == "meanmap":
        if len(x) != 3:
            raise ShapeError(f"meanmap needs an m x h x w input, got {x}")
        D = h["D"]
        return (D,), {
            "omega": SlotInfo((D, x[0]), "", "normal", bool(h.get("learn_frequencies", False))),
            "offsets": SlotInfo((D,), "", "phase", False),
            "log_scale": SlotInfo((1,), "", "log_scale", bool(h.get("learn_scale", True))),
        }
    if k in LOSS_KINDS:
        if len(x) != 1:
            raise ShapeError(f"loss needs a vector of scores, got {x}")
        return (), {}
    raise ShapeError(f"unknown kind {k}")


def init_params(spec: NetworkSpec, seed: int, dtype=F32) -> dict[str, np.ndarray]:
    """Fresh parameters: He-normal weights, zero biases, standard-normal
    frequencies, uniform phases and ``log_scale = -ln sigma`` (sigma from the
    node's ``sigma`` hyperparameter, default 1; see :meth:`Network.calibrate`)."""
    params = {}
    for sid, info in spec.slots.items():
        rng = Rng(derive_seed(seed, "param", sid))
        if info.init == "he":
            arr = L.he_normal(rng, info.shape, info.fan_in, F64)
        elif info.init == "zeros":
            arr = np.zeros(info.shape)
        elif info.init == "normal":
            arr = rng.generator.standard_normal(info.shape)
        elif info.init == "phase":
            arr = uniform(rng, info.shape, 0.0, 2 * np.pi, dtype=dtype)
        elif info.init == "log_scale":
            sigma = spec.node(info.owner).hyper.get("sigma", 1.0)
            arr = np.full(info.shape, -np.log(sigma))
        else:
            raise ValueError(f"unknown init {info.init}")
        params[sid] = np.ascontiguousarray(arr, dtype=dtype)
    return params


def cast_params(params: dict, dtype) -> dict[str, np.ndarray]:
    return {k: np.array(v, dtype=dtype) for k, v in params.items()}


class Network:
    """Executable instance of a spec over a parameter dict (shared, not copied)."""

    def __init__(self, spec: NetworkSpec, params: dict[str, np.ndarray], seed: int = 0):
        if not spec.slots and spec.nodes:
            spec.validate()
        missing = set(spec.slots) - set(params)
        if missing:
            raise KeyError(f"missing parameter slots: {sorted(missing)}")
        self.spec = spec
        self.params = params
        self.seed = seed
        self.layers: dict[str, L.Layer] = {}
        first_consumers = set(spec.consumers(INPUT))
        for node in spec.nodes:
            self.layers[node.name] = self._make_layer(node, node.name not in first_consumers)
        self.activations: dict[str, np.ndarray] = {}
        self._loss_grad = None

    def _make_layer(self, node: Node, input_grad: bool):
        p = {local: self.params[sid] for local, sid in node.slots.items()}
        h = node.hyper
        k = node.kind
        if k == "conv":
            return L.Conv2d(p["W"], p["b"], h.get("stride", 1), input_grad=input_grad)
        if k == "fc":
            return L.FullyConnected(p["W"], p["b"])
        if k == "relu":
            return L.ReLU()
        if k == "maxpool":
            return L.MaxPool(h["window"], h["stride"])
        if k == "flatten":
            return L.Flatten()
        if k == "gap":
            return L.GlobalAvgPool()
        if k == "cosine":
            return L.Cosine()
        if k == "dropout":
            return L.Dropout(h["rate"], Rng(derive_seed(self.seed, "dropout", node.name)))
        if k == "meanmap":
            layer = MeanMapLayer(p["omega"], p["offsets"], p["log_scale"],
                                 bool(h.get("learn_frequencies", False)), bool(h.get("learn_scale", True)))
            layer.params = p  # keep the shared arrays
            return layer
        return None  # concat and losses are handled inline

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype if self.params else F64

    def forward(self, x, labels=None, training: bool = False, until: str | None = None):
        """Run the graph. Returns the loss (None without labels) and stores every
        node's output in ``self.activations``."""
        spec = self.spec
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != tuple(spec.input_shape):
            raise ShapeError(f"input batch shape {x.shape[1:]} != network input {tuple(spec.input_shape)}")
        acts = {INPUT: x}
        loss = None
        for node in spec.nodes:
            ins = [acts[s] for s in node.inputs]
            if node.kind in LOSS_KINDS:
                if labels is None:
                    continue
                fn = L.softmax_xent if node.kind == "softmax_xent" else L.squared_loss
                loss, self._loss_grad = fn(ins[0], labels)
                acts[node.name] = np.asarray(loss)
            elif node.kind == "concat":
                acts[node.name] = np.concatenate(ins, axis=1)
            else:
                try:
                    acts[node.name] = self.layers[node.name].forward(ins[0], training=training)
                except ValueError as err:
                    raise ShapeError(f"{node.name}: {err}") from None
                expect = spec.shapes.get(node.name)
                if expect is not None and acts[node.name].shape[1:] != expect:
                    raise ShapeError(f"{node.name}: runtime shape {acts[node.name].shape[1:]} != {expect}")
            if node.name == until:
                break
        self.activations = acts
        return loss

    def logits(self, x, batch_size: int = 64) -> np.ndarray:
        out = []
        for i in range(0, len(x), batch_size):
            self.forward(x[i:i + batch_size], training=False)
            out.append(self.activations[self.spec.output])
        return np.concatenate(out)

    def backward(self) -> dict[str, np.ndarray]:
        """Gradients of the last forward's loss for every trainable slot."""
        spec = self.spec
        if self._loss_grad is None:
            raise RuntimeError("backward called before a forward pass with labels")
        upstream: dict[str, np.ndarray] = {}
        grads: dict[str, np.ndarray] = {}

        def push(name, g):
            if name == INPUT or g is None:
                return
            upstream[name] = upstream[name] + g if name in upstream else g

        for node in reversed(spec.nodes):
            if node.kind in LOSS_KINDS:
                if node.name == spec.loss:
                    push(node.inputs[0], self._loss_grad)
                continue
            g = upstream.pop(node.name, None)
            if g is None:
                continue
            if node.kind == "concat":
                edges = np.cumsum([self.activations[s].shape[1] for s in node.inputs])[:-1]
                for src, part in zip(node.inputs, np.split(g, edges, axis=1)):
                    push(src, part)
                continue
            dx, pgrads = self.layers[node.name].backward(g)
            for local, pg in pgrads.items():
                sid = node.slots[local]
                if spec.slots[sid].trainable:
                    grads[sid] = pg
            push(node.inputs[0], dx)
        for sid, info in spec.slots.items():
            if info.trainable and sid not in grads:
                grads[sid] = np.zeros_like(self.params[sid])
        return grads

    def pattern(self):
        """Combined relu masks / max-pool winners of the last forward."""
        return tuple(layer.pattern() for layer in self.layers.values() if layer is not None)

    def calibrate(self, x, seed: int = 0) -> dict[str, float]:
        """Median-heuristic bandwidth for every mean map node from a warm-up batch."""
        sigmas = {}
        for node in self.spec.nodes:
            if node.kind == "meanmap":
                self.forward(x, training=False, until=node.inputs[0])
                feats = self.activations[node.inputs[0]]
                sigmas[node.name] = self.layers[node.name].calibrate(feats, Rng(derive_seed(seed, node.name)))
        return sigmas


def forward_full(spec, params, x, labels=None, mode: str = "infer", seed: int = 0):
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    net = Network(spec, params, seed)
    loss = net.forward(x, labels, training=mode == "train")
    return loss, net.activations


def backward_full(spec, params, x, labels, mode: str = "train", seed: int = 0):
    net = Network(spec, params, seed)
    net.forward(x, labels, training=mode == "train")
    return net.backward()


def grad_check_network(spec: NetworkSpec, params: dict, x, labels, step: float = 1e-6,
                       max_entries: int | None = 24, seed: int = 0, training: bool = False,
                       corrupt: float = 0.0) -> L.GradReport:
    """Central-difference check of every trainable slot on the network loss.

    Runs in float64 on copies of ``params``. The loss change caused by each
    perturbation is propagated node by node with the layers' ``delta``
    methods, so the difference quotient is free of the cancellation that
    subtracting two O(1) losses would cause. Perturbations that flip a relu
    sign or a max-pool winner are skipped as kink points. With ``training``
    one dropout mask is drawn and held fixed. ``corrupt`` scales the analytic
    gradients by ``1 + corrupt`` (negative control hook).
    """
    p64 = cast_params(params, F64)
    net = Network(spec, p64, seed)
    x = np.asarray(x, dtype=F64)
    net.forward(x, labels, training=training)
    if training:
        for layer in net.layers.values():
            if isinstance(layer, L.Dropout):
                layer.fixed_mask = layer.mask()
        net.forward(x, labels, training=True)
    analytic = {k: g * (1 + corrupt) for k, g in net.backward().items()}
    sizes = {k: p64[k].size for k in analytic}
    return L.check_gradients(lambda sid, i, v: loss_change(net, labels, sid, i, v), analytic, sizes,
                             step=step, max_entries=max_entries, rng=Rng(seed))


def loss_change(net: Network, labels, slot: str, index: int, value: float) -> float:
    """Loss change when entry ``index`` of ``slot`` moves by ``value``, around
    the network's last forward pass."""
    spec = net.spec
    owner = spec.node(spec.slots[slot].owner)
    local = next(k for k, v in owner.slots.items() if v == slot)
    acts = net.activations
    deltas: dict[str, np.ndarray] = {}
    started = False
    for node in spec.nodes:
        if node is owner:
            started = True
            deltas[node.name] = net.layers[node.name].delta(None, (local, index, value))
            continue
        if not started or not any(s in deltas for s in node.inputs):
            continue
        if node.kind in LOSS_KINDS:
            if node.name != spec.loss:
                continue
            logits = acts[node.inputs[0]]
            d = deltas[node.inputs[0]]
            if node.kind == "softmax_xent":
                return L.softmax_xent_delta(logits, labels, d)
            return L.squared_loss_delta(logits, labels, d)
        if node.kind == "concat":
            deltas[node.name] = np.concatenate(
                [deltas.get(s, np.zeros(acts[s].shape)) for s in node.inputs], axis=1)
        else:
            deltas[node.name] = net.layers[node.name].delta(deltas[node.inputs[0]])
    return 0.0


# ---------------------------------------------------------------- builders

@dataclass
class SynthNetConfig:
    classes: int = 4
    image_size: int = 60
    D: int = 256
    filters: int = 58
    kernel: int = 12
    stride: int = 1
    pool: int = 12
    pool_stride: int = 6
    hidden: int = 4096
    learn_scale: bool = True
    learn_frequencies: bool = False
    channels: int = 3

    @classmethod
    def paper(cls, **kw):
        base = dict(classes=8, image_size=120, D=4096, hidden=4096)
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, **kw):
        base = dict(hidden=1024)
        base.update(kw)
        return cls(**base)


SYNTH_KINDS = ("mml", "hid", "lin")


def _base_block(spec: NetworkSpec, cfg: SynthNetConfig, suffix: str = "", src: str = INPUT) -> str:
    conv = spec.add(f"conv1{suffix}", "conv", src, filters=cfg.filters, kernel=cfg.kernel,
                    stride=cfg.stride)
    act = spec.add(f"relu1{suffix}", "relu", conv)
    return spec.add(f"pool1{suffix}", "maxpool", act, window=cfg.pool, stride=cfg.pool_stride)


def build_synth(kind: str, cfg: SynthNetConfig) -> NetworkSpec:
    """conv(filters, kernel, stride) -> relu -> maxpool, then one of three heads:

    ``mml``: mean map layer -> classifier; ``hid``: flatten -> two relu hidden
    layers -> classifier; ``lin``: flatten -> classifier.
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown kind {kind!r}; valid kinds: {', '.join(SYNTH_KINDS)}")
    spec = NetworkSpec((cfg.channels, cfg.image_size, cfg.image_size))
    top = _base_block(spec, cfg)
    if kind == "mml":
        h = spec.add("meanmap", "meanmap", top, D=cfg.D, learn_frequencies=cfg.learn_frequencies,
                     learn_scale=cfg.learn_scale)
    else:
        h = spec.add("flatten", "flatten", top)
        if kind == "hid":
            for i in (1, 2):
                h = spec.add(f"fc{i}", "fc", h, units=cfg.hidden)
                h = spec.add(f"relu_fc{i}", "relu", h)
    spec.output = spec.add("classifier", "fc", h, units=cfg.classes)
    spec.loss = spec.add("loss", "softmax_xent", spec.output)
    spec.top = top
    spec.final_block = ["conv1", "relu1", "pool1"]
    spec.meta = {"family": "synth", "kind": kind, "config": asdict(cfg)}
    return spec.validate()


class ExtensionMode(str, enum.Enum):
    REPLACING = "replacing"
    REPLICATING = "replicating"
    FORKING = "forking"


@dataclass
class VariantFlags:
    dropout: bool = False
    rate: float = 0.5
    hidden: bool = False
    width: int = 1024
    frequency_learning: bool = False

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        if self.hidden and self.width < 1:
            raise ValueError("hidden width must be >= 1")

    @classmethod
    def parse(cls, text: str, **kw) -> "VariantFlags":
        names = {t.strip().lower() for t in text.replace("+", ",").split(",") if t.strip()}
        names.discard("none")
        unknown = names - {"dropout", "hidden", "freq"}
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}; valid: dropout, hidden, freq")
        return cls(dropout="dropout" in names, hidden="hidden" in names,
                   frequency_learning="freq" in names, **kw)

    def label(self) -> str:
        on = [n for n, f in (("dropout", self.dropout), ("hidden", self.hidden),
                             ("freq", self.frequency_learning)) if f]
        return ",".join(on) or "none"


def all_variants(**kw) -> list[VariantFlags]:
    return [VariantFlags(dropout=d, hidden=h, frequency_learning=f, **kw)
            for d in (False, True) for h in (False, True) for f in (False, True)]


def base_cnn(cfg: SynthNetConfig, head_width: int = 256) -> NetworkSpec:
    """Plain CNN with a fully connected head; the starting point for extensions."""
    spec = NetworkSpec((cfg.channels, cfg.image_size, cfg.image_size))
    top = _base_block(spec, cfg)
    h = spec.add("flatten", "flatten", top)
    h = spec.add("fc_head", "fc", h, units=head_width)
    pen = spec.add("relu_head", "relu", h)
    spec.output = spec.add("classifier", "fc", pen, units=cfg.classes)
    spec.loss = spec.add("loss", "softmax_xent", spec.output)
    spec.top, spec.penultimate = top, pen
    spec.final_block = ["conv1", "relu1", "pool1"]
    spec.meta = {"family": "base", "config": asdict(cfg), "head_width": head_width}
    return spec.validate()


def extend(base: NetworkSpec, mode, variants: VariantFlags, D: int, classes: int,
           learn_scale: bool = True) -> NetworkSpec:
    """Attach a mean map branch to a base network's top-level features.

    Replacing classifies on the embedding alone; Replicating feeds the same
    top-level features to the original head and to the embedding and
    concatenates the two; Forking duplicates the final convolution block so
    the embedding branch gets its own top-level features.
    """
    mode = ExtensionMode(mode)
    if base.top is None:
        raise ValueError("base network has no designated top-level feature node")
    if mode is not ExtensionMode.REPLACING and base.penultimate is None:
        raise ValueError("base network has no penultimate node to combine with")
    spec = NetworkSpec(tuple(base.input_shape))
    stop = base.top if mode is ExtensionMode.REPLACING else base.penultimate
    for node in base.nodes:
        spec.nodes.append(copy.deepcopy(node))
        if node.name == stop:
            break
    branch_src = base.top
    if mode is ExtensionMode.FORKING:
        if not base.final_block or base.final_block[-1] != base.top:
            raise ValueError("forking needs a final block ending at the top-level node")
        first = base.node(base.final_block[0])
        prev = first.inputs[0]
        for name in base.final_block:
            n = copy.deepcopy(base.node(name))
            n.name = f"{name}_fork"
            n.inputs = [prev if i == 0 else s for i, s in enumerate(n.inputs)]
            n.slots = {k: f"{n.name}.{k}" for k in n.slots}
            spec.nodes.append(n)
            prev = n.name
        branch_src = prev
    h = spec.add("meanmap", "meanmap", branch_src, D=D,
                 learn_frequencies=variants.frequency_learning, learn_scale=learn_scale)
    if variants.dropout:
        h = spec.add("meanmap_dropout", "dropout", h, rate=variants.rate)
    if variants.hidden:
        h = spec.add("meanmap_hidden", "fc", h, units=variants.width)
        h = spec.add("meanmap_hidden_relu", "relu", h)
    if mode is not ExtensionMode.REPLACING:
        h = spec.add("combine", "concat", [base.penultimate, h])
    spec.output = spec.add("classifier_mm", "fc", h, units=classes)
    spec.loss = spec.add("loss", "softmax_xent", spec.output)
    spec.top = base.top
    spec.penultimate = base.penultimate if mode is not ExtensionMode.REPLACING else None
    spec.final_block = list(base.final_block)
    spec.meta = {"family": "extension", "mode": mode.value, "variants": asdict(variants),
                 "D": D, "base": base.meta}
    return spec.validate()


# ------------------------------------------------------------- persistence

def save_model(directory, spec: NetworkSpec, params: dict) -> Path:
    """Manifest JSON, one tensor file per slot, and a basis bundle per mean map node."""
    d = Path(directory)
    (d / "params").mkdir(parents=True, exist_ok=True)
    manifest = spec.to_json()
    manifest["slots"] = {sid: {"shape": list(info.shape), "owner": info.owner,
                               "trainable": info.trainable, "dtype": str(params[sid].dtype),
                               "file": f"params/{sid}.dmmt"}
                         for sid, info in spec.slots.items()}
    for sid in spec.slots:
        save_tensor(d / "params" / f"{sid}.dmmt", np.ascontiguousarray(params[sid]))
    for node in spec.nodes:
        if node.kind == "meanmap":
            p = {k: params[s] for k, s in node.slots.items()}
            seed = spec.meta.get("seed")
            basis = RffBasis(p["omega"], p["offsets"], float(p["log_scale"][0]), "layer", seed)
            save_basis(d / "bases" / node.name, basis)
    (d / "model.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return d


def load_model(directory):
    d = Path(directory)
    manifest = json.loads((d / "model.json").read_text())
    spec = NetworkSpec.from_json(manifest)
    params = {sid: load_tensor(d / info["file"]) for sid, info in manifest["slots"].items()}
    return spec, params
