"""Network structure model: layer descriptors, structural features, FLOPs.

A network is described by a plain-text ``.net`` file, one record per line::

    # comment
    name resnet56
    layer <index> <tag> <n> <c> <k> <out_h> <out_w> <prunable:yes|no> <producer:int|none>

``n``/``c`` are input/output channel counts, ``k`` the kernel size and
``out_h``/``out_w`` the output feature-map size. ``producer`` names the layer
whose output-channel count determines this layer's input width (``none`` when
the input is the network input or a full-width merge point, e.g. after a
residual add). Channel-coupled FLOPs accounting follows these producer links.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_NAMES = ("n", "c", "k", "k_out", "params", "flops", "n_over_c")


class DescriptorError(ValueError):
    """Raised for unparseable or structurally invalid network descriptors."""


@dataclass(frozen=True)
class LayerDescriptor:
    """Structural description of a single layer."""

    index: int
    tag: str
    n: int
    c: int
    k: int
    out_h: int
    out_w: int
    prunable: bool
    producer: int | None = None

    def __post_init__(self) -> None:
        for field in ("n", "c", "k", "out_h", "out_w"):
            value = getattr(self, field)
            if value < 1:
                raise DescriptorError(
                    f"layer {self.index}: {field}={value} must be >= 1"
                )

    @property
    def params(self) -> int:
        return self.n * self.c * self.k * self.k

    @property
    def flops(self) -> int:
        return self.params * self.out_h * self.out_w

    @property
    def k_out(self) -> int:
        return self.out_h * self.out_w

    @property
    def ratio(self) -> float:
        return self.n / self.c

    def features(self) -> tuple[float, ...]:
        """The 7 structural features used for layer clustering."""
        return (
            float(self.n),
            float(self.c),
            float(self.k),
            float(self.k_out),
            float(self.params),
            float(self.flops),
            self.ratio,
        )


@dataclass(frozen=True)
class NetworkDescriptor:
    """An ordered stack of layers plus the subset open to pruning."""

    name: str
    layers: tuple[LayerDescriptor, ...]
    prunable_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.prunable_indices:
            raise DescriptorError(f"network {self.name!r} has no prunable layers")
        known = {layer.index for layer in self.layers}
        previous = -1
        for idx in self.prunable_indices:
            if idx not in known:
                raise DescriptorError(f"prunable index {idx} is not a layer")
            if idx <= previous:
                raise DescriptorError("prunable indices must be strictly increasing")
            previous = idx

    @property
    def num_prunable(self) -> int:
        return len(self.prunable_indices)

    def prunable_layers(self) -> tuple[LayerDescriptor, ...]:
        by_index = {layer.index: layer for layer in self.layers}
        return tuple(by_index[i] for i in self.prunable_indices)


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-prunable-layer feature rows, optionally z-scored per column.

    ``shift``/``scale`` record the applied normalization (identity when
    ``normalize=False``); constant columns are shifted to zero and left with
    unit scale so they contribute nothing to any distance.
    """

    values: np.ndarray
    shift: np.ndarray
    scale: np.ndarray
    layer_indices: tuple[int, ...]

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]


def _parse_layer_line(parts: list[str], lineno: int) -> LayerDescriptor:
    if len(parts) != 9:
        raise DescriptorError(
            f"line {lineno}: expected 9 fields "
            "(index tag n c k out_h out_w prunable producer), got "
            f"{len(parts)}"
        )
    try:
        index = int(parts[0])
        n, c, k, out_h, out_w = (int(p) for p in parts[2:7])
    except ValueError as exc:
        raise DescriptorError(f"line {lineno}: non-integer field ({exc})") from None
    flag = parts[7].lower()
    if flag not in ("yes", "no"):
        raise DescriptorError(f"layer {index}: prunable flag must be yes or no")
    if parts[8].lower() == "none":
        producer: int | None = None
    else:
        try:
            producer = int(parts[8])
        except ValueError:
            raise DescriptorError(f"layer {index}: bad producer {parts[8]!r}") from None
    return LayerDescriptor(
        index=index,
        tag=parts[1],
        n=n,
        c=c,
        k=k,
        out_h=out_h,
        out_w=out_w,
        prunable=(flag == "yes"),
        producer=producer,
    )


def load_network(path: str | Path) -> NetworkDescriptor:
    """Parse a ``.net`` descriptor file.

    Raises :class:`DescriptorError` naming the offending layer or line when
    the file is malformed or violates a structural invariant.
    """
    path = Path(path)
    name = path.stem
    layers: list[LayerDescriptor] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "name":
            if len(parts) != 2:
                raise DescriptorError(f"line {lineno}: name takes one value")
            name = parts[1]
        elif parts[0] == "layer":
            layers.append(_parse_layer_line(parts[1:], lineno))
        else:
            raise DescriptorError(f"line {lineno}: unknown record {parts[0]!r}")
    if not layers:
        raise DescriptorError(f"{path}: no layer records")
    for position, layer in enumerate(layers):
        if layer.index != position:
            raise DescriptorError(
                f"layer {layer.index}: indices must run 0..{len(layers) - 1} in order"
            )
        if layer.producer is not None and not 0 <= layer.producer < layer.index:
            raise DescriptorError(
                f"layer {layer.index}: producer {layer.producer} must precede it"
            )
    prunable = tuple(layer.index for layer in layers if layer.prunable)
    return NetworkDescriptor(name=name, layers=tuple(layers), prunable_indices=prunable)


def feature_matrix(net: NetworkDescriptor, normalize: bool = True) -> FeatureMatrix:
    """Feature rows for the prunable layers, z-scored per column by default.

    Z-scoring uses the population standard deviation. Constant columns
    (zero variance) become all-zero instead of dividing by zero.
    """
    rows = np.array([layer.features() for layer in net.prunable_layers()], dtype=float)
    if not normalize:
        return FeatureMatrix(
            values=rows,
            shift=np.zeros(rows.shape[1]),
            scale=np.ones(rows.shape[1]),
            layer_indices=net.prunable_indices,
        )
    shift = rows.mean(axis=0)
    scale = rows.std(axis=0)
    safe = np.where(scale > 0.0, scale, 1.0)
    values = (rows - shift) / safe
    return FeatureMatrix(
        values=values, shift=shift, scale=safe, layer_indices=net.prunable_indices
    )


def validate_policy(net: NetworkDescriptor, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (net.num_prunable,):
        raise ValueError(
            f"policy length {policy.shape} does not match "
            f"{net.num_prunable} prunable layers"
        )
    if np.any(policy <= 0.0) or np.any(policy > 1.0):
        raise ValueError("policy entries must lie in (0, 1]")
    return policy


def flops(net: NetworkDescriptor, policy: np.ndarray | None = None) -> float:
    """Total FLOPs of the network, scaled by a pruning policy when given.

    A prunable layer keeps the output fraction ``policy[i]``; every layer's
    input fraction is the output fraction of its producer (1.0 for
    unpruned producers or network inputs). FLOPs scale by the product of
    the two fractions.
    """
    if policy is None:
        return float(math.fsum(float(layer.flops) for layer in net.layers))
    policy = validate_policy(net, policy)
    out_fraction = {idx: policy[slot] for slot, idx in enumerate(net.prunable_indices)}
    total = []
    for layer in net.layers:
        factor = out_fraction.get(layer.index, 1.0)
        if layer.producer is not None:
            factor *= out_fraction.get(layer.producer, 1.0)
        total.append(float(layer.flops) * factor)
    return float(math.fsum(total))


def flops_ratio(net: NetworkDescriptor, policy: np.ndarray) -> float:
    """Pruned-to-original FLOPs ratio for a layer-space policy."""
    return flops(net, policy) / flops(net)
