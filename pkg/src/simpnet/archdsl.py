"""Architecture description language, builders, and ablation presets.

The text format is line-oriented, one layer per line, `#` comments:

    input 3 32 32
    group g1
    conv 3 32 s1 p1
    bn
    relu
    dropout p0.2
    safpool 2 p0.2 s2
    group head
    gap
    flatten
    dense 10

Flags: s<int> is stride, p<int> is padding on conv/sconv, p<float> is a
probability on safpool/dropout. A valid file is one input line, one or
more named groups, and exactly one classifier tail: `gap`, or
`flatten` + `dense`, or `gap` + `flatten` + `dense`.

Published per-layer widths for the reference architectures are not
available; preset width vectors are derived here by a deterministic
solver that hits the published parameter totals within tolerance while
preserving depth, pooling placement and kernel sizes.
"""

from __future__ import annotations

import importlib.resources
import re
import warnings
from dataclasses import dataclass, replace

from . import layers as L
from .errors import ArchParseError, ArchValidationError, ShapeError
from .network import Model, count_params

CONV_KERNELS = (1, 2, 3, 5, 7)

KINDS = ("conv", "sconv", "maxpool", "safpool", "gap", "bn", "relu", "dropout", "dense", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 0  # conv/sconv kernel, pool window
    channels: int = 0  # conv/sconv out channels, dense units
    stride: int = 0
    pad: int = 0
    p: float = 0.0  # dropout / SAF drop probability


@dataclass
class ArchSpec:
    name: str
    input_shape: tuple[int, int, int]  # (c, h, w)
    groups: list[tuple[str, list[LayerSpec]]]

    def flat_layers(self) -> list[LayerSpec]:
        return [ls for _, group in self.groups for ls in group]

    def conv_widths(self) -> list[int]:
        return [ls.channels for ls in self.flat_layers() if ls.kind in ("conv", "sconv")]


# ---------------------------------------------------------------------------
# parsing


def _tokens(line: str):
    return [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", line)]


def _want_int(tok: str, lineno: int, col: int, what: str) -> int:
    if not re.fullmatch(r"\d+", tok):
        raise ArchParseError(f"expected integer {what}, got {tok!r}", lineno, col)
    return int(tok)


def _want_float(tok: str, lineno: int, col: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ArchParseError(f"expected number {what}, got {tok!r}", lineno, col) from None


def _parse_flags(toks, lineno, kind):
    """s<k>/p<k or real> flags; returns (stride, pad, p) with None = unset.

    The p flag means padding on conv/sconv and a probability on
    safpool/dropout; other kinds reject it.
    """
    stride = pad = prob = None
    for tok, col in toks:
        if tok.startswith("s") and stride is None:
            stride = _want_int(tok[1:], lineno, col, "stride")
        elif tok.startswith("p") and pad is None and prob is None and kind in ("conv", "sconv"):
            pad = _want_int(tok[1:], lineno, col, "padding")
        elif tok.startswith("p") and pad is None and prob is None and kind in ("safpool", "dropout"):
            prob = _want_float(tok[1:], lineno, col, "probability")
            if not 0.0 <= prob < 1.0:
                raise ArchParseError(f"probability must be in [0, 1), got {prob}", lineno, col)
        else:
            raise ArchParseError(f"unexpected token {tok!r}", lineno, col)
    return stride, pad, prob


def parse(text: str, name: str = "arch") -> ArchSpec:
    """Parse architecture text; reports line/column on failure."""
    input_shape = None
    groups: list[tuple[str, list[LayerSpec]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        toks = _tokens(line)
        head, col = toks[0]
        rest = toks[1:]
        if input_shape is None:
            if head != "input":
                raise ArchParseError(f"expected 'input c h w' first, got {head!r}", lineno, col)
            if len(rest) != 3:
                raise ArchParseError("input takes exactly 3 dims (c h w)", lineno, col)
            c, h, w = (_want_int(t, lineno, tc, "dimension") for t, tc in rest)
            if min(c, h, w) < 1:
                raise ArchParseError("input dims must be >= 1", lineno, col)
            input_shape = (c, h, w)
            continue
        if head == "input":
            raise ArchParseError("duplicate input line", lineno, col)
        if head == "group":
            if len(rest) != 1:
                raise ArchParseError("group takes exactly one name", lineno, col)
            groups.append((rest[0][0], []))
            continue
        if head not in KINDS:
            raise ArchParseError(f"unknown keyword {head!r}", lineno, col)
        if not groups:
            raise ArchParseError(f"layer {head!r} before any group", lineno, col)

        if head in ("conv", "sconv"):
            if len(rest) < 2:
                raise ArchParseError(f"{head} needs kernel and out_channels", lineno, col)
            (ktok, kcol), (ctok, ccol) = rest[0], rest[1]
            kernel = _want_int(ktok, lineno, kcol, "kernel")
            if kernel not in CONV_KERNELS:
                raise ArchParseError(f"kernel {kernel} not in allowed set {CONV_KERNELS}", lineno, kcol)
            channels = _want_int(ctok, lineno, ccol, "out_channels")
            stride, pad, _ = _parse_flags(rest[2:], lineno, head)
            spec = LayerSpec(
                head,
                kernel=kernel,
                channels=channels,
                stride=stride if stride is not None else (2 if head == "sconv" else 1),
                pad=pad if pad is not None else 0,
            )
        elif head in ("maxpool", "safpool"):
            if len(rest) < 1:
                raise ArchParseError(f"{head} needs a window size", lineno, col)
            wtok, wcol = rest[0]
            window = _want_int(wtok, lineno, wcol, "window")
            if window < 1:
                raise ArchParseError("window must be >= 1", lineno, wcol)
            stride, _, prob = _parse_flags(rest[1:], lineno, head)
            spec = LayerSpec(
                head,
                kernel=window,
                stride=stride if stride is not None else window,
                p=prob if prob is not None else 0.0,
            )
        elif head == "dropout":
            _, _, prob = _parse_flags(rest, lineno, head)
            if prob is None:
                raise ArchParseError("dropout needs p<real>", lineno, col)
            spec = LayerSpec(head, p=prob)
        elif head == "dense":
            if len(rest) != 1:
                raise ArchParseError("dense takes exactly one unit count", lineno, col)
            utok, ucol = rest[0]
            spec = LayerSpec(head, channels=_want_int(utok, lineno, ucol, "units"))
        else:  # gap, bn, relu, flatten
            if rest:
                raise ArchParseError(f"{head} takes no arguments", lineno, rest[0][1])
            spec = LayerSpec(head)
        groups[-1][1].append(spec)

    if input_shape is None:
        raise ArchParseError("empty architecture (no input line)", 1, 1)
    spec = ArchSpec(name=name, input_shape=input_shape, groups=groups)
    validate(spec)
    return spec


def render(spec: ArchSpec) -> str:
    """Canonical text form; parse(render(s)) == s."""
    lines = [f"input {spec.input_shape[0]} {spec.input_shape[1]} {spec.input_shape[2]}"]
    for gname, group in spec.groups:
        lines.append(f"group {gname}")
        for ls in group:
            if ls.kind in ("conv", "sconv"):
                lines.append(f"{ls.kind} {ls.kernel} {ls.channels} s{ls.stride} p{ls.pad}")
            elif ls.kind in ("maxpool", "safpool"):
                probe = f" p{ls.p!r}" if ls.kind == "safpool" else ""
                lines.append(f"{ls.kind} {ls.kernel}{probe} s{ls.stride}")
            elif ls.kind == "dropout":
                lines.append(f"dropout p{ls.p!r}")
            elif ls.kind == "dense":
                lines.append(f"dense {ls.channels}")
            else:
                lines.append(ls.kind)
    return "\n".join(lines) + "\n"


def validate(spec: ArchSpec):
    """Structural checks: non-empty groups and exactly one classifier tail."""
    if not spec.groups:
        raise ArchValidationError("architecture has no groups")
    for gname, group in spec.groups:
        if not group:
            raise ArchValidationError(f"group {gname!r} is empty")
    flat = spec.flat_layers()
    kinds = [ls.kind for ls in flat]
    tail_starts = [i for i, k in enumerate(kinds) if k in ("gap", "flatten")]
    if kinds.count("dense") > 1:
        raise ArchValidationError("more than one dense layer")
    if not tail_starts:
        raise ArchValidationError("no classifier tail (need gap, or flatten + dense)")
    t = tail_starts[0]
    tail = tuple(kinds[t:])
    if tail not in (("gap",), ("flatten", "dense"), ("gap", "flatten", "dense")):
        raise ArchValidationError(f"invalid classifier tail {tail}; expected gap, flatten+dense, or gap+flatten+dense")
    if "dense" in kinds[:t]:
        raise ArchValidationError("dense layer before the classifier tail")


# ---------------------------------------------------------------------------
# building


def build(spec: ArchSpec) -> Model:
    """Instantiate a Model from a spec; parameters are uninitialized until
    Model.init_params. Shape-checked symbolically end to end."""
    validate(spec)
    c, h, w = spec.input_shape
    shape = (1, c, h, w)
    built: list[L.Layer] = []
    counters: dict[str, int] = {}

    def fresh(kind_label: str) -> str:
        counters[kind_label] = counters.get(kind_label, 0) + 1
        return f"{kind_label}{counters[kind_label]}"

    for ls in spec.flat_layers():
        ch = shape[1]
        if ls.kind == "conv":
            layer = L.Conv2d(fresh("conv"), ch, ls.channels, ls.kernel, ls.stride, ls.pad)
        elif ls.kind == "sconv":
            layer = L.StridedConvDown(fresh("sconv"), ch, ls.channels, ls.kernel, ls.stride, ls.pad)
        elif ls.kind == "maxpool":
            layer = L.MaxPool(fresh("pool"), ls.kernel, ls.stride)
        elif ls.kind == "safpool":
            layer = L.SafPool(fresh("safpool"), ls.kernel, ls.p, ls.stride)
        elif ls.kind == "bn":
            layer = L.BatchNorm(fresh("bn"), ch)
        elif ls.kind == "relu":
            layer = L.ReLU(fresh("relu"))
        elif ls.kind == "dropout":
            layer = L.Dropout(fresh("drop"), ls.p)
        elif ls.kind == "gap":
            layer = L.GlobalAvgPool(fresh("gap"))
        elif ls.kind == "flatten":
            layer = L.Flatten(fresh("flatten"))
        elif ls.kind == "dense":
            if len(shape) != 2:
                raise ArchValidationError("dense must follow flatten")
            layer = L.Dense(fresh("dense"), shape[1], ls.channels)
        else:  # unreachable given parse
            raise ArchValidationError(f"unknown kind {ls.kind!r}")
        try:
            shape = layer.out_shape(shape)
        except ShapeError as e:
            raise ArchValidationError(
                f"shape collapses at {layer.name}: {e} "
                "(feature maps shrank too far before the classifier tail)"
            ) from e
        built.append(layer)
    return Model(built, spec.input_shape, name=spec.name)


# ---------------------------------------------------------------------------
# builders


def conv_stack(
    widths,
    pool_after,
    *,
    input_shape=(3, 32, 32),
    num_classes: int = 10,
    kernels=None,
    batchnorm: bool = True,
    conv_dropout_p: float = 0.2,
    downsample: str = "safpool",
    saf_drop_p: float = 0.2,
    global_pool: str = "avg",
    name: str = "convnet",
) -> ArchSpec:
    """Homogeneous-group conv net: runs of conv(+bn+relu+dropout) blocks
    separated by downsampling layers, with a global-pool classifier tail.

    pool_after lists how many conv layers precede each downsampling
    layer. downsample is one of safpool / maxpool / sconv (the sconv is
    a k=2 stride-2 conv + relu at the same positions).
    """
    widths = list(widths)
    depth = len(widths)
    pool_after = tuple(sorted(pool_after))
    if any(p < 1 or p > depth for p in pool_after):
        raise ValueError(f"pool_after positions must be in [1, {depth}]")
    if downsample not in ("safpool", "maxpool", "sconv"):
        raise ValueError(f"unknown downsample {downsample!r}")
    kernels = [3] * depth if kernels is None else list(kernels)
    if len(kernels) != depth:
        raise ValueError("kernels must match widths length")

    c, h, w = input_shape
    groups: list[tuple[str, list[LayerSpec]]] = []
    bounds = list(pool_after) + ([depth] if (not pool_after or pool_after[-1] != depth) else [])
    start = 0
    for gi, end in enumerate(bounds, start=1):
        block: list[LayerSpec] = []
        for i in range(start, end):
            k = kernels[i]
            block.append(LayerSpec("conv", kernel=k, channels=widths[i], stride=1, pad=k // 2))
            if batchnorm:
                block.append(LayerSpec("bn"))
            block.append(LayerSpec("relu"))
            if conv_dropout_p > 0:
                block.append(LayerSpec("dropout", p=conv_dropout_p))
        if end in pool_after:
            if downsample == "safpool":
                block.append(LayerSpec("safpool", kernel=2, stride=2, p=saf_drop_p))
            elif downsample == "maxpool":
                block.append(LayerSpec("maxpool", kernel=2, stride=2))
            else:
                block.append(LayerSpec("sconv", kernel=2, channels=widths[end - 1], stride=2, pad=0))
                block.append(LayerSpec("relu"))
            h, w = (h - 2) // 2 + 1, (w - 2) // 2 + 1
        groups.append((f"g{gi}", block))
        start = end

    if global_pool == "avg":
        head = [LayerSpec("gap")]
    elif global_pool == "max":
        head = [] if h == 1 and w == 1 else [LayerSpec("maxpool", kernel=min(h, w), stride=min(h, w))]
    else:
        raise ValueError(f"unknown global_pool {global_pool!r}")
    head += [LayerSpec("flatten"), LayerSpec("dense", channels=num_classes)]
    groups.append(("head", head))
    return ArchSpec(name=name, input_shape=tuple(input_shape), groups=groups)


def simpnet(widths, input_shape=(3, 32, 32), num_classes: int = 10, **options) -> ArchSpec:
    """13-conv-layer stack with downsampling after layers 5 and 10.

    Options are forwarded to conv_stack (batchnorm, conv_dropout_p,
    saf_drop_p, downsample, global_pool). Width vectors are taken
    verbatim; non-decreasing widths are recommended.
    """
    widths = list(widths)
    if len(widths) != 13:
        raise ValueError(f"simpnet takes exactly 13 widths, got {len(widths)}")
    if any(b < a for a, b in zip(widths, widths[1:])):
        warnings.warn("simpnet widths are not non-decreasing; pyramid shape is recommended")
    options.setdefault("name", "simpnet13")
    return conv_stack(widths, (5, 10), input_shape=input_shape, num_classes=num_classes, **options)


# ---------------------------------------------------------------------------
# width solver


def solve_widths(make_spec, profile, target: int, tol: float = 0.02, min_width: int = 4) -> list[int]:
    """Find integer widths w = round(scale * profile) whose built model
    has a parameter total within tol of target.

    make_spec(widths) -> ArchSpec. Bisection on the scale followed by
    greedy +-1 refinement; deterministic.
    """
    profile = [float(p) for p in profile]

    def widths_at(scale: float) -> list[int]:
        return [max(min_width, round(scale * p)) for p in profile]

    def total(ws) -> int:
        return count_params(build(make_spec(ws))).total_params

    lo, hi = 0.25, 8.0
    while total(widths_at(hi)) < target:
        hi *= 2
        if hi > 2**20:
            raise ValueError("budget solver diverged (target too large)")
    for _ in range(60):
        mid = (lo + hi) / 2
        if total(widths_at(mid)) < target:
            lo = mid
        else:
            hi = mid
    best = min((widths_at(s) for s in (lo, hi)), key=lambda ws: abs(total(ws) - target))
    keep_monotone = all(b >= a for a, b in zip(best, best[1:]))

    # greedy refinement: bump single widths while it helps; when the
    # profile is a pyramid, only moves that keep it non-decreasing
    for _ in range(200):
        err = abs(total(best) - target)
        if err == 0:
            break
        candidates = []
        for i in range(len(best)):
            for d in (-1, 1):
                trial = list(best)
                trial[i] += d
                if trial[i] < min_width:
                    continue
                if keep_monotone and not all(b >= a for a, b in zip(trial, trial[1:])):
                    continue
                candidates.append((abs(total(trial) - target), trial))
        candidates.sort(key=lambda t: t[0])
        if not candidates or candidates[0][0] >= err:
            break
        best = candidates[0][1]

    achieved = total(best)
    if abs(achieved - target) > tol * target:
        raise ValueError(f"budget solver missed target {target} (got {achieved})")
    return best


# ---------------------------------------------------------------------------
# ablation presets


@dataclass(frozen=True)
class Preset:
    name: str
    arms: tuple[tuple[str, ArchSpec], ...]
    dataset: str
    equal_budget: bool
    note: str

    def arm_names(self):
        return [n for n, _ in self.arms]


_PROFILE13 = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 4, 4, 4]
_PROFILE8 = [1, 1, 1, 2, 2, 2, 4, 4]


def _stack_solver(pool_after, target, *, profile, input_shape, num_classes, tol=0.02, **opts):
    def mk(ws):
        return conv_stack(ws, pool_after, input_shape=input_shape, num_classes=num_classes, **opts)

    ws = solve_widths(mk, profile, target, tol=tol)
    return mk(ws), ws


def ablation_presets(input_shape=(3, 32, 32), num_classes: int = 10) -> dict[str, Preset]:
    """Named experiment presets. Width vectors are re-derived for the
    requested input shape so parameter budgets always land; published
    totals are referenced at the (3,32,32)/10-class shape."""
    common = dict(input_shape=tuple(input_shape), num_classes=num_classes)
    presets: dict[str, Preset] = {}

    def add(name, arms, dataset, equal_budget, note):
        named = tuple((an, replace(spec, name=f"{name}/{an}")) for an, spec in arms)
        presets[name] = Preset(name, named, dataset, equal_budget, note)

    # depth sweep at a fixed 300K budget
    depth_layouts = {
        "depth8": ((3, 6), [1, 1, 1, 2, 2, 2, 4, 4]),
        "depth9": ((4, 7), [1, 1, 1, 1, 2, 2, 2, 4, 4]),
        "depth10": ((4, 8), [1, 1, 1, 1, 2, 2, 2, 2, 4, 4]),
        "depth13": ((5, 10), _PROFILE13),
    }
    arms = []
    for arm, (pools, profile) in depth_layouts.items():
        spec, _ = _stack_solver(pools, 300_000, profile=profile, **common)
        arms.append((arm, spec))
    add("depth-gradual", arms, "cifar10", True, "vary depth, hold the parameter budget at 300K")

    # wide-shallow vs deeper-but-thinner (budgets intentionally differ)
    wide, _ = _stack_solver((2, 4), 1_100_000, profile=[1, 1, 2, 2, 4, 4], **common)
    deep, _ = _stack_solver((4, 8), 570_000, profile=[1, 1, 1, 1, 2, 2, 2, 2, 4, 4], **common)
    add(
        "shallow-vs-deep",
        [("wide6-1.1m", wide), ("deep10-570k", deep)],
        "cifar10",
        False,
        "6 layers at 1.1M vs 10 layers at 570K; budgets differ by design",
    )

    # balanced vs end-heavy width allocation, equal budgets
    wide_end_profile = [1] * 10 + [6, 8, 10]
    for tag, budget in (("128k", 128_000), ("8m", 8_000_000)):
        bal, _ = _stack_solver((5, 10), budget, profile=_PROFILE13, **common)
        heavy, _ = _stack_solver((5, 10), budget, profile=wide_end_profile, **common)
        add(
            f"balanced-vs-wide-end-{tag}",
            [("balanced", bal), ("wide-end", heavy)],
            "cifar10",
            True,
            f"width allocation balanced vs end-heavy at {tag} params",
        )

    # single pooling layer placed as the 3rd / 5th / 7th layer
    def mk_pool(ws, convs_before):
        return conv_stack(ws, (convs_before,), **common)

    widths53 = solve_widths(lambda ws: mk_pool(ws, 4), _PROFILE13, 53_000)
    add(
        "pool-placement",
        [
            ("pool-l3", mk_pool(widths53, 2)),
            ("pool-l5", mk_pool(widths53, 4)),
            ("pool-l7", mk_pool(widths53, 6)),
        ],
        "cifar10",
        True,
        "one pooling layer placed as the 3rd/5th/7th layer, identical widths (53K)",
    )

    # kernel-size sweep on an 8-layer stack
    kernel_arms = [
        ("3x3-300k", [3] * 8, 300_000),
        ("3x3-1.6m", [3] * 8, 1_600_000),
        ("5x5-1.6m", [5] * 8, 1_600_000),
        ("7x7-300k-v1", [7] * 8, 300_000),
        ("7x7-300k-v2", [7, 7, 3, 3, 3, 3, 3, 3], 300_000),
        ("7x7-1.6m", [7] * 8, 1_600_000),
    ]
    arms = []
    for arm, kernels, budget in kernel_arms:
        spec, _ = _stack_solver((3, 6), budget, profile=_PROFILE8, kernels=kernels, **common)
        arms.append((arm, spec))
    add(
        "kernel-size",
        arms,
        "cifar10",
        False,
        "kernel size vs budget grid; compare arms sharing a budget",
    )

    # max-pooling vs strided-convolution downsampling at matched budget
    mp, _ = _stack_solver((5, 10), 360_000, profile=_PROFILE13, downsample="maxpool", **common)
    mp_total = count_params(build(mp)).total_params

    def mk_sconv(ws):
        return conv_stack(ws, (5, 10), downsample="sconv", **common)

    sconv_ws = solve_widths(mk_sconv, _PROFILE13, mp_total, tol=0.004)
    add(
        "maxpool-vs-sconv",
        [("maxpool", mp), ("sconv", mk_sconv(sconv_ws))],
        "cifar10",
        True,
        "downsample by max-pool vs stride-2 conv at a matched 360K budget",
    )

    # SAF-pooling vs plain max-pooling, identical widths
    saf, saf_ws = _stack_solver((5, 10), 300_000, profile=_PROFILE13, downsample="safpool", **common)
    plain = conv_stack(saf_ws, (5, 10), downsample="maxpool", **common)
    add(
        "saf-vs-plain-pool",
        [("saf", saf), ("plain", plain)],
        "cifar10",
        True,
        "SAF pooling (max-pool + drop) vs plain max-pool, identical widths (300K)",
    )
    return presets


# ---------------------------------------------------------------------------
# packaged builder presets (frozen width configs)


def builder_presets() -> dict[str, ArchSpec]:
    """Architectures shipped as versioned .arch config files."""
    out = {}
    root = importlib.resources.files("simpnet.presets")
    for res in sorted(root.iterdir(), key=lambda r: r.name):
        if res.name.endswith(".arch"):
            name = res.name[: -len(".arch")].replace("_", "-")
            out[name] = parse(res.read_text(encoding="utf-8"), name=name)
    return out


def load_arch_file(path) -> ArchSpec:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    import os

    return parse(text, name=os.path.splitext(os.path.basename(path))[0])
