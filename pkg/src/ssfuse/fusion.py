"""CP-SSM, SP-SSM and FF-SSM fusion blocks and the composite MS2Fusion block.

All blocks take two feature maps of identical shape ``(..., d, H, W)`` and
return maps of that same shape. Leading axes are treated as a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .scan import ScanOrder, fold, unfold
from .ssm import SelectiveParams, SsmWeights, project_selective, scan_recurrent, ssm_forward
from .tensor import DimensionError, Tensor, read_sst1, write_sst1

FF_MODES = ("bidirectional", "12", "21")


@dataclass(frozen=True, eq=False)
class FFWeights:
    """The two projection/SSM sets of an FF-SSM: one per concatenation order."""

    path_12: SsmWeights
    path_21: SsmWeights

    def swapped(self) -> "FFWeights":
        return FFWeights(path_12=self.path_21, path_21=self.path_12)


@dataclass(frozen=True, eq=False)
class FusionBlockWeights:
    cp_v: SsmWeights
    cp_t: SsmWeights
    sp: SsmWeights
    ff_enh_v: FFWeights
    ff_enh_t: FFWeights
    ff_final: FFWeights
    exchange_c: bool = True
    scan_order: ScanOrder = ScanOrder.ROWS
    residual: bool = False

    def __post_init__(self):
        dims = {(w.d, w.d_state) for w in self.ssm_weights().values()}
        if len(dims) != 1:
            raise DimensionError(f"sub-blocks disagree on (d, d_state): {sorted(dims)}")

    @property
    def d(self) -> int:
        return self.cp_v.d

    @property
    def d_state(self) -> int:
        return self.cp_v.d_state

    def ssm_weights(self) -> dict[str, SsmWeights]:
        out = {"cp_v": self.cp_v, "cp_t": self.cp_t, "sp": self.sp}
        for name in ("ff_enh_v", "ff_enh_t", "ff_final"):
            ff = getattr(self, name)
            out[f"{name}.path_12"] = ff.path_12
            out[f"{name}.path_21"] = ff.path_21
        return out

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{prefix}.{k}": getattr(w, k)
                for prefix, w in self.ssm_weights().items()
                for k in SsmWeights.param_names()}

    def n_params(self) -> int:
        return sum(a.size for a in self.named_params().values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, FusionBlockWeights):
            return NotImplemented
        mine, theirs = self.named_params(), other.named_params()
        return (self.exchange_c == other.exchange_c
                and self.scan_order is other.scan_order
                and self.residual == other.residual
                and mine.keys() == theirs.keys()
                and all(np.array_equal(mine[k], theirs[k]) for k in mine))


@dataclass
class FusedOutput:
    f_fused: np.ndarray
    intermediates: dict[str, np.ndarray] = field(default_factory=dict)


def init_weights(
    d: int,
    d_state: int,
    seed: int,
    exchange_c: bool = True,
    scan_order: ScanOrder = ScanOrder.ROWS,
    residual: bool = False,
) -> FusionBlockWeights:
    """Seeded weights for every sub-block; the same seed gives bitwise identical weights."""
    rng = np.random.default_rng(seed)
    draw = lambda: SsmWeights.init(d, d_state, rng)  # noqa: E731
    cp_v, cp_t, sp = draw(), draw(), draw()
    ffs = [FFWeights(draw(), draw()) for _ in range(3)]
    return FusionBlockWeights(cp_v, cp_t, sp, *ffs, exchange_c=exchange_c,
                              scan_order=scan_order, residual=residual)


def _check_pair(F1, F2, d: int) -> tuple[np.ndarray, np.ndarray]:
    F1 = np.asarray(F1, dtype=np.float64)
    F2 = np.asarray(F2, dtype=np.float64)
    if F1.shape != F2.shape:
        raise DimensionError(f"feature maps differ in shape: {F1.shape} vs {F2.shape}")
    if F1.ndim < 3 or F1.shape[-3] != d:
        raise DimensionError(f"feature map {F1.shape} does not have {d} channels")
    return F1, F2


def _per_direction(F1, F2, order: ScanOrder, seq_fn: Callable) -> tuple[np.ndarray, ...]:
    """Run ``seq_fn(s1, s2) -> (out, ...)`` for each direction of ``order`` and fold the outputs."""
    d, H, W = F1.shape[-3:]
    per_dir = []
    for o in order.directions():
        per_dir.append(seq_fn(unfold(F1, o), unfold(F2, o)))
    outs = []
    for k in range(len(per_dir[0])):
        if order is ScanOrder.ROWS_AND_COLUMNS:
            outs.append(fold(tuple(p[k] for p in per_dir), d, H, W, order))
        else:
            outs.append(fold(per_dir[0][k], d, H, W, order))
    return tuple(outs)


def cp_ssm(F_V, F_T, w_v: SsmWeights, w_t: SsmWeights, exchange_c: bool = True,
           order: ScanOrder = ScanOrder.ROWS) -> tuple[np.ndarray, np.ndarray]:
    """Cross-parametric SSM: each branch scans its own sequence, optionally with the other branch's C."""
    F_V, F_T = _check_pair(F_V, F_T, w_v.d)

    def run(x_v, x_t):
        p_v, p_t = project_selective(x_v, w_v), project_selective(x_t, w_t)
        if exchange_c:
            p_v, p_t = p_v.replace(C=p_t.C), p_t.replace(C=p_v.C)
        return scan_recurrent(x_v, p_v, w_v)[0], scan_recurrent(x_t, p_t, w_t)[0]

    return _per_direction(F_V, F_T, order, run)


def sp_shared_params(x_v: np.ndarray, x_t: np.ndarray, w: SsmWeights) -> SelectiveParams:
    """Shared (B, C, delta) projected from the additive fusion of two sequences."""
    return project_selective(x_v + x_t, w)


def sp_ssm(F_V, F_T, w: SsmWeights, order: ScanOrder = ScanOrder.ROWS,
           return_params: bool = False):
    """Shared-parametric SSM: both modalities are scanned with one parameter set.

    With ``return_params`` the shared parameters used for each scan direction
    are returned as a third element.
    """
    F_V, F_T = _check_pair(F_V, F_T, w.d)
    used: list[SelectiveParams] = []

    def run(x_v, x_t):
        shared = sp_shared_params(x_v, x_t, w)
        used.append(shared)
        return scan_recurrent(x_v, shared, w)[0], scan_recurrent(x_t, shared, w)[0]

    out_v, out_t = _per_direction(F_V, F_T, order, run)
    if return_params:
        return out_v, out_t, used
    return out_v, out_t


def ff_paths(s1: np.ndarray, s2: np.ndarray, w: FFWeights, mode: str = "bidirectional"):
    """Scan the concatenations [s1; s2] and [s2; s1]; returns (y12, y21), None for a skipped path."""
    y12 = y21 = None
    if mode in ("bidirectional", "12"):
        y12 = ssm_forward(np.concatenate([s1, s2], axis=-2), w.path_12)
    if mode in ("bidirectional", "21"):
        y21 = ssm_forward(np.concatenate([s2, s1], axis=-2), w.path_21)
    return y12, y21


def ff_merge(y12: np.ndarray, y21: np.ndarray) -> np.ndarray:
    """Mean of the four length-L halves of both path outputs.

    Summed per path first, so swapping the paths leaves the result bitwise unchanged.
    """
    L = y12.shape[-2] // 2
    return ((y12[..., :L, :] + y12[..., L:, :]) + (y21[..., :L, :] + y21[..., L:, :])) / 4.0


def ff_ssm(F_1, F_2, w: FFWeights, order: ScanOrder = ScanOrder.ROWS,
           mode: str = "bidirectional") -> np.ndarray:
    """Feature-fusion SSM over both concatenation orders.

    ``mode="12"`` or ``"21"`` keeps a single path and reads it on the leading
    half of its sequence (the positions of the path's first input), which is
    strictly causal in raster order.
    """
    if mode not in FF_MODES:
        raise ValueError(f"unknown FF-SSM mode {mode!r}; expected one of {FF_MODES}")
    F_1, F_2 = _check_pair(F_1, F_2, w.path_12.d)

    def run(s1, s2):
        L = s1.shape[-2]
        y12, y21 = ff_paths(s1, s2, w, mode)
        if mode == "12":
            return (y12[..., :L, :],)
        if mode == "21":
            return (y21[..., :L, :],)
        return (ff_merge(y12, y21),)

    return _per_direction(F_1, F_2, order, run)[0]


def ms2fusion(F_V, F_T, w: FusionBlockWeights, record: bool = False) -> FusedOutput:
    """CP-SSM and SP-SSM on the raw inputs, two enhancement FF-SSMs, then a cross-modal FF-SSM."""
    F_V, F_T = _check_pair(F_V, F_T, w.d)
    order = w.scan_order
    cp_v, cp_t = cp_ssm(F_V, F_T, w.cp_v, w.cp_t, w.exchange_c, order)
    sp_v, sp_t = sp_ssm(F_V, F_T, w.sp, order)
    enh_v = ff_ssm(cp_v, sp_v, w.ff_enh_v, order)
    enh_t = ff_ssm(cp_t, sp_t, w.ff_enh_t, order)
    fused = ff_ssm(enh_v, enh_t, w.ff_final, order)
    if w.residual:
        fused = fused + (F_V + F_T) / 2.0
    inter = {}
    if record:
        inter = {"cp_v": cp_v, "cp_t": cp_t, "sp_v": sp_v, "sp_t": sp_t,
                 "enh_v": enh_v, "enh_t": enh_t}
    return FusedOutput(f_fused=fused, intermediates=inter)


# Weight manifest: one "<name>\t<file>\t<shape>" line per parameter, shape as "2x4".

MANIFEST_NAME = "manifest.txt"


def save_weights(directory: str | Path, w: FusionBlockWeights) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, arr in w.named_params().items():
        fname = f"{name}.sst"
        write_sst1(directory / fname, Tensor(arr))
        lines.append(f"{name}\t{fname}\t{'x'.join(str(s) for s in arr.shape)}")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_weights(manifest: str | Path, exchange_c: bool = True,
                 scan_order: ScanOrder = ScanOrder.ROWS, residual: bool = False) -> FusionBlockWeights:
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / MANIFEST_NAME
    params: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{manifest}:{lineno}: expected name<TAB>file<TAB>shape")
        name, fname, shape_text = parts
        arr = read_sst1(manifest.parent / fname).numpy()
        shape = tuple(int(s) for s in shape_text.split("x")) if shape_text else ()
        if arr.shape != shape:
            raise DimensionError(f"{name}: file holds {arr.shape}, manifest says {shape}")
        params[name] = arr

    def ssm(prefix: str) -> SsmWeights:
        try:
            return SsmWeights(**{k: params[f"{prefix}.{k}"] for k in SsmWeights.param_names()})
        except KeyError as exc:
            raise ValueError(f"manifest is missing parameter {exc.args[0]}") from None

    return FusionBlockWeights(
        cp_v=ssm("cp_v"), cp_t=ssm("cp_t"), sp=ssm("sp"),
        ff_enh_v=FFWeights(ssm("ff_enh_v.path_12"), ssm("ff_enh_v.path_21")),
        ff_enh_t=FFWeights(ssm("ff_enh_t.path_12"), ssm("ff_enh_t.path_21")),
        ff_final=FFWeights(ssm("ff_final.path_12"), ssm("ff_final.path_21")),
        exchange_c=exchange_c, scan_order=scan_order, residual=residual,
    )
