"""Finite-difference sensitivities, ERF maps, scan-form equivalence and complexity counts."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .data import synthetic_pair
from .fusion import FusionBlockWeights, ff_ssm, ms2fusion
from .ssm import SsmWeights, apply_kernel, kernel_lti, lti_params, scan_recurrent

Block = Callable[[np.ndarray, np.ndarray], np.ndarray]

SUPPORT_THRESHOLD = 1e-12
ERF_BLOCKS = ("ms2fusion", "ff_uni_12", "ff_uni_21", "ff_bidir", "conv3_ref")
METHODS = ("ms2fusion", "cnn_ref", "attention_ref")


class NumericError(ArithmeticError):
    """A probed block produced non-finite output."""


def fd_jacobian(block: Block, F_V, F_T, eps: float = 1e-4, batch: int = 256) -> np.ndarray:
    """Central differences of every block output w.r.t. every input coordinate.

    Returns shape ``(2, d, H, W) + output_shape``. ``block`` must accept a
    leading batch axis on both inputs; probes are evaluated ``batch`` at a time.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.stack([np.asarray(F_V, dtype=np.float64), np.asarray(F_T, dtype=np.float64)])
    n = x.size
    flat = x.reshape(-1)
    rows = []
    for start in range(0, n, batch):
        idx = np.arange(start, min(start + batch, n))
        probes = np.repeat(flat[None, :], 2 * len(idx), axis=0)
        probes[np.arange(len(idx)), idx] += eps
        probes[len(idx) + np.arange(len(idx)), idx] -= eps
        probes = probes.reshape((2 * len(idx),) + x.shape)
        out = np.asarray(block(probes[:, 0], probes[:, 1]), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NumericError("block output is not finite under perturbation")
        rows.append((out[: len(idx)] - out[len(idx):]) / (2.0 * eps))
    jac = np.concatenate(rows)
    return jac.reshape(x.shape + jac.shape[1:])


def sensitivity_fd(block: Block, F_V, F_T, out_pos: tuple[int, int, int], eps: float = 1e-4) -> np.ndarray:
    """d y[out_pos] / d input for both modalities, shape (2, d, H, W)."""
    jac = fd_jacobian(block, F_V, F_T, eps)
    c, r, k = out_pos
    return jac[..., c, r, k]


@dataclass
class ErfMap:
    values: np.ndarray  # (H, W), max-normalized
    center: tuple[int, int]
    normalization: float

    @property
    def raw(self) -> np.ndarray:
        return self.values * self.normalization

    def support_mask(self, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
        return self.raw > threshold

    def support(self, threshold: float = SUPPORT_THRESHOLD) -> int:
        return int(self.support_mask(threshold).sum())


def erf_map(
    block: Block,
    input_shape: tuple[int, int, int],
    center: tuple[int, int],
    eps: float = 1e-4,
    trials: int = 8,
    seed: int = 0,
    workers: int = 1,
) -> ErfMap:
    """Mean |FD sensitivity| of the output at ``center`` over random synthetic inputs.

    Averaged over trials and both modalities, summed over input and output channels.
    """
    d, H, W = input_shape
    row, col = center
    if not (0 <= row < H and 0 <= col < W):
        raise ValueError(f"center {center} outside {H}x{W} map")

    def one(trial: int) -> np.ndarray:
        F_V, F_T = synthetic_pair(d, H, W, seed=seed * 100003 + trial)
        jac = fd_jacobian(block, F_V, F_T, eps)[..., row, col]  # (2, d, H, W, d_out)
        return np.abs(jac).sum(axis=-1).mean(axis=0).sum(axis=0)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(one, range(trials)))
    else:
        per_trial = [one(t) for t in range(trials)]
    acc = np.zeros((H, W))
    for m in per_trial:  # fixed order keeps the sum independent of scheduling
        acc = acc + m
    acc /= trials
    peak = float(acc.max())
    values = acc / peak if peak > 0 else acc
    return ErfMap(values=values, center=(row, col), normalization=peak)


def make_conv3_ref(d: int, seed: int) -> Block:
    """Two-branch 3x3 convolution fusion (zero padding), summed across modalities."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(9 * d)
    kv = rng.uniform(-bound, bound, (d, d, 3, 3))
    kt = rng.uniform(-bound, bound, (d, d, 3, 3))

    def conv(F: np.ndarray, k: np.ndarray) -> np.ndarray:
        H, W = F.shape[-2:]
        pad = np.zeros(F.shape[:-2] + (H + 2, W + 2))
        pad[..., 1:-1, 1:-1] = F
        out = np.zeros(F.shape[:-3] + (k.shape[0], H, W))
        for dy in range(3):
            for dx in range(3):
                patch = pad[..., dy:dy + H, dx:dx + W]
                out += np.einsum("oi,...ihw->...ohw", k[:, :, dy, dx], patch)
        return out

    return lambda F_V, F_T: conv(F_V, kv) + conv(F_T, kt)


def make_block(selector: str, weights: FusionBlockWeights, seed: int = 0) -> Block:
    """Forward function for one of :data:`ERF_BLOCKS`."""
    order = weights.scan_order
    ff = weights.ff_final
    if selector == "ms2fusion":
        return lambda a, b: ms2fusion(a, b, weights).f_fused
    if selector == "ff_bidir":
        return lambda a, b: ff_ssm(a, b, ff, order)
    if selector == "ff_uni_12":
        return lambda a, b: ff_ssm(a, b, ff, order, mode="12")
    if selector == "ff_uni_21":
        return lambda a, b: ff_ssm(a, b, ff, order, mode="21")
    if selector == "conv3_ref":
        return make_conv3_ref(weights.d, seed)
    raise ValueError(f"unknown block {selector!r}; valid: {', '.join(ERF_BLOCKS)}")


def erf_to_pgm(erf: ErfMap, threshold: float = SUPPORT_THRESHOLD) -> str:
    """P2 graymap scaled so the max is 255; supported pixels never quantize to 0."""
    H, W = erf.values.shape
    levels = np.floor(erf.values * 255.0 + 0.5).astype(int)
    levels = np.where(erf.support_mask(threshold) & (levels == 0), 1, levels)
    lines = ["P2", "# ssfuse-erf", f"{W} {H}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    return "\n".join(lines) + "\n"


def erf_to_csv(erf: ErfMap) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in erf.values) + "\n"


def write_erf(erf: ErfMap, stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    pgm, csv = stem.with_suffix(".pgm"), stem.with_suffix(".csv")
    pgm.write_text(erf_to_pgm(erf), encoding="ascii")
    csv.write_text(erf_to_csv(erf), encoding="ascii")
    return pgm, csv


@dataclass
class EquivalenceReport:
    max_abs_err: float
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def check_scan_equivalence(seed: int, d: int, d_state: int, L: int, tol: float = 1e-9,
                           kernel_fault: float = 0.0) -> EquivalenceReport:
    """Compare the recurrence against the convolution-kernel form on a random LTI instance.

    Relative error is normwise: max |y_rec - y_ker| / max |y_ker|. ``kernel_fault``
    is added to one kernel coefficient for fault-injection tests.
    """
    rng = np.random.default_rng(seed)
    w = SsmWeights.init(d, d_state, rng)
    B = rng.standard_normal((d, d_state))
    C = rng.standard_normal((d, d_state))
    delta = rng.uniform(0.01, 1.0, d)
    x = rng.standard_normal((L, d))
    y_rec, _ = scan_recurrent(x, lti_params(B, C, delta, L), w)
    K = kernel_lti(w, B, C, delta, L)
    if kernel_fault:
        K[0, 0] += kernel_fault
    y_ker = apply_kernel(x, K, w.D)
    abs_err = float(np.max(np.abs(y_rec - y_ker)))
    scale = float(np.max(np.abs(y_ker)))
    rel_err = abs_err / scale if scale > 0 else abs_err
    return EquivalenceReport(max_abs_err=abs_err, max_rel_err=rel_err, tol=tol)


@dataclass
class ComplexityReport:
    params: int
    flops: int
    method_label: str


def _ssm_params(d: int, s: int) -> int:
    # A, D, W_B, W_C, W_delta and the three bias vectors
    return d * s + d + 2 * d * d * s + d * d + 2 * d * s + d


def _params(d: int, s: int, method: str) -> int:
    if method == "ms2fusion":
        return 9 * _ssm_params(d, s)  # 2 CP + 1 shared SP + 3 FF x 2 paths
    if method == "attention_ref":
        return 2 * 4 * (d * d + d)
    if method == "cnn_ref":
        return 2 * (9 * d * d + d) + (2 * d * d + d)
    raise ValueError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")


def _flops(d: int, s: int, L: int, method: str, directions: int) -> int:
    if method == "ms2fusion":
        proj = d * d * (2 * s + 1)       # B, C and delta projections per token
        scan = 5 * d * s + d             # discretize (2ds), recurrence (2ds), readout (ds + d)
        proj_tokens = 2 * L + L + 3 * 2 * (2 * L)
        scan_tokens = 2 * L + 2 * L + 3 * 2 * (2 * L)
        return directions * (proj_tokens * proj + scan_tokens * scan)
    if method == "attention_ref":
        return 2 * (4 * L * d * d + 2 * L * L * d)
    if method == "cnn_ref":
        return L * (2 * 9 * d * d + 2 * d * d)
    raise ValueError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")


def count_params(d: int, d_state: int = 1, method: str = "ms2fusion") -> ComplexityReport:
    """Learned scalars of one fusion block; independent of the spatial size.

    The report's ``flops`` field is the count at a 1x1 map.
    """
    return ComplexityReport(params=_params(d, d_state, method),
                            flops=_flops(d, d_state, 1, method, 1), method_label=method)


def count_flops(d: int, d_state: int, H: int, W: int, method: str = "ms2fusion",
                directions: int = 1) -> ComplexityReport:
    """Multiply-accumulates for one forward pass at L = H * W.

    ``directions`` is 2 for the rows-and-columns scan order (ms2fusion only).
    """
    if method != "ms2fusion":
        directions = 1
    return ComplexityReport(params=_params(d, d_state, method),
                            flops=_flops(d, d_state, H * W, method, directions),
                            method_label=method)
