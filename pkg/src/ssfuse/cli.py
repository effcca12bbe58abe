"""``ssfuse`` command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 I/O or parse failure,
3 shape mismatch, 4 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import synthetic_pair
from .fusion import (cp_ssm, ff_ssm, init_weights, load_weights, ms2fusion,
                     save_weights, sp_ssm)
from .scan import ScanOrder, fold, unfold
from .ssm import SsmWeights, discretize, lti_params, scan_recurrent
from .tensor import DimensionError, Tensor, read_sst1, write_sst1
from .verify import (ERF_BLOCKS, METHODS, check_scan_equivalence, count_flops, count_params,
                     erf_map, fd_jacobian, make_block, write_erf)

EXIT_OK, EXIT_VERIFY, EXIT_IO, EXIT_SHAPE, EXIT_USAGE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    d: int = 2
    d_state: int = 1
    H: int = 8
    W: int = 8
    scan_order: ScanOrder = ScanOrder.ROWS
    exchange_c: bool = True
    residual: bool = False
    seed: int = 0
    eps: float = 1e-4
    tol: float = 1e-9
    trials: int = 8
    block: str = "ms2fusion"
    center_row: int | None = None
    center_col: int | None = None
    input_v: str | None = None
    input_t: str | None = None
    weights: str | None = None
    out: str = "."

    def validate(self) -> "RunConfig":
        for name in ("d", "d_state", "H", "W", "trials"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if not (self.eps > 0 and self.tol >= 0):
            raise UsageError("eps must be > 0 and tol >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        return self

    @property
    def center(self) -> tuple[int, int]:
        row = self.H // 2 if self.center_row is None else self.center_row
        col = self.W // 2 if self.center_col is None else self.center_col
        return row, col


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str) -> RunConfig:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    kinds = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        kind = str(kinds[key])
        try:
            if key == "scan_order":
                values[key] = ScanOrder.parse(val)
            elif kind == "bool":
                values[key] = _parse_bool(val)
            elif kind == "float":
                values[key] = float(val)
            elif kind.startswith("int"):
                values[key] = int(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise UsageError(f"config line {lineno}: {exc}") from None
    return RunConfig(**values).validate()


def _threads() -> int:
    raw = os.environ.get("SSFUSE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SSFUSE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("SSFUSE_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def _weights(cfg: RunConfig):
    if cfg.weights:
        w = load_weights(cfg.weights, cfg.exchange_c, cfg.scan_order, cfg.residual)
        if (w.d, w.d_state) != (cfg.d, cfg.d_state):
            raise DimensionError(
                f"weights are d={w.d}, d_state={w.d_state}; config says d={cfg.d}, d_state={cfg.d_state}")
        return w
    return init_weights(cfg.d, cfg.d_state, cfg.seed, cfg.exchange_c, cfg.scan_order, cfg.residual)


def cmd_gen(cfg: RunConfig, args) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    F_V, F_T = synthetic_pair(cfg.d, cfg.H, cfg.W, cfg.seed)
    write_sst1(out / "f_v.sst", Tensor(F_V))
    write_sst1(out / "f_t.sst", Tensor(F_T))
    print(f"wrote {out / 'f_v.sst'} and {out / 'f_t.sst'} ({cfg.d}x{cfg.H}x{cfg.W})")
    return EXIT_OK


def cmd_fuse(cfg: RunConfig, args) -> int:
    if not (cfg.input_v and cfg.input_t):
        raise UsageError("fuse needs input_v and input_t (config keys or --input-v/--input-t)")
    F_V = read_sst1(cfg.input_v).numpy()
    F_T = read_sst1(cfg.input_t).numpy()
    expected = (cfg.d, cfg.H, cfg.W)
    for name, F in (("input_v", F_V), ("input_t", F_T)):
        if F.shape != expected:
            raise DimensionError(f"{name} has shape {F.shape}, config expects {expected}")
    w = _weights(cfg)
    result = ms2fusion(F_V, F_T, w, record=args.dump_intermediates)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sst1(out / "fused.sst", Tensor(result.f_fused))
    for name, arr in result.intermediates.items():
        write_sst1(out / f"{name}.sst", Tensor(arr))
    if args.save_weights:
        save_weights(args.save_weights, w)
    print(f"wrote {out / 'fused.sst'} ({'x'.join(map(str, result.f_fused.shape))})")
    return EXIT_OK


def cmd_erf(cfg: RunConfig, args) -> int:
    if cfg.block not in ERF_BLOCKS:
        raise UsageError(f"unknown block {cfg.block!r}; valid blocks: {', '.join(ERF_BLOCKS)}")
    w = _weights(cfg)
    block = make_block(cfg.block, w, cfg.seed)
    try:
        erf = erf_map(block, (cfg.d, cfg.H, cfg.W), cfg.center, cfg.eps, cfg.trials,
                      cfg.seed, workers=_threads())
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    pgm, csv = write_erf(erf, Path(cfg.out) / f"erf_{cfg.block}")
    print(f"block={cfg.block} center={erf.center} support={erf.support()}/{cfg.H * cfg.W} "
          f"normalization={erf.normalization:.6e}")
    print(f"wrote {pgm} and {csv}")
    return EXIT_OK


def _verify_checks(cfg: RunConfig):
    """Yield (name, passed, detail) for each property check."""
    rng = np.random.default_rng(cfg.seed)
    d, s, H, W = cfg.d, cfg.d_state, cfg.H, cfg.W
    L = H * W

    rep = check_scan_equivalence(cfg.seed, d, s, L, cfg.tol)
    yield "scan_kernel_equivalence", rep.passed, f"max_rel_err={rep.max_rel_err:.3e} (tol {cfg.tol:g})"

    A = -(1.0 + rng.random((d, s)))
    B = rng.standard_normal((d, s))
    worst = 0.0
    ok = True
    for step in (1e-3, 1e-5):
        delta = np.full(d, step)
        A_bar, B_bar = discretize(A, delta, B)
        dA = delta[:, None] * A
        ok &= bool(np.all(np.abs(A_bar - (1.0 + dA)) <= 2.0 * dA ** 2))
        ok &= bool(np.all(np.abs(B_bar - delta[:, None] * B) <= step * np.abs(dA * B)))
        worst = max(worst, float(np.max(np.abs(A_bar - (1.0 + dA)) / dA ** 2)))
    yield "zoh_small_step_limit", ok, f"max |A_bar-(1+dA)|/(dA)^2 = {worst:.3f} (bound 2)"

    delta = np.ones(d)
    _, B_bar = discretize(np.full((d, s), -1e-12), delta, B)
    err = float(np.max(np.abs(B_bar - B)))
    yield "zoh_singular_branch", err <= 1e-9, f"|B_bar - delta*B| = {err:.3e}"

    w = SsmWeights.init(d, s, rng)
    Lc = min(L, 16)
    params = lti_params(rng.standard_normal((d, s)), rng.standard_normal((d, s)),
                        rng.uniform(0.1, 1.0, d), Lc)
    x = rng.standard_normal((1, Lc, d))
    jac = fd_jacobian(lambda a, b: scan_recurrent(a[..., 0, :, :], params, w)[0],
                      x, np.zeros_like(x), cfg.eps)[0, 0]  # (Lc, d, Lc, d): input k,j -> output i,c
    future = max((float(np.max(np.abs(jac[k, :, i, :]))) for k in range(Lc) for i in range(k)),
                 default=0.0)
    yield "causality", future <= 1e-12, f"max |dy_i/dx_k| for k > i = {future:.3e}"

    x1, x2 = rng.standard_normal((2, L, d))
    sp_frozen = lti_params(rng.standard_normal((d, s)), rng.standard_normal((d, s)),
                           rng.uniform(0.1, 1.0, d), L)
    lhs = scan_recurrent(2.0 * x1 - 0.5 * x2, sp_frozen, w)[0]
    rhs = 2.0 * scan_recurrent(x1, sp_frozen, w)[0] - 0.5 * scan_recurrent(x2, sp_frozen, w)[0]
    lin = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    yield "linearity_frozen_params", lin <= max(cfg.tol, 1e-10), f"rel_err={lin:.3e}"

    F = rng.standard_normal((d, H, W))
    rt = all(np.array_equal(fold(unfold(F, o), d, H, W, o), F) for o in ScanOrder)
    yield "unfold_fold_round_trip", rt, "rows, columns, rows_and_columns"

    fw = init_weights(d, s, cfg.seed, cfg.exchange_c, cfg.scan_order)
    a = cp_ssm(F, F, fw.cp_v, fw.cp_v, True, cfg.scan_order)
    b = cp_ssm(F, F, fw.cp_v, fw.cp_v, False, cfg.scan_order)
    yield "cp_exchange_symmetric_noop", all(np.array_equal(p, q) for p, q in zip(a, b)), "exact"

    G = rng.standard_normal((d, H, W))
    sv, st = sp_ssm(F, G, fw.sp, cfg.scan_order)
    tv, tt = sp_ssm(G, F, fw.sp, cfg.scan_order)
    yield "sp_swap_equivariance", np.array_equal(sv, tt) and np.array_equal(st, tv), "exact"

    y = ff_ssm(F, G, fw.ff_final, cfg.scan_order)
    y_sw = ff_ssm(G, F, fw.ff_final.swapped(), cfg.scan_order)
    yield "ff_relabel_symmetry", np.array_equal(y, y_sw), "exact"

    fused = ms2fusion(F, G, fw).f_fused
    zero = ms2fusion(np.zeros_like(F), np.zeros_like(F), fw).f_fused
    ok = fused.shape == F.shape and not np.any(zero)
    yield "ms2fusion_shape_and_zero", ok, f"shape {fused.shape}"


def cmd_verify(cfg: RunConfig, args) -> int:
    failed = 0
    total = 0
    for name, passed, detail in _verify_checks(cfg):
        total += 1
        failed += not passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<28} {detail}")
    print(f"{total - failed}/{total} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_complexity(cfg: RunConfig, args) -> int:
    directions = len(cfg.scan_order.directions())
    print(f"d={cfg.d} d_state={cfg.d_state} H={cfg.H} W={cfg.W} L={cfg.H * cfg.W}")
    print(f"{'method':<14}{'params':>14}{'MACs':>18}")
    reports = {}
    for method in METHODS:
        rep = count_flops(cfg.d, cfg.d_state, cfg.H, cfg.W, method, directions)
        reports[method] = rep
        assert rep.params == count_params(cfg.d, cfg.d_state, method).params
        print(f"{method:<14}{rep.params:>14}{rep.flops:>18}")
    ratio = reports["attention_ref"].flops / reports["ms2fusion"].flops
    print(f"attention_ref/ms2fusion MAC ratio: {ratio:.4f}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "fuse": cmd_fuse, "erf": cmd_erf, "verify": cmd_verify,
            "complexity": cmd_complexity}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssfuse", description="Multispectral state-space fusion toolkit.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key=value config file (defaults used when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--dump-intermediates", action="store_true",
                   help="fuse: also write CP-SSM, SP-SSM and enhancement outputs")
    p.add_argument("--input-v")
    p.add_argument("--input-t")
    p.add_argument("--weights", help="weight manifest to load instead of seeded init")
    p.add_argument("--save-weights", metavar="DIR", help="fuse: write the weights used as a manifest")
    p.add_argument("--block", help=f"erf block: {', '.join(ERF_BLOCKS)}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                print(f"ssfuse: cannot read config: {exc}", file=sys.stderr)
                return EXIT_IO
            cfg = parse_config(text)
        else:
            cfg = RunConfig()
        overrides = {k: getattr(args, k) for k in ("seed", "out", "input_v", "input_t",
                                                   "weights", "block")
                     if getattr(args, k) is not None}
        cfg = dataclasses.replace(cfg, **overrides).validate()
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"ssfuse: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DimensionError as exc:
        print(f"ssfuse: shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (OSError, ValueError) as exc:
        print(f"ssfuse: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
