"""Command-line front end.

Exit status: 0 success, 1 validation or format error, 2 verification
failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cost_model, layout, packed_exec, pipeline_sim, quant_core, tensor_io
from .errors import W4A8Error
from .gemm_ref import GemmShape, TileConfig, gemm_w4a8, quantize_activations_per_token
from .tensor_io import DenseTensor, DType, Layout

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3

LAYOUTS = {"plain": Layout.PLAIN_ROW_MAJOR, "dual-mma": Layout.DUAL_MMA_PACKED}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _read_f32(path) -> np.ndarray:
    t = tensor_io.load_tensor(path)
    if t.dtype not in (DType.F32, DType.F16):
        raise tensor_io.ValidationError(f"{path}: expected an F32 or F16 tensor, got {t.dtype.name}")
    arr = t.to_array().astype(np.float32)
    if arr.ndim != 2:
        raise tensor_io.ValidationError(f"{path}: expected a 2-D tensor, got dims {t.dims}")
    return arr


def cmd_quantize(args):
    W = _read_f32(args.input)
    b = quant_core.quantize_weights(W, args.group_size, LAYOUTS[args.layout])
    tensor_io.save_bundle(args.out, b)
    return EXIT_OK


def cmd_dequantize(args):
    b = tensor_io.load_bundle(args.weights)
    w = quant_core.dequantize_bundle(b)
    tensor_io.save_tensor(args.out, DenseTensor.from_array(w, DType.I8))
    return EXIT_OK


def _relayout(target):
    def run(args):
        b = tensor_io.load_bundle(args.weights)
        tensor_io.save_bundle(args.out, b.with_layout(target))
        return EXIT_OK
    return run


def cmd_gemm(args):
    act = quantize_activations_per_token(_read_f32(args.activations))
    b = tensor_io.load_bundle(args.weights)
    y = gemm_w4a8(act, b, TileConfig.parse(args.tile), args.engine, workers=args.workers)
    tensor_io.save_tensor(args.out, DenseTensor.from_array(y, DType.F32))
    return EXIT_OK


def _profile(spec: str) -> cost_model.HardwareProfile:
    if Path(spec).is_file():
        return cost_model.load_profile(spec)
    return cost_model.builtin_profile(spec)


def cmd_cost_model(args):
    p = _profile(args.profile)
    try:
        n, k = (int(v) for v in args.shape.lower().split("x"))
    except ValueError:
        raise tensor_io.ValidationError(f"shape must look like NxK, got {args.shape!r}") from None
    batches = cost_model.parse_range(args.batch)
    q = cost_model.CostQuery(GemmShape(batches[0], n, k), TileConfig.parse(args.tile),
                             args.wbits, args.abits, args.alpha)
    text = cost_model.sweep_to_csv(cost_model.sweep(q, batches, p))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args):
    c = pipeline_sim.SimConfig.parse(Path(args.config).read_text())
    reports = {}
    if args.pipeline in ("excp", "both"):
        reports["excp"] = pipeline_sim.simulate_excp(c)
    if args.pipeline in ("imfp", "both"):
        reports["imfp"] = pipeline_sim.simulate_imfp(c)
    if args.pipeline == "both":
        out = {"comparison": pipeline_sim.compare(c),
               "reports": {k: r.as_dict() for k, r in reports.items()}}
    else:
        out = next(iter(reports.values())).as_dict()
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    if args.trace:
        rows = ["time,unit,wg,event"]
        for name, r in reports.items():
            prefix = f"{name}:" if len(reports) > 1 else ""
            rows += [f"{t!r},{u},{prefix}{wg},{ev}" for t, u, wg, ev in r.trace]
        Path(args.trace).write_text("\n".join(rows) + "\n")
    return EXIT_OK


def run_verification(fragments: int = 4096, tiles: int = 32, seed: int = 0) -> dict:
    """Overflow proof, lane equivalence, packed accounting and layout suites."""
    rng = np.random.default_rng(seed)
    overflow = quant_core.verify_overflow_free(exhaustive=True)

    q, s, a = np.meshgrid(np.arange(16), np.arange(1, 17), np.arange(9, 248), indexing="ij")
    lane = quant_core.dequantize_lane(q, s, a, checked=False)
    wide = quant_core.dequantize_scalar(q, s, a - 128)
    lane_mismatch = int((lane != (wide & 0xFF)).sum())

    rq, rs, ra, _, _ = quant_core.reachable_triples()
    pick = rng.integers(0, rq.size, size=(fragments, 4))
    codes = np.minimum(rng.integers(0, 16, size=(fragments, 4, 8)), rq[pick][..., None])
    words = packed_exec.pack_interleaved(codes.reshape(fragments, 32))
    counter = packed_exec.InstructionCounter()
    out, _ = packed_exec.dequant_packed(words, rs[pick], ra[pick], counter)
    got = packed_exec.words_to_bytes(out).reshape(fragments, 4, 8)
    want = quant_core.dequantize_scalar(codes, rs[pick][..., None], ra[pick][..., None] - 128) & 0xFF
    packed_mismatch = int((got != want).sum())
    per8 = counter.total / (fragments * 32 / 8)

    bijection_failures = 0
    for _ in range(tiles):
        k_t = int(rng.choice([64, 128, 256]))
        tile = rng.integers(0, 16, size=(64, k_t), dtype=np.uint8)
        if not np.array_equal(layout.unpack_dual_mma(layout.pack_dual_mma(tile)), tile):
            bijection_failures += 1
    banks = layout.check_bank_conflicts(layout.pack_dual_mma(np.zeros((64, 256), np.uint8)))

    ok = (overflow.ok and lane_mismatch == 0 and packed_mismatch == 0 and per8 == 7
          and bijection_failures == 0 and banks.conflict_free)
    return {
        "ok": ok,
        "overflow": overflow.as_dict(),
        "lane_equivalence": {"points": int(q.size), "mismatches": lane_mismatch},
        "packed_dequant": {"fragments": fragments, "mismatches": packed_mismatch,
                           "instructions": counter.as_dict(), "instructions_per_8_elements": per8},
        "layout": {"tiles": tiles, "bijection_failures": bijection_failures,
                   "bank_conflicts": banks.conflicts, "phases_checked": len(banks.phases)},
    }


def cmd_verify(args):
    report = run_verification(args.fragments, args.tiles, args.seed)
    json.dump(report, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK if report["ok"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="w4a8lab", description="W4A8 quantization, layout, GEMM and pipeline toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("quantize", help="F32 LQTN weights -> LQWB bundle")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--group-size", type=int, default=64)
    s.add_argument("--layout", choices=sorted(LAYOUTS), default="plain")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("dequantize", help="LQWB bundle -> I8 LQTN tensor")
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dequantize)

    for name, target in (("pack-layout", Layout.DUAL_MMA_PACKED), ("unpack-layout", Layout.PLAIN_ROW_MAJOR)):
        s = sub.add_parser(name, help=f"rewrite a bundle in the {target.name.lower()} layout")
        s.add_argument("--weights", required=True)
        s.add_argument("--out", required=True)
        s.set_defaults(func=_relayout(target))

    s = sub.add_parser("gemm", help="W4A8 GEMM on F32 activations")
    s.add_argument("--activations", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--engine", choices=["scalar", "packed"], default="scalar")
    s.add_argument("--tile", default="64x64x64")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_gemm)

    s = sub.add_parser("cost-model", help="analytic time sweep over batch sizes (CSV)")
    s.add_argument("--profile", required=True, help="profile file or built-in name")
    s.add_argument("--shape", required=True, help="NxK")
    s.add_argument("--tile", required=True, help="MxNxK")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--wbits", type=int, choices=[4, 8, 16], default=4)
    s.add_argument("--abits", type=int, choices=[8, 16], default=8)
    s.add_argument("--batch", required=True, help="lo..hi[:step]")
    s.add_argument("--out")
    s.set_defaults(func=cmd_cost_model)

    s = sub.add_parser("simulate", help="ExCP / ImFP pipeline simulation (JSON)")
    s.add_argument("--pipeline", choices=["excp", "imfp", "both"], default="both")
    s.add_argument("--config", required=True)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run the built-in verification suites (JSON)")
    s.add_argument("--fragments", type=int, default=4096)
    s.add_argument("--tiles", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"w4a8lab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (W4A8Error, ValueError) as exc:
        print(f"w4a8lab: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
