"""Command-line front end: ``winoint <command> [options]``."""

from __future__ import annotations

import argparse
import sys
import time
from fractions import Fraction

import numpy as np

from winoint.conv import ConvSpec, compare, convolve, default_workers, direct_conv, winograd_conv
from winoint.scaling import (
    INT9_MAX,
    RAT2X2_MAX_MAGNITUDE,
    bitwidth_reduction,
    scale_table,
    signed_bits_after_scaling,
    static_error_sweep,
)
from winoint.tensor import QTensor, load_qtensor, save_qtensor
from winoint.transforms import (
    ALIASES,
    AlgorithmId,
    algorithm,
    efficiency_gain,
    reduction_ratio,
    worst_case_ranges,
)

ALGO_CHOICES = ["rat2x2", "rat4x4", "cplx4x4", "direct"]
SHORT = {v: k for k, v in ALIASES.items()}

# spatial filter width the bit-width efficiency comparison assumes
SPATIAL_BITS = 8
REPORTED_MEAN_NUMERICAL = 1.12
REPORTED_MEAN_PROPORTIONAL = 0.001


def _shape(text: str) -> tuple[int, int, int, int]:
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from None
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError("shape must be n,h,w,c with positive dims")
    return dims


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _algorithms(name: str | None, scaling: bool = False) -> list[AlgorithmId]:
    if name is None:
        if scaling:
            return [AlgorithmId.RAT_2x2_3x3, AlgorithmId.CPLX_4x4_3x3]
        return list(AlgorithmId)
    if name == "direct":
        raise SystemExit("error: this command needs a Winograd algorithm")
    return [algorithm(name).id]


def random_layer(rng: np.random.Generator, shape=None, out_channels=None):
    """Random uint8 activations/weights with random zero points."""
    if shape is None:
        shape = (1, int(rng.integers(4, 17)), int(rng.integers(4, 17)), int(rng.integers(1, 9)))
    k = out_channels or int(rng.integers(1, 9))
    ifm = QTensor(rng.integers(0, 256, shape), zero_point=int(rng.integers(0, 256)))
    filters = QTensor(rng.integers(0, 256, (k, 3, 3, shape[3])), zero_point=int(rng.integers(0, 256)))
    return ifm, filters


# --- commands -----------------------------------------------------------------


def cmd_verify(args) -> int:
    ok = True
    for aid in _algorithms(args.algorithm, args.scaling):
        rng = np.random.default_rng(args.seed)
        passed = 0
        worst = 0.0
        for _ in range(args.trials):
            ifm, filters = random_layer(rng, args.shape, args.out_channels)
            padding = int(rng.integers(0, 2)) if args.padding is None else args.padding
            ref = direct_conv(ifm, filters, ConvSpec(padding=padding))
            spec = ConvSpec(aid, padding=padding, scaling_enabled=args.scaling)
            res = winograd_conv(ifm, filters, spec, workers=args.workers)
            d = compare(res, ref)
            if args.scaling:
                worst = max(worst, d.max_rel)
                passed += d.mean_rel <= 0.01 and d.max_rel <= 0.05
            else:
                passed += d.identical
        label = "within bound" if args.scaling else "exact"
        line = f"{SHORT[aid]}: {passed}/{args.trials} {label} (seed {args.seed})"
        if args.scaling:
            line += f", worst max_rel {worst:.5f}"
        print(line)
        ok &= passed == args.trials
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_count(args) -> int:
    algos = _algorithms(args.algorithm)
    print("algorithm,muls_per_tile,reduction,reduction_exact")
    for aid in algos:
        a = algorithm(aid)
        red = reduction_ratio(a)
        print(f"{SHORT[aid]},{a.muls_per_tile},{float(red):.2f},{red.numerator}/{red.denominator}")
    if args.shape:
        n, h, w, c = args.shape
        k = args.out_channels or 1
        p = args.padding or 0
        out_h, out_w = h + 2 * p - 2, w + 2 * p - 2
        direct = n * out_h * out_w * k * 9 * c
        print(f"layer {n}x{h}x{w}x{c} -> {k} channels, padding {p}")
        print(f"direct,{direct}")
        for aid in algos:
            a = algorithm(aid)
            tiles = n * (-(-out_h // a.m)) * (-(-out_w // a.m))
            muls = tiles * c * k * a.muls_per_tile
            print(f"{SHORT[aid]},{muls},{direct / muls:.2f}")
    if args.algorithm is None:
        cplx = reduction_ratio(algorithm("cplx4x4"))
        bits = {aid: SPATIAL_BITS + worst_case_ranges(algorithm(aid)).widening_bits for aid in AlgorithmId}
        for other in (AlgorithmId.RAT_4x4_3x3, AlgorithmId.RAT_2x2_3x3):
            for label, red in (("exact", cplx), ("2dp", Fraction(f"{float(cplx):.2f}"))):
                gain = efficiency_gain(
                    red, bits[AlgorithmId.CPLX_4x4_3x3],
                    reduction_ratio(algorithm(other)), bits[other],
                )
                print(f"efficiency_gain cplx4x4 vs {SHORT[other]} ({label} ratio): {gain:.2f}%")
    return 0


def _print_matrix(name: str, mat: np.ndarray) -> None:
    print(name)
    width = max(len(str(v)) for v in mat.ravel())
    for row in mat:
        print("  " + " ".join(str(v).rjust(width) for v in row))


def cmd_ranges(args) -> int:
    for aid in _algorithms(args.algorithm):
        a = algorithm(aid)
        rep = worst_case_ranges(a, args.weight_bound)
        print(f"{SHORT[aid]} (weight bound {args.weight_bound})")
        if a.is_complex:
            print("  magnitudes are max(|re|, |im|) bounds per element")
        _print_matrix("magnitude", rep.magnitude)
        _print_matrix("bits", rep.bits)
        print(f"max_magnitude {rep.max_magnitude}")
        print(f"max_bits {rep.max_bits}")
        print(f"widening_bits {rep.widening_bits} (ceil(log2({a.filter_scale}^2)))")
        print(f"spatial {SPATIAL_BITS}-bit + widening = {SPATIAL_BITS + rep.widening_bits} bits")
        print()
    return 0


def cmd_scale_table(args) -> int:
    print("n,p,value,out_of_range,duplicate")
    for e in scale_table():
        print(f"{e.n},{e.p},{e.text},{int(e.out_of_range)},{int(e.duplicate)}")
    before = worst_case_ranges(algorithm("rat2x2")).max_bits
    after = signed_bits_after_scaling()
    red = bitwidth_reduction(before, after)
    print(f"# bit width {before} -> {after}: reduction {float(red) * 100:.2f}%")
    return 0


def cmd_static_error(args) -> int:
    lo, hi = args.range
    report = static_error_sweep(range(lo, hi + 1))
    if args.out:
        with open(args.out, "w", newline="") as f:
            report.write_csv(f)
        print(f"wrote {len(report.records)} rows to {args.out}")
    else:
        report.write_csv(sys.stdout)
    print(f"# population {lo}..{hi} ({len(report.records)} weights)")
    print(f"# mean numerical error {report.mean_numerical:.5f} (reported: {REPORTED_MEAN_NUMERICAL})")
    print(
        f"# mean proportional error {report.mean_proportional * 100:.5f}% "
        f"(reported: {REPORTED_MEAN_PROPORTIONAL * 100:.1f}% over an unspecified weight population)"
    )
    return 0


def cmd_conv(args) -> int:
    if not (args.input and args.filters and args.out):
        raise SystemExit("error: conv needs --in, --filters and --out")
    ifm = load_qtensor(args.input)
    filters = load_qtensor(args.filters)
    spec = ConvSpec(args.algorithm or "direct", padding=args.padding or 0, scaling_enabled=args.scaling)
    res = convolve(ifm, filters, spec, **({} if spec.is_direct else {"workers": args.workers}))
    ofm = res.ofm.data
    save_qtensor(args.out, QTensor(ofm, dtype="i32", zero_point=0, scale=ifm.scale * filters.scale))
    s = res.stats
    print(f"ofm {ofm.shape} written to {args.out}")
    print(f"general_muls {s.general_muls} direct_muls {s.direct_muls} "
          f"reduction {float(s.reduction_ratio):.2f} tiles {s.tiles}")
    return 0


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    shape = args.shape or (1, 56, 56, 32)
    ifm, filters = random_layer(rng, shape, args.out_channels or 32)
    padding = 1 if args.padding is None else args.padding
    names = ["direct"] + [SHORT[a] for a in AlgorithmId] if args.algorithm is None else [args.algorithm]
    print(f"layer {'x'.join(map(str, shape))} -> {filters.shape[0]} channels, padding {padding}")
    print("algorithm,seconds,muls,muls_per_sec")
    for name in names:
        spec = ConvSpec(name, padding=padding, scaling_enabled=args.scaling and name != "direct")
        kw = {} if spec.is_direct else {"workers": args.workers}
        best = float("inf")
        for _ in range(args.trials):
            t0 = time.perf_counter()
            res = convolve(ifm, filters, spec, **kw)
            best = min(best, time.perf_counter() - t0)
        muls = res.stats.general_muls
        print(f"{name},{best:.4f},{muls},{muls / best:.3e}")
    return 0


COMMANDS = {
    "verify": cmd_verify,
    "count": cmd_count,
    "ranges": cmd_ranges,
    "scale-table": cmd_scale_table,
    "static-error": cmd_static_error,
    "conv": cmd_conv,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="winoint", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials_default=1):
        p.add_argument("--algorithm", choices=ALGO_CHOICES)
        p.add_argument("--scaling", type=_on_off, default=False, metavar="{on,off}")
        p.add_argument("--trials", type=int, default=trials_default)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--shape", type=_shape)
        p.add_argument("--out-channels", type=int)
        p.add_argument("--padding", type=int)
        p.add_argument("--workers", type=int, default=default_workers(), help=argparse.SUPPRESS)
        return p

    common(sub.add_parser("verify", help="randomized equivalence against direct convolution"), 100)
    common(sub.add_parser("count", help="general multiplications and reduction ratios"))
    p = sub.add_parser("ranges", help="worst-case Winograd-domain filter ranges")
    p.add_argument("--algorithm", choices=ALGO_CHOICES[:3])
    p.add_argument("--weight-bound", type=int, default=INT9_MAX)
    sub.add_parser("scale-table", help="downscaling factor table")
    p = sub.add_parser("static-error", help="down/up scaling error sweep (CSV)")
    p.add_argument("--range", type=int, nargs=2, default=(256, RAT2X2_MAX_MAGNITUDE), metavar=("LO", "HI"))
    p.add_argument("--out")
    p = common(sub.add_parser("conv", help="convolve QTF tensor files"))
    p.add_argument("--in", dest="input")
    p.add_argument("--filters")
    p.add_argument("--out")
    common(sub.add_parser("bench", help="time direct vs Winograd on a synthetic layer"), 3)
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "algorithm", None) == "direct" and args.command in ("verify", "ranges"):
        print("error: --algorithm direct is not valid here", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
