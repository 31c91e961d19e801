"""``intvit`` command line: block statistics, oracle comparison and head runs.

Exit codes: 0 success, 1 tolerance failure, 2 usage or file-format error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import qtfile
from .attention import ExpMode, attention_weights
from .config import PRESETS, RunConfig
from .exceptions import QTFormatError
from .head import PRNG_NAME, head_trace, random_heads, reference_params
from .linear import equivalence_gap
from .quant import QuantParams, QuantTensor, dequantize
from .reference import ref_attention_weights, ref_head
from .systolic import analytic_report, load_cost_model, simulate_head

log = logging.getLogger("intvit")

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_USAGE = 2
EXP_CHOICES = {"exact": ExpMode.EXACT, "shift": ExpMode.SHIFT}


class UsageError(Exception):
    pass


def _add_geometry(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help=f"geometry preset ({', '.join(sorted(PRESETS))})")
    p.add_argument("--tokens", "-N", type=int, default=8, help="token count N")
    p.add_argument("--dim", "-I", type=int, default=16, help="input embedding width I")
    p.add_argument("--head-dim", "-O", type=int, default=8, help="per-head width O")
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--nbit", type=int, choices=(2, 3), default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exp", choices=sorted(EXP_CHOICES), default="shift")


def _add_output(p: argparse.ArgumentParser, default_report: str = "json") -> None:
    p.add_argument("--report", choices=("json", "csv"), default=default_report)
    p.add_argument("--out", type=Path, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intvit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="per-block PE / MAC / cycle report")
    _add_geometry(p)
    p.add_argument("--cost-model", help="cost table (falls back to $INTVIT_COST_MODEL)")
    p.add_argument("--simulate", action="store_true", help="move seeded data through the simulator")
    _add_output(p)

    p = sub.add_parser("compare", help="integer path vs float oracle")
    _add_geometry(p)
    p.add_argument("--min-agree", type=float, default=None,
                   help="minimum output-code agreement (default 1.0 for --exp exact, 0 otherwise)")
    p.add_argument("--tol", type=float, default=1e-9, help="max linear-layer gap vs the mean-scale oracle")
    _add_output(p)

    p = sub.add_parser("run", help="run heads and write output codes plus a manifest")
    _add_geometry(p)
    p.add_argument("--input", type=Path, help=".qt code tensor (tokens x channels); random if omitted")
    p.add_argument("--simulate", action="store_true", help="use the systolic simulator")
    p.add_argument("--cost-model", help="cost table (falls back to $INTVIT_COST_MODEL)")
    p.add_argument("--out", type=Path, default=Path("out.qt"))
    return parser


def _config(args) -> RunConfig:
    try:
        return RunConfig(
            n_tokens=args.tokens,
            d_in=args.dim,
            d_head=args.head_dim,
            heads=args.heads,
            nbit=args.nbit,
            seed=args.seed,
            exp_mode=EXP_CHOICES[args.exp],
            preset=args.preset,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _costs(path, nbit):
    try:
        return load_cost_model(path, nbit)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cost model: {exc}") from None


def _emit(payload: dict, rows: list[dict], fmt: str, out: Path | None) -> None:
    if fmt == "json":
        text = json.dumps(payload, indent=2) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        print(f"wrote {out}")


def _table(report) -> str:
    head = f"{'block':<22}{'#PE':>10}{'#MAC':>12}{'MAC (M)':>9}{'cycles':>8}{'energy':>14}"
    lines = [head, "-" * len(head)]
    for r in report.records():
        lines.append(
            f"{r['block']:<22}{r['pe']:>10,}{r['mac']:>12,}{r['mac'] / 1e6:>9.2f}{r['cycles']:>8}{r['energy_proxy']:>14.4g}"
        )
    return "\n".join(lines)


def cmd_stats(args) -> int:
    cfg = _config(args)
    costs = _costs(args.cost_model, cfg.nbit)
    if args.simulate:
        inst = random_heads(cfg.seed, 1, cfg.n_tokens, cfg.d_in, cfg.d_head, cfg.nbit, cfg.exp_mode, scales=cfg.scales)[0]
        _, report = simulate_head(inst.Xq, inst.compile(), costs)
    else:
        report = analytic_report(cfg.n_tokens, cfg.d_in, cfg.d_head, cfg.nbit, costs)
    print(_table(report))
    payload = {
        "config": cfg.to_dict(),
        "energy_unit": "proxy",
        "blocks": report.records(),
        "totals": {"mac": report.total_macs, "cycles": report.total_cycles},
    }
    _emit(payload, report.records(), args.report, args.out)
    return EXIT_OK


def compare_head(inst) -> dict:
    """Gaps and agreement for one random head instance."""
    head = inst.compile()
    gaps = [
        equivalence_gap(inst.Xq, w, inst.delta_x, w.params.scale, b)
        for w, b in ((inst.weights.w_q, inst.weights.b_q),
                     (inst.weights.w_k, inst.weights.b_k),
                     (inst.weights.w_v, inst.weights.b_v))
    ]
    trace = head_trace(inst.Xq, head)
    mean_dx = np.full(inst.Xq.shape[1], head.plan_q.input_scale)
    ref = ref_head(inst.Xq, mean_dx, reference_params(inst.weights, inst.cfg))
    keep = ~ref.excluded
    agree = int(np.count_nonzero((trace.out.codes == ref.out_codes) & keep))
    compared = int(np.count_nonzero(keep))
    exact_w = ref_attention_weights(dequantize(trace.q), dequantize(trace.k), inst.cfg.s)
    kernel_w = attention_weights(trace.q, trace.k, inst.cfg)
    return {
        "mean_scale_gap": max(g.mean_scale_gap for g in gaps),
        "true_scale_gap": max(g.true_scale_gap for g in gaps),
        "agree": agree,
        "compared": compared,
        "excluded": int(ref.excluded.sum()),
        "max_softmax_dev": float(np.max(np.abs(kernel_w - exact_w))),
    }


def cmd_compare(args) -> int:
    cfg = _config(args)
    min_agree = args.min_agree
    if min_agree is None:
        min_agree = 1.0 if cfg.exp_mode is ExpMode.EXACT else 0.0
    heads = random_heads(cfg.seed, cfg.heads, cfg.n_tokens, cfg.d_in, cfg.d_head, cfg.nbit, cfg.exp_mode,
                         scales=cfg.scales)
    rows = [dict(head=h, **compare_head(inst)) for h, inst in enumerate(heads)]
    gap = max(r["mean_scale_gap"] for r in rows)
    compared = sum(r["compared"] for r in rows)
    rate = sum(r["agree"] for r in rows) / compared if compared else 1.0
    ok = gap <= args.tol and rate >= min_agree
    print(f"linear gap vs mean-scale oracle: {gap:.3e} (tol {args.tol:g})")
    print(f"linear gap vs per-channel oracle: {max(r['true_scale_gap'] for r in rows):.3e}")
    print(f"output code agreement: {rate:.6f} over {compared} codes "
          f"({sum(r['excluded'] for r in rows)} excluded near ties, min {min_agree:g})")
    print(f"max softmax weight deviation: {max(r['max_softmax_dev'] for r in rows):.4f}")
    print("PASS" if ok else "FAIL")
    if args.out is not None or args.report == "csv":
        payload = {"config": cfg.to_dict(), "tol": args.tol, "min_agree": min_agree,
                   "mean_scale_gap": gap, "agreement": rate, "pass": ok, "heads": rows}
        _emit(payload, rows, args.report, args.out)
    return EXIT_OK if ok else EXIT_TOLERANCE


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_run(args) -> int:
    cfg = _config(args)
    Xq = None
    if args.input is not None:
        try:
            Xq = qtfile.load(args.input)
        except QTFormatError as exc:
            raise UsageError(f"{args.input}: {exc}") from None
        except OSError as exc:
            raise UsageError(str(exc)) from None
        if not isinstance(Xq, QuantTensor):
            raise UsageError(f"{args.input}: expected a code tensor (kind 0), found float data")
        if Xq.params.nbit != cfg.nbit:
            raise UsageError(f"{args.input}: holds {Xq.params.nbit}-bit codes, --nbit is {cfg.nbit}")
        cfg = replace(cfg, n_tokens=Xq.shape[0], d_in=Xq.shape[1], preset=None)
    costs = _costs(args.cost_model, cfg.nbit) if args.simulate else None
    heads = random_heads(cfg.seed, cfg.heads, cfg.n_tokens, cfg.d_in, cfg.d_head, cfg.nbit, cfg.exp_mode, Xq,
                         cfg.scales)
    Xq = heads[0].Xq
    outputs, steps, cycles = [], [], []
    for inst in heads:
        compiled = inst.compile()
        if args.simulate:
            trace, report = simulate_head(Xq, compiled, costs)
            out = trace.out
        else:
            out = head_trace(Xq, compiled).out
            report = analytic_report(Xq.shape[0], Xq.shape[1], cfg.d_head, cfg.nbit)
        log.debug("head %d: %d cycles", len(outputs), report.total_cycles)
        outputs.append(out.codes)
        steps.append(np.full(cfg.d_head, inst.cfg.delta_out))
        cycles.append(report.total_cycles)
    result = QuantTensor(np.concatenate(outputs, axis=1), QuantParams(cfg.nbit, np.concatenate(steps)))
    qtfile.save(args.out, result)
    manifest = {
        "config": cfg.to_dict(),
        "prng": PRNG_NAME,
        "path": "simulator" if args.simulate else "kernel",
        "input": {"path": str(args.input), "sha256": _sha256(args.input)} if args.input else "generated",
        "output": {"path": str(args.out), "shape": list(result.shape), "sha256": _sha256(args.out)},
        "heads": [
            {"head": h, "delta_q": i.cfg.delta_q, "delta_k": i.cfg.delta_k, "delta_v": i.cfg.delta_v,
             "delta_attn": i.cfg.delta_attn, "delta_out": i.cfg.delta_out, "cycles": c}
            for h, (i, c) in enumerate(zip(heads, cycles))
        ],
        "cycle_total": sum(cycles),
    }
    manifest_path = args.out.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {args.out} and {manifest_path}")
    return EXIT_OK


COMMANDS = {"stats": cmd_stats, "compare": cmd_compare, "run": cmd_run}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"intvit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
