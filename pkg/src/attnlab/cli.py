"""Command-line surface: weight generation, verification, cost tables, analytics.

Subcommands

    gen-weights   draw a seeded WeightSet and save it as a tensor archive
    verify        decode a sequence through both decode paths, emit the
                  agreement report, fail (exit 1) on tolerance violation
    memory        cache-size table: bytes, MiB, byte ratio, formula ratio
    flops         per-step decode FLOPs and scan overheads per mechanism
    ablate        sweep low-rank residual ranks at one scale
    diversity     head-similarity matrix + spectra from a weight archive
    svd-compare   learned residuals vs truncated-SVD optimum per head
    gradcheck     finite-difference validation of the projection gradients

Exit codes: 0 success; 1 validation failure (a tolerance was exceeded or an
input file failed validation); 2 usage error. CSV output always starts with
a header row; not-applicable cells are left empty. All numbers use dot
decimals regardless of locale.

Memory-table ratio columns: ``ratio_vs_mha`` is the byte ratio of the row's
actual configuration against the full-cache baseline under the same query.
``ratio_formula`` is the closed-form ratio at the scale's deployed residual
rank (``table_rank``), the number quoted alongside measured tables; it is
left empty for the latent mechanism, whose ratio depends on the stream-
accounting convention rather than the config alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

import numpy as np

from .cache import equivalence_report
from .config import AttentionConfig, Mechanism, RngSpec
from .costs import (
    DEFAULT_MLA_STREAMS,
    MIB,
    CostQuery,
    ablation_table,
    cache_ratio,
    cost_report,
    decode_flops,
    decode_flops_breakdown,
)
from .diversity import diversity_report, factorization_gap
from .errors import ConfigurationError, LabError
from .gradcheck import GRADCHECK_TOL, gradcheck_rows
from .archive import read_archive, write_archive
from .presets import PRESET_NAMES, config_for, get_preset
from .weights import init_weights

EQUIVALENCE_TOL = {"float64": 1e-9, "float32": 1e-5}

MECHANISM_ORDER = (Mechanism.MHA, Mechanism.MQA, Mechanism.GQA,
                   Mechanism.MLA, Mechanism.LRKV)


def _write_csv(out: str, header: list[str], rows: list[list]) -> None:
    if out == "-":
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
        return
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _apply_overrides(config: AttentionConfig, sets: list[str] | None) -> AttentionConfig:
    if not sets:
        return config
    fields = config.to_json_dict()
    for item in sets:
        if "=" not in item:
            raise ConfigurationError(f"--set expects field=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        fields[key] = value
    return AttentionConfig.from_json_dict(fields)


def _load_config_json(path: str) -> AttentionConfig:
    with open(path) as f:
        return AttentionConfig.from_json_dict(json.load(f))


def _resolve_config(args) -> AttentionConfig:
    """Config from --config-json or --preset + --mechanism, plus --set."""
    if getattr(args, "config_json", None):
        config = _load_config_json(args.config_json)
    else:
        if not getattr(args, "preset", None):
            raise ConfigurationError("provide --preset or --config-json")
        config = config_for(args.preset, args.mechanism,
                            rank=getattr(args, "rank", None))
    return _apply_overrides(config, getattr(args, "set", None))


def _cmd_gen_weights(args) -> int:
    config = _resolve_config(args)
    w = init_weights(config, RngSpec(seed=args.seed))
    if args.dtype == "f32":
        w = w.astype(np.float32)
    write_archive(w, args.out)
    return 0


def _cmd_verify(args) -> int:
    config = _resolve_config(args)
    dtype = np.float64 if args.dtype == "f64" else np.float32
    rows = equivalence_report(
        config, RngSpec(seed=args.seed), T=args.tokens, trials=args.trials,
        dtype=dtype,
    )
    header = ["trial", "mechanism", "T", "dtype", "max_logit_diff",
              "max_out_diff", "explicit_elems_touched", "factored_elems_touched"]
    out_rows = []
    failed = False
    tol = EQUIVALENCE_TOL[np.dtype(dtype).name]
    for r in rows:
        for key in ("max_logit_diff", "max_out_diff"):
            if r[key] is not None and r[key] > tol:
                failed = True
        out_rows.append([
            r["trial"], r["mechanism"], r["T"], r["dtype"],
            "" if r["max_logit_diff"] is None else f"{r['max_logit_diff']:.3e}",
            "" if r["max_out_diff"] is None else f"{r['max_out_diff']:.3e}",
            r["explicit_elems_touched"],
            "" if r["factored_elems_touched"] is None else r["factored_elems_touched"],
        ])
    _write_csv(args.out, header, out_rows)
    return 1 if failed else 0


def _memory_row(config, preset, args):
    q = CostQuery(config=config, T=args.tokens, batch=args.batch,
                  bytes_per_element=args.bytes,
                  mla_latent_streams=args.mla_streams)
    rep = cost_report(q)
    if config.mechanism is Mechanism.MLA:
        formula = ""
    elif config.mechanism is Mechanism.LRKV and preset is not None:
        formula = f"{cache_ratio(replace(config, r=preset.table_rank)):.3f}"
    else:
        formula = f"{cache_ratio(config):.3f}"
    return [
        config.mechanism.value,
        rep.cache_bytes,
        f"{rep.cache_bytes / MIB:.1f}",
        f"{rep.cache_ratio_vs_mha:.3f}",
        formula,
        rep.kv_param_count,
    ]


def _cmd_memory(args) -> int:
    header = ["mechanism", "cache_bytes", "cache_mib", "ratio_vs_mha",
              "ratio_formula", "kv_param_count"]
    rows = []
    if args.config_json:
        config = _apply_overrides(_load_config_json(args.config_json), args.set)
        rows.append(_memory_row(config, None, args))
    else:
        preset = get_preset(args.preset)
        for mech in MECHANISM_ORDER:
            config = config_for(preset, mech, rank=args.rank)
            config = _apply_overrides(config, args.set)
            rows.append(_memory_row(config, preset, args))
    _write_csv(args.out, header, rows)
    return 0


def _cmd_flops(args) -> int:
    preset = get_preset(args.preset)
    header = ["mechanism", "decode_path", "T", "decode_flops",
              "overhead_vs_mha", "proj_new_token", "reconstruct", "scan",
              "lift", "softmax"]
    rows = []
    paths = {
        Mechanism.MHA: ("explicit",),
        Mechanism.MQA: ("explicit",),
        Mechanism.GQA: ("explicit",),
        Mechanism.MLA: ("reconstruct", "factored"),
        Mechanism.LRKV: ("factored",),
    }
    for mech in MECHANISM_ORDER:
        config = _apply_overrides(config_for(preset, mech, rank=args.rank), args.set)
        q = CostQuery(config=config, T=args.tokens, batch=1,
                      bytes_per_element=2)
        for path in paths[mech]:
            mla_path = path if mech is Mechanism.MLA else "reconstruct"
            total, overhead = decode_flops(q, mla_path=mla_path)
            parts = decode_flops_breakdown(q, mla_path=mla_path)
            rows.append([
                mech.value, path, args.tokens, total, f"{overhead:.6f}",
                parts["proj_new_token"], parts["reconstruct"], parts["scan"],
                parts["lift"], parts["softmax"],
            ])
    _write_csv(args.out, header, rows)
    return 0


def _cmd_ablate(args) -> int:
    preset = get_preset(args.preset)
    ranks = [int(x) for x in args.ranks.split(",") if x != ""]
    base = _apply_overrides(config_for(preset, Mechanism.LRKV), args.set)
    rows = ablation_table(base, ranks, T=args.tokens)
    header = ["r", "cache_ratio", "cache_pct", "cache_bytes",
              "kv_param_count", "decode_flops", "flops_overhead_vs_mha"]
    out_rows = [
        [r["r"], f"{r['cache_ratio']:.6f}", f"{r['cache_pct']:.3f}",
         r["cache_bytes"], r["kv_param_count"], r["decode_flops"],
         f"{r['flops_overhead_vs_mha']:.6f}"]
        for r in rows
    ]
    _write_csv(args.out, header, out_rows)
    return 0


def _cmd_diversity(args) -> int:
    w = read_archive(args.weights)
    rep = diversity_report(w, w.config)
    prefix = args.out_prefix
    H = rep["H"]

    sim_header = [f"head_{h}" for h in range(H)]
    sim_rows = [[f"{x:.9f}" for x in row] for row in rep["similarity"]]
    _write_csv(f"{prefix}_similarity.csv", sim_header, sim_rows)

    spec_header = ["variant", "component", "eigenvalue", "variance_fraction"]
    spec_rows = []
    cum_header = ["variant", "component", "cumulative_variance"]
    cum_rows = []
    for variant in ("uncentered", "centered"):
        sr = rep[variant]
        for i in range(H):
            spec_rows.append([variant, i, f"{sr.eigenvalues[i]:.9e}",
                              f"{sr.variance_fractions[i]:.9f}"])
            cum_rows.append([variant, i, f"{sr.cumulative_variance[i]:.9f}"])
    _write_csv(f"{prefix}_spectrum.csv", spec_header, spec_rows)
    _write_csv(f"{prefix}_cumulative.csv", cum_header, cum_rows)

    er_header = ["variant", "effective_rank_abs", "effective_rank_pct",
                 "n_components_for_90pct", "degenerate", "degenerate_heads"]
    er_rows = []
    for variant in ("uncentered", "centered"):
        sr = rep[variant]
        er_rows.append([
            variant, f"{sr.effective_rank_abs:.6f}",
            f"{sr.effective_rank_pct:.6f}", sr.n_components_for_90pct,
            int(sr.degenerate),
            ";".join(str(h) for h in rep["degenerate_heads"]),
        ])
    _write_csv(f"{prefix}_effective_rank.csv", er_header, er_rows)
    return 0


def _cmd_svd_compare(args) -> int:
    w = read_archive(args.weights)
    ref = read_archive(args.reference)
    rows = factorization_gap(w, w.config, ref, r=args.rank)
    header = ["head", "path", "e_learned", "e_opt", "ratio"]
    out_rows = [
        [r["head"], r["path"], f"{r['e_learned']:.9e}", f"{r['e_opt']:.9e}",
         f"{r['ratio']:.9f}"]
        for r in rows
    ]
    _write_csv(args.out, header, out_rows)
    return 0


def _cmd_gradcheck(args) -> int:
    config = _apply_overrides(_load_config_json(args.config_json), args.set)
    rows = gradcheck_rows(config, RngSpec(seed=args.seed),
                          instances=args.instances)
    header = ["instance", "path", "target", "fd_mode", "rel_err"]
    out_rows = [
        [r["instance"], r["path"], r["target"], r["fd_mode"],
         f"{r['rel_err']:.3e}"]
        for r in rows
    ]
    _write_csv(args.out, header, out_rows)
    failed = any(r["rel_err"] > GRADCHECK_TOL for r in rows)
    return 1 if failed else 0


def _add_config_source(p, need_mechanism=True):
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--config-json", metavar="PATH")
    if need_mechanism:
        p.add_argument("--mechanism", default="lrkv",
                       choices=[m.value for m in Mechanism])
    p.add_argument("--rank", type=int, default=None,
                   help="low-rank residual rank (default: preset's measured rank)")
    p.add_argument("--set", action="append", metavar="FIELD=VALUE",
                   help="override a config field (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnlab",
        description="KV-cache attention laboratory: decode paths, cost models, "
                    "head-diversity analytics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-weights", help="draw seeded weights into an archive")
    _add_config_source(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_weights)

    p = sub.add_parser("verify", help="explicit vs factored decode agreement")
    _add_config_source(p)
    p.add_argument("--tokens", type=int, default=256)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("memory", help="cache-size table")
    _add_config_source(p, need_mechanism=False)
    p.add_argument("--tokens", type=int, default=2048)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--bytes", type=int, default=2)
    p.add_argument("--mla-streams", type=int, default=DEFAULT_MLA_STREAMS,
                   choices=(1, 2))
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_memory)

    p = sub.add_parser("flops", help="decode FLOPs per mechanism")
    _add_config_source(p, need_mechanism=False)
    p.add_argument("--tokens", type=int, default=2048)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("ablate", help="sweep low-rank residual ranks")
    _add_config_source(p, need_mechanism=False)
    p.add_argument("--ranks", default="8,16,32,64,128")
    p.add_argument("--tokens", type=int, default=2048)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("diversity", help="head-similarity analytics from an archive")
    p.add_argument("--weights", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_diversity)

    p = sub.add_parser("svd-compare", help="learned residuals vs SVD optimum")
    p.add_argument("--weights", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_svd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.add_argument("--config-json", required=True, metavar="PATH")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--set", action="append", metavar="FIELD=VALUE")
    p.add_argument("--out", default="-")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def run_cli(argv: list[str]) -> int:
    """Parse and execute; returns the process exit code (0/1/2)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except LabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> int:
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
