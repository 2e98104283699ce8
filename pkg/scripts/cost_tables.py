"""Print the closed-form cost tables for every scale preset.

Three tables per preset: per-mechanism KV-cache footprint at a reference
sequence length, per-mechanism decode FLOPs per token, and the low-rank
cache ablation over a small grid of ranks. All numbers come from the
closed-form cost model (no tensors are allocated).
"""

import argparse
import dataclasses

from attnlab import (
    MIB,
    CostQuery,
    Mechanism,
    PRESET_NAMES,
    ablation_table,
    cache_bytes,
    cache_ratio,
    config_for,
    decode_flops,
    get_preset,
    kv_param_count,
)

MECHANISMS = (Mechanism.MHA, Mechanism.MQA, Mechanism.GQA, Mechanism.MLA, Mechanism.LRKV)


def preset_tables(name: str, tokens: int, batch: int) -> None:
    preset = get_preset(name)
    print(f"\n=== {name}: L={preset.n_layers} H={preset.H} d={preset.d} "
          f"d_h={preset.d_h} G={preset.G} d_c={preset.d_c} r={preset.table_rank} ===")

    print(f"{'mechanism':>10} {'cache MiB':>12} {'ratio':>8} {'kv params':>12} {'flops/step':>14}")
    for mechanism in MECHANISMS:
        config = config_for(preset, mechanism, rank=preset.table_rank
                            if mechanism is Mechanism.LRKV else None)
        q = CostQuery(config=config, T=tokens, batch=batch, bytes_per_element=2)
        flops, _ = decode_flops(q)
        ratio = cache_ratio(config)
        ratio_s = f"{ratio:.3f}" if ratio is not None else "--"
        print(f"{mechanism.value:>10} {cache_bytes(q) / MIB:>12.1f} {ratio_s:>8} "
              f"{kv_param_count(config):>12,} {flops:>14,}")

    base = config_for(preset, Mechanism.LRKV, rank=preset.table_rank)
    ranks = sorted({0, preset.d_h // 8, preset.d_h // 4, preset.measured_rank,
                    preset.table_rank, preset.d_h})
    print(f"\n{'rank':>6} {'cache %':>9} {'kv params':>12} {'flops overhead':>15}")
    for row in ablation_table(base, ranks, T=tokens):
        print(f"{row['r']:>6} {row['cache_pct']:>8.3f}% {row['kv_param_count']:>12,} "
              f"{row['flops_overhead_vs_mha']:>15.4f}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--presets", nargs="*", default=list(PRESET_NAMES))
    ap.add_argument("--tokens", type=int, default=4096)
    ap.add_argument("--batch", type=int, default=1)
    args = ap.parse_args()
    for name in args.presets:
        preset_tables(name, args.tokens, args.batch)


if __name__ == "__main__":
    main()
