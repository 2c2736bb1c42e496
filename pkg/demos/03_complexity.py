"""
Where the parameters and MACs go
================================
"""

from fsblstm import analyze, count_macs, preset
from fsblstm.complexity import block_macs

report = analyze(preset("fsb-6ch"))
print(report.as_table())

cfg = preset("fsb-6ch")
print(f"\nsub-band block / full-band block MACs: {block_macs(cfg, 'sb') / block_macs(cfg, 'fb'):.2f}")

# Compute scales with the frame rate: halving the hop doubles GMAC/s.
for hop in (8, 4, 2, 1):
    print(f"6-layer full-band model, {hop} ms hop: {count_macs(preset('fb6-6ch', hop_ms=hop))[1]:.3f} GMAC/s")

# Extra microphones only widen the first convolution.
for name in ("fsb-1ch", "fsb-2ch", "fsb-6ch"):
    r = analyze(preset(name))
    print(f"{name}: {r.params:,} params, {r.gmacs_per_second:.3f} GMAC/s")
