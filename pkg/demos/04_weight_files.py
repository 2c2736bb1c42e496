"""
Weight files
============

Weights are stored as a small JSON manifest (config, tensor table, CRC32)
followed by one little-endian float32 blob.
"""

import json
import struct
import tempfile
from pathlib import Path

from fsblstm import WeightFormatError, init_random, load, preset, save

store = init_random(preset("fsb-2ch"), seed=42)
path = Path(tempfile.mkdtemp()) / "fsb-2ch.fsbw"
save(store, path)

raw = path.read_bytes()
(n,) = struct.unpack("<Q", raw[5:13])
manifest = json.loads(raw[13:13 + n])
print(f"{path.name}: {len(raw):,} bytes, {len(manifest['tensors'])} tensors, crc32={manifest['crc32']:#010x}")
for entry in manifest["tensors"][:4]:
    print("  ", entry["name"], entry["shape"], "offset", entry["offset"])

print("reloaded bit-exactly:", load(path).equals(store))

damaged = bytearray(raw)
damaged[-1] ^= 0xFF
path.write_bytes(bytes(damaged))
try:
    load(path)
except WeightFormatError as err:
    print("damaged file rejected:", err)

try:
    save(init_random(preset("fb6-6ch")), path)
    load(path, config=preset("fsb-6ch"))
except WeightFormatError as err:
    print("wrong architecture rejected:", str(err)[:80], "...")
