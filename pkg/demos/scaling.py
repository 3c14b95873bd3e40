"""Broadcast size and timing as the group grows, for both backends.

    python3 demos/scaling.py
"""

from gridkeysim.bgkm import Backend
from gridkeysim.cli import bench_size, size_fit_r2

sizes = [8, 64, 256, 512]
for backend in Backend:
    rows = [bench_size(n, backend, bytes(32)) for n in sizes]
    print(f"{backend.name.lower()}:")
    for r in rows:
        print(f"  n={r['n']:4d} pubinfo={r['pubinfo_bytes']:6d}B "
              f"key_gen={r['key_gen_s'] * 1e3:7.2f}ms key_der={r['key_der_s'] * 1e3:6.3f}ms")
    print(f"  linear fit R^2 = {size_fit_r2(sizes, [r['pubinfo_bytes'] for r in rows]):.6f}")
