"""
Forward latency as more experts are selected
============================================

Single thread, float32, two stacked layers per method. MoE runs one
matmul per selected expert; MEO runs one matmul plus a weight merge whose
cost is bounded by memory bandwidth.
"""

from meo.bench import run_bench
from meo.config import config_from_dict

cfg = config_from_dict({"mode": "bench", "repeats": 10})
rows = run_bench(cfg)

base = {r.method: r.wall_ms_median for r in rows if r.m == 1}
print("method  m   median ms   x(m=1)")
for r in rows:
    print(f"{r.method:<7} {r.m:<3} {r.wall_ms_median:9.2f}   {r.wall_ms_median / base[r.method]:6.2f}")
