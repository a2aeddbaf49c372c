import numpy as np

from meo.bench import BENCH_HEADER, build_stack, rows_to_csv, run_bench, time_forward
from meo.config import config_from_dict

SMALL = {"mode": "bench", "profile": {"d_model": 32, "d_ff": 64, "seq_len": 8, "n_experts": 4},
         "m_sweep": [1, 4], "repeats": 3, "warmup": 3}


def test_rows_cover_both_methods():
    rows = run_bench(config_from_dict(SMALL))
    assert [(r.method, r.m) for r in rows] == [("MoE", 1), ("MoE", 4), ("MEO", 1), ("MEO", 4)]
    for r in rows:
        assert r.wall_ms_p10 <= r.wall_ms_median <= r.wall_ms_p90
        assert (r.n, r.d, r.d_ff, r.s, r.level) == (4, 32, 64, 8, "sequence")
    text = rows_to_csv(rows, BENCH_HEADER)
    assert text.splitlines()[0] == BENCH_HEADER and len(text.splitlines()) == 5


def test_model_flops_track_method():
    rows = {(r.method, r.m): r.flops_model for r in run_bench(config_from_dict(SMALL))}
    assert rows[("MoE", 4)] > 3 * rows[("MoE", 1)]
    assert rows[("MEO", 4)] - rows[("MEO", 1)] < rows[("MoE", 4)] - rows[("MoE", 1)]


def test_stack_methods_agree_at_single_expert():
    cfg = config_from_dict(SMALL)
    moe = build_stack("MoE", cfg.profile, 1, cfg)()
    meo = build_stack("MEO", cfg.profile, 1, cfg)()
    assert moe.dtype == np.float32
    np.testing.assert_allclose(moe, meo, rtol=1e-4, atol=1e-5)


def test_timer_counts_repeats_only():
    calls = []
    times = time_forward(lambda: calls.append(1), repeats=4, warmup=3)
    assert len(calls) == 7 and times.shape == (4,) and (times >= 0).all()
