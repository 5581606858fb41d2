"""Acceptance criteria, one test each. Prints a PASS/FAIL line per criterion.

Simulator criteria run 60 s simulations over 10 paired seeds; results are
cached across criteria so each cell runs once.
"""
import functools
import itertools
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy import stats

from ncaqm.numopt import (NUMSolver, brute_force_optimum, project_simplex, simplex_grid,
                          solve_dominance, solve_split_multihop)
from ncaqm.qm import CodingContext, make_discipline
from ncaqm.simcore import DATA, Channel, CodedPacket, DecodingBuffer, Knowledge, PacketFactory, run
from ncaqm.topology import alice_bob, butterfly, named_scenario, x_topology

SEEDS = range(10)
DURATION = 60.0

# solver ------------------------------------------------------------------------

SOLVER_CASES = {
    1: ("alice-bob C1=C2=1", lambda: alice_bob(1, 1), 1, (0.64, 0.68), (0.49, 0.51)),
    2: ("alice-bob C1=1 C2=4", lambda: alice_bob(1, 4), 1, (0.86, 0.90), (0.78, 0.82)),
    3: ("X all caps 1", lambda: x_topology(1, 1, 1, 1), 1, (0.64, 0.68), (0.49, 0.51)),
    4: ("X C1=C4=1 C2=C3=4", lambda: x_topology(1, 4, 4, 1), 1, (1.27, 1.33), (0.78, 0.82)),
    5: ("butterfly all caps 1", lambda: butterfly(), 2, (0.48, 0.52), (0.32, 0.34)),
    6: ("butterfly C3=1 others 4", lambda: butterfly(4, 4, 1, 4, 4), 2, (1.10, 1.18), (0.64, 0.68)),
}


@functools.lru_cache(maxsize=None)
def warm_compiled_kernel():
    NUMSolver(coding_depth=1, max_iters=200).fit(alice_bob())


@functools.lru_cache(maxsize=None)
def solved(case):
    warm_compiled_kernel()
    _, make, depth, _, _ = SOLVER_CASES[case]
    t0 = time.perf_counter()
    est = NUMSolver(coding_depth=depth).fit(make())
    elapsed = time.perf_counter() - t0
    x0, _ = brute_force_optimum(make(), grid_step=0.01, coding_depth=0)
    return est, elapsed, float(x0.sum())


@pytest.mark.parametrize("case", sorted(SOLVER_CASES))
def test_solver_optimum(case, report):
    label, _, _, coded_band, plain_band = SOLVER_CASES[case]
    est, elapsed, plain = solved(case)
    total = float(est.x_.sum())
    ok = (coded_band[0] <= total <= coded_band[1] and plain_band[0] <= plain <= plain_band[1]
          and elapsed < 10.0)
    report(f"criterion {case} ({label})", ok,
           f"coded sum {total:.4f} in {coded_band}, 0-hop oracle {plain:.4f} in {plain_band}, "
           f"{elapsed:.1f} s")


def test_duals_settle(report):
    worst = {c: solved(c)[0].trace_.max_dual_change(50) for c in SOLVER_CASES}
    ok = all(v < 1e-3 for v in worst.values())
    report("criterion 7 (multipliers converge)", ok,
           "max |dq| over last 50 iters: " + ", ".join(f"{c}:{v:.1e}" for c, v in worst.items()))


class OneGroup:
    def __init__(self, n):
        g = np.arange(n)[None, :]
        self.code_groups = self.split_groups = g
        self.entry_flow = self.entry_partition = self.entry_hyperarc = np.arange(n)
        self.n_partitions = n


@functools.lru_cache(maxsize=None)
def grid(n, step):
    return simplex_grid(n, step)


def test_subproblems_match_grid(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 4))
        c = float(rng.uniform(0.05, 2.0))
        v = rng.uniform(0, 1, n)
        mu = rng.dirichlet(np.ones(n))
        pts = grid(n, 2.5e-4 if n == 2 else 5e-4)
        p = OneGroup(n)
        m = solve_dominance(p, np.ones(n), v, mu, c)
        ref = pts[np.argmax(pts @ v - c * ((pts - mu) ** 2).sum(axis=1))]
        worst = max(worst, np.abs(m - ref).max())
        _, a = solve_split_multihop(p, v, np.ones(n), mu, c)
        ref = pts[np.argmin(pts @ v + c * ((pts - mu) ** 2).sum(axis=1))]
        worst = max(worst, np.abs(a - ref).max())
    report("criterion 8 (subproblems vs grid, 100 instances)", worst <= 1e-3,
           f"max deviation {worst:.2e}")


# simulator ---------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def sim(topo, disc, buffer, seed):
    m = run(named_scenario(topo), discipline=disc, buffer=buffer, duration=DURATION, seed=seed)
    return m.aggregate_bps, m.no_partner_fraction


def throughput(topo, disc, buffer=10):
    return np.array([sim(topo, disc, buffer, s)[0] for s in SEEDS])


def gain(topo, disc, buffer=10, base="nonc"):
    return 100.0 * (throughput(topo, disc, buffer).mean() / throughput(topo, base, buffer).mean() - 1)


@pytest.mark.parametrize("topo", ["alice-bob", "x", "cross", "wheel(8)"])
def test_throughput_ordering(topo, report):
    nonc, cope, ncaqm = (throughput(topo, d).mean() for d in ("nonc", "cope", "ncaqm"))
    g_cope, g_nc = gain(topo, "cope"), gain(topo, "ncaqm")
    ordered = ncaqm > cope > nonc
    ok = ordered and g_nc >= 1.5 * g_cope
    report(f"criterion 9 ({topo})", ok,
           f"kb/s noNC {nonc / 1e3:.1f} COPE {cope / 1e3:.1f} NCAQM {ncaqm / 1e3:.1f}; "
           f"gains COPE {g_cope:.1f}% NCAQM {g_nc:.1f}% (ratio {g_nc / g_cope:.2f}, need 1.5; "
           f"ordering {'holds' if ordered else 'broken'})")


def test_coding_starvation(report):
    frac = np.mean([sim("x", "cope", 10, s)[1] for s in SEEDS])
    report("criterion 10 (X, COPE, no-partner fraction)", 0.35 <= frac <= 0.65, f"{frac:.3f}")


def test_buffer_trend(report):
    buffers = (10, 30, 50)
    paired = {L: throughput("x", "cope", L) / throughput("x", "nonc", L) - 1 for L in buffers}
    p_values = [stats.ttest_rel(paired[b], paired[a], alternative="less").pvalue
                for a, b in zip(buffers, buffers[1:])]
    ncaqm_ok = [throughput("x", "ncaqm", L).mean() >= throughput("x", "cope", L).mean()
                for L in buffers]
    ok = all(p >= 0.05 for p in p_values) and all(ncaqm_ok)
    means = ", ".join(f"L={L}: {100 * paired[L].mean():.1f}%" for L in buffers)
    report("criterion 11 (X buffer trend)", ok,
           f"COPE gain {means}; decrease p-values {[round(p, 3) for p in p_values]}; "
           "kb/s NCAQM/COPE " + ", ".join(
               f"{throughput('x', 'ncaqm', L).mean() / 1e3:.1f}/{throughput('x', 'cope', L).mean() / 1e3:.1f}"
               for L in buffers))


def test_wheel_trend(report):
    counts = (2, 4, 8)
    mean = {(n, d): throughput(f"wheel({n})", d, 30).mean() for n in counts
            for d in ("nonc", "cope", "ncaqm")}
    nonc = [mean[(n, "nonc")] for n in counts]
    cope = [mean[(n, "cope")] for n in counts]
    nc = [mean[(n, "ncaqm")] for n in counts]
    ok = (all(b <= a for a, b in zip(nonc, nonc[1:])) and all(b >= a for a, b in zip(cope, cope[1:]))
          and all(b >= a for a, b in zip(nc, nc[1:])) and nc[-1] >= cope[-1])
    fmt = lambda v: "/".join(f"{x / 1e3:.0f}" for x in v)
    report("criterion 12 (wheel flows 2/4/8, buffer 30)", ok,
           f"kb/s noNC {fmt(nonc)} COPE {fmt(cope)} NCAQM {fmt(nc)}")


def test_butterfly(report):
    nonc, bfly, nc = (throughput("butterfly", d).mean() for d in ("nonc", "bfly", "ncaqm"))
    g_b, g_n = gain("butterfly", "bfly"), gain("butterfly", "ncaqm")
    ordered = nc > bfly > nonc
    report("criterion 13 (butterfly)", ordered and g_n >= 1.5 * g_b,
           f"gains BFLY {g_b:.1f}% NCAQM {g_n:.1f}% (ratio {g_n / g_b:.2f}, need 1.5; "
           f"ordering {'holds' if ordered else 'broken'})")


def test_determinism(report):
    runs = [run(named_scenario("cross"), discipline="ncaqm", duration=20, seed=11, trace=True).to_json()
            for _ in range(2)]
    report("criterion 14 (rerun byte-identical)", runs[0] == runs[1], f"{len(runs[0])} bytes")


# invariant suites --------------------------------------------------------------------

FAST = settings(database=None, deadline=None, derandomize=True,
                suppress_health_check=list(HealthCheck))


def test_invariant_suites(report):
    count = {"n": 0}
    t0 = time.perf_counter()

    @settings(FAST, max_examples=3000)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    def simplex(v):
        count["n"] += 1
        p = project_simplex(v)
        assert p.min() >= 0 and abs(p.sum() - 1) < 1e-9

    @settings(FAST, max_examples=2000)
    @given(st.integers(2, 3), st.floats(0.0, 3.0), st.integers(0, 2**31 - 1))
    def subproblem_simplex(n, c, seed):
        count["n"] += 1
        rng = np.random.default_rng(seed)
        p = OneGroup(n)
        v = rng.uniform(-1, 1, n)
        mu = rng.dirichlet(np.ones(n))
        for out in (solve_dominance(p, np.ones(n), v, mu, c), solve_split_multihop(p, v, np.ones(n), mu, c)[1]):
            assert out.min() >= -1e-12 and abs(out.sum() - 1) < 1e-9

    sc = named_scenario("cross")
    hub = 4
    hg, cat = sc.build(1)

    def bench(disc, cap, recode="on-enqueue"):
        bufs = [DecodingBuffer(10_000) for _ in range(sc.network.n_nodes)]
        ctx = CodingContext.build(hg, cat, Knowledge(bufs))
        kw = dict(recode=recode) if disc == "ncaqm" else {}
        q = make_discipline(disc, hub, ctx, cap, np.random.default_rng(0), **kw)
        factory = PacketFactory()

        def packet(f, known):
            flow = sc.flows[f]
            p = factory.make(f, 500, DATA, 0, 0.0, flow.path)
            if known:
                bufs[flow.source].add(p.id)
            return CodedPacket.single(p, hub)
        return q, ctx, packet

    @settings(FAST, max_examples=3000)
    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 3), st.booleans()), max_size=30),
           st.integers(1, 8), st.sampled_from(["nonc", "cope", "ncaqm"]))
    def queue_conservation(ops, cap, disc):
        count["n"] += 1
        q, ctx, packet = bench(disc, cap)
        held = {}
        for is_in, f, known in ops:
            if is_in:
                held[f] = held.get(f, 0) + 1
                for p in q.enqueue(packet(f, known), 0.0):
                    held[p.flow] -= 1
            elif len(q):
                out = q.dequeue(0.0)
                assert ctx.eligible(out, hub)
                for p in out.natives:
                    held[p.flow] -= 1
            assert len(q) <= cap
            assert q.per_flow_counts() == {s: n for s, n in held.items() if n}

    @settings(FAST, max_examples=1500)
    @given(st.lists(st.tuples(st.integers(0, 3), st.booleans()), max_size=12))
    def recode_idempotent(ops):
        count["n"] += 1
        q, ctx, packet = bench("ncaqm", 50, recode="every-ms:10")
        for f, known in ops:
            q.enqueue(packet(f, known), 0.0)
        q.recode_queue()
        snap = [tuple(p.id for p in c.natives) for c in q.queue]
        q.recode_queue()
        assert snap == [tuple(p.id for p in c.natives) for c in q.queue]
        for a, b in itertools.combinations(q.queue, 2):
            assert q._try_merge(a, b) is None

    net = named_scenario("x").network
    lost = {"tx": 0, "lost": 0}

    @settings(FAST, max_examples=1000)
    @given(st.integers(0, 2**31 - 1))
    def residual_loss(seed):
        count["n"] += 1
        ch = Channel(net, success_prob=0.85, max_retries=7)
        rng = np.random.default_rng(seed)
        for _ in range(100):
            lost["tx"] += 1
            lost["lost"] += bool(ch.transmit(0, [2], 500, rng).failed)

    for suite in (simplex, subproblem_simplex, queue_conservation, recode_idempotent, residual_loss):
        suite()
    elapsed = time.perf_counter() - t0
    loss = lost["lost"] / lost["tx"]
    ok = count["n"] >= 10_000 and elapsed < 60 and loss < 0.01
    report("criterion 15 (invariant suites)", ok,
           f"{count['n']} cases in {elapsed:.1f} s; residual loss {loss:.2e} over {lost['tx']} tx")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
