"""Compare the numba and numpy graph kernels on a synthetic fork.

    python benchmarks/bench_kernels.py [--patches 50] [--repeat 3]

Builds the scale scenario graph once, then times descendant reachability and
the per-patch witness search with each kernel set.  Setting
GITWATCH_DISABLE_NUMBA=1 only changes which set the library itself uses; this
script always runs both.
"""

import argparse
import time

import numpy as np

from gitwatch import _kernels as K
from gitwatch.archive import build_event_index
from gitwatch.graph import build_graph
from gitwatch.heuristics import HeuristicContext, tags_from_index
from gitwatch.provider import FixtureBackend, MetadataProvider, ProviderConfig
from gitwatch.simulator import scale_script, simulate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--patches", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    script = scale_script(n_patches=args.patches)
    r = simulate(script)
    index = build_event_index(r.events)
    provider = MetadataProvider(ProviderConfig(), FixtureBackend(r.all_commits()))
    g = build_graph(index, provider, fork=script.fork_repo, upstream=script.upstream_repo)
    ctx = HeuristicContext(g, index, tags_from_index(index, script.fork_repo),
                           tags_from_index(index, script.upstream_repo))
    starts = [g.index[p.commit] for p in r.truth]
    n = len(g)
    print(f"graph: {n} vertices, {len(g.edge_src)} edges, {len(starts)} patches")

    kernels = {"numpy": (K.reach_np, K.witnesses_np)}
    if K.HAVE_NUMBA:
        kernels["numba"] = (K.reach_nb, K.witnesses_nb)
        # compile outside the timed region
        K.reach_nb(g.child_ptr, g.child_idx, np.array([0], dtype=np.int64), n)
        K.witnesses_nb(g.child_ptr, g.child_idx, 0, g.eligible, g.committer_ts, ctx.ev_rank, ctx.tag_rank)

    results = {}
    for name, (reach, witnesses) in kernels.items():
        def run_reach():
            for s in starts:
                reach(g.child_ptr, g.child_idx, np.array([s], dtype=np.int64), n)

        def run_witnesses():
            return [witnesses(g.child_ptr, g.child_idx, s, g.eligible, g.committer_ts, ctx.ev_rank, ctx.tag_rank)
                    for s in starts]

        results[name] = run_witnesses()
        # the numpy path walks one BFS level per python iteration; a single pass is enough to compare
        repeat = args.repeat if name == "numba" else 1
        tr = best_of(run_reach, repeat)
        tw = best_of(run_witnesses, repeat)
        print(f"{name:6s} reach {tr * 1000:8.1f} ms   witnesses {tw * 1000:8.1f} ms")

    if len(results) == 2:
        same = [tuple(map(int, a)) for a in results["numpy"]] == [tuple(map(int, b)) for b in results["numba"]]
        print(f"kernel outputs identical: {same}")
    print(f"library default kernels: {K.backend_name()}")


if __name__ == "__main__":
    main()
