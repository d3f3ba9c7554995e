"""Dependency-ordered training of the whole grid of specialists."""
from __future__ import annotations

from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait

from ..errors import LocationError
from .train import stratified_split, train_location


def schedule_ensemble(grid, dataset, cfg, parallelism=1, existing=None, on_done=None):
    """Train every location, starting each one as soon as its parent is done.

    Each location draws from its own ``(seed, location)`` random stream and
    starts from its parent's final weights, so the result does not depend on
    ``parallelism``. ``existing`` maps already-trained locations to models
    (used to resume); ``on_done(model)`` runs in the caller's thread after
    each newly trained location.
    """
    done = dict(existing or {})
    split = stratified_split(dataset.signs, cfg.val_fraction, cfg.seed)

    def ready(j):
        p = grid.parents[j]
        return j not in done and (p is None or p in done)

    submitted = set()
    with ThreadPoolExecutor(max_workers=max(1, int(parallelism))) as pool:
        futures = {}

        def submit_ready():
            for j in grid.init_order:
                if j not in submitted and ready(j):
                    submitted.add(j)
                    futures[pool.submit(train_location, j, dataset, grid, cfg, done, split)] = j

        submit_ready()
        while futures:
            finished, _ = wait(futures, return_when=FIRST_COMPLETED)
            for fut in sorted(finished, key=lambda f: futures[f]):
                j = futures.pop(fut)
                exc = fut.exception()
                if exc is not None:
                    for other in futures:
                        other.cancel()
                    raise LocationError(grid.location_name(j), exc) from exc
                model = fut.result()
                done[j] = model
                if on_done is not None:
                    on_done(model)
            submit_ready()
    return [done[j] for j in range(grid.m)]
