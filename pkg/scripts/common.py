"""Shared helpers for the experiment scripts."""
import multiprocessing as mp
from pathlib import Path

from partgrasp.dataset import GenConfig, generate_object, list_objects, read_object


def _gen(task):
    category, index, config = task
    return generate_object(category, index, config)


def load_or_generate(data: str | None, objects_per_category: int, placements: int = 1,
                     grasps_per_part: int = 0, seed: int = 0, jobs: int = 1):
    """Objects read from ``data`` when given, else generated in memory."""
    if data:
        return [read_object(d) for d in list_objects(Path(data))]
    config = GenConfig(objects_per_category=objects_per_category, placements=placements,
                       grasps_per_part=grasps_per_part, seed=seed)
    tasks = [(c, i, config) for c in config.categories for i in range(objects_per_category)]
    if jobs > 1:
        with mp.get_context("spawn").Pool(jobs) as pool:
            return pool.map(_gen, tasks, chunksize=1)
    return [_gen(t) for t in tasks]
