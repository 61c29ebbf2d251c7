"""Bundled region tables, adjacency and synthetic inputs."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .graph import AdjacencySpec, load_adjacency
from .ingest import read_counts, write_counts
from .model import PRECISE, CountVector, DetectorLayout, PopulationField, SourceGrid
from .synthetic import (
    SyntheticSpec,
    calibrate_scale,
    generate_truth,
    sample_counts,
    synthetic_misdeclare_pairs,
    synthetic_population,
)
from .transition import (
    KindFractions,
    MisDeclareMatrix,
    TransitionMatrix,
    build_transition,
    estimate_misdeclare,
    read_pair_counts,
    write_pair_counts,
)

DATA = resources.files(__package__) / "data"

REGIONS_FILE = DATA / "regions.csv"
ADJACENCY_FILE = DATA / "us_adjacency.txt"
POPULATION_FILE = DATA / "population_synthetic.csv"
MISDECLARE_FILE = DATA / "misdeclare_pairs_synthetic.csv"
COUNTS_FILE = DATA / "counts_synthetic.csv"


def load_regions(path=None):
    """Return ``(codes, centroids)``; centroids map code -> (lat, lon)."""
    codes, centroids = [], {}
    with open(path or REGIONS_FILE, newline="") as fh:
        for rec in csv.DictReader(fh):
            codes.append(rec["code"])
            if rec.get("lat") not in (None, ""):
                centroids[rec["code"]] = (float(rec["lat"]), float(rec["lon"]))
    return tuple(codes), centroids


def us_grid(time_slots: int = 24) -> SourceGrid:
    return SourceGrid(load_regions()[0], time_slots)


def us_adjacency(temporal_wraparound: bool = True) -> AdjacencySpec:
    return load_adjacency(ADJACENCY_FILE, temporal_wraparound)


def read_population(path, grid: SourceGrid) -> np.ndarray:
    """Kind-1 rows of a counts CSV as a source-bin vector."""
    return read_counts(path, DetectorLayout(grid)).kind(PRECISE).copy()


@dataclass
class BenchSetup:
    grid: SourceGrid
    layout: DetectorLayout
    adjacency: AdjacencySpec
    centroids: dict
    z1: np.ndarray
    population: PopulationField
    M: MisDeclareMatrix
    frac: KindFractions
    P: TransitionMatrix
    truth: np.ndarray


def bench_setup(
    population_path=None,
    pairs_path=None,
    regions_path=None,
    adjacency_path=None,
    time_slots: int = 24,
    frac: KindFractions = KindFractions(),
    spec: SyntheticSpec = SyntheticSpec(),
    target_total: float | None = None,
) -> BenchSetup:
    """Assemble the synthetic benchmark from the bundled (or given) files.

    The truth is rescaled so that the expected number of events is
    ``target_total`` (the reference total by default).
    """
    codes, centroids = load_regions(regions_path)
    grid = SourceGrid(codes, time_slots)
    layout = DetectorLayout(grid)
    adj = load_adjacency(adjacency_path or ADJACENCY_FILE)
    z1 = read_population(population_path or POPULATION_FILE, grid)
    pop = PopulationField.from_counts(z1)
    M = estimate_misdeclare(read_pair_counts(pairs_path or MISDECLARE_FILE), codes)
    P = build_transition(grid, layout, frac, M)
    shape = generate_truth(SyntheticSpec(spec.components, 1.0, spec.seed), grid, centroids)
    kw = {} if target_total is None else {"target_total": target_total}
    truth = shape * calibrate_scale(shape, pop.g, **kw)
    return BenchSetup(grid, layout, adj, centroids, z1, pop, M, frac, P, truth)


def write_bundled_data(dest, time_slots: int = 24, counts_seed: int = 0):
    """Regenerate the synthetic population, declaration pairs and counts files in ``dest``."""
    dest = Path(dest)
    grid = us_grid(time_slots)
    layout = DetectorLayout(grid)
    z1 = synthetic_population(grid)
    pop_vec = np.zeros(layout.m, dtype=np.int64)
    pop_vec[layout.kind_slice(PRECISE)] = z1
    write_counts(dest / POPULATION_FILE.name, CountVector(pop_vec, layout), kinds=(PRECISE,))
    pairs = synthetic_misdeclare_pairs(grid, us_adjacency(), z1)
    write_pair_counts(dest / MISDECLARE_FILE.name, pairs)
    setup = bench_setup(dest / POPULATION_FILE.name, dest / MISDECLARE_FILE.name, time_slots=time_slots)
    x = sample_counts(setup.truth, setup.population, setup.P, counts_seed, layout)
    write_counts(dest / COUNTS_FILE.name, x)
