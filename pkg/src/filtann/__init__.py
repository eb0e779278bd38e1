"""Filtered approximate nearest-neighbour search over a hierarchical proximity graph."""

from .core import AttributeRecord, AttributeTable, DataError, Neighbor, UsageError, VectorDataset
from .filters import (TRUE, And, BoolEq, FloatRange, IntEq, IntIn, Not, Or, evaluate,
                      exact_selectivity, parse_filter, render)
from .graph import BuildError, BuildParams, ChecksumError, HnswIndex, build, load, save
from .search import SearchParams, batch_search, exclusion_distance, favor_search, rsf_search
from .selector import SelectorConfig, answer, brute_force_search, estimate_selectivity

__version__ = "0.1.0"
