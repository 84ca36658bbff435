from .generate import GenConfig, generate_database, rank_probabilities
from .schema import (PAGE_SIZE, Column, DataType, Database, ForeignKey, Index, IndexDef, Table,
                     build_index, drop_indexes)
from .stats import Catalog, ColumnStats, Histogram, TableStats, build_histogram, compute_statistics, page_count
from .storage import load_catalog, load_database, save_database

__all__ = [
    "PAGE_SIZE", "Catalog", "Column", "ColumnStats", "DataType", "Database", "ForeignKey", "GenConfig",
    "Histogram", "Index", "IndexDef", "Table", "TableStats", "build_histogram", "build_index",
    "compute_statistics", "drop_indexes", "generate_database", "load_catalog", "load_database",
    "page_count", "rank_probabilities", "save_database",
]
