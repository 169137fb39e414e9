"""placelab: batch analytics for collaborative-canvas action logs."""

__version__ = "0.1.0"

SCHEMA_VERSIONS = {
    "cache_format": 1,
    "partition_csv": 1,
    "label_grid_rle": 1,
    "embedding_file": 1,
    "manifest": 1,
}
