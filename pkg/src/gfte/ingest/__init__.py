"""Loading, filtering, generating and storing table datasets."""

from gfte.ingest.io import (
    FORMAT_VERSION,
    ConsistencyError,
    DatasetManifest,
    IngestError,
    ManifestEntry,
    ParseError,
    TableValidationError,
    filter_dataset,
    load_dataset,
    load_manifest,
    load_table,
    read_pgm,
    save_table,
    table_from_dict,
    table_to_dict,
    write_dataset,
    write_pgm,
)
from gfte.ingest.synth import GenSpec, GenSpecError, generate_tables, rasterize

__all__ = [
    "FORMAT_VERSION",
    "ConsistencyError",
    "DatasetManifest",
    "GenSpec",
    "GenSpecError",
    "IngestError",
    "ManifestEntry",
    "ParseError",
    "TableValidationError",
    "filter_dataset",
    "generate_tables",
    "load_dataset",
    "load_manifest",
    "load_table",
    "rasterize",
    "read_pgm",
    "save_table",
    "table_from_dict",
    "table_to_dict",
    "write_dataset",
    "write_pgm",
]
