"""Bridge from pretrained checkpoints to the EMBS embedding-store format."""

__version__ = "0.1.0"

from embextract.extract import ExtractionJob, ExtractionSummary, extract
from embextract.store_writer import StoreWriter
