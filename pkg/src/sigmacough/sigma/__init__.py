"""Crowdsourced sample ingestion, de-identification and daily open-data export."""

from .deid import SampleMetadata, Violation, validate_deidentification
from .store import ExportBundle, IngestResult, SampleStore
from .server import ServiceConfig, make_server, serve

__all__ = ["SampleMetadata", "Violation", "validate_deidentification", "ExportBundle",
           "IngestResult", "SampleStore", "ServiceConfig", "make_server", "serve"]
