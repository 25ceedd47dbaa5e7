"""Desk-scale simulator for feature-vector-reconstruction attacks on face recognition."""

from .corpus import Gallery, gallery_stats, hold_out_probes, load_gallery, split_gallery
from .cost import PriceSchedule, blob_queries, price_queries, price_storage, training_queries
from .evaluation import EvalReport, QueryOutcome, classify_outcome, evaluate, sweep, transfer_grid
from .extractor import EigenfaceModel, QueryLedger, counted, fit_eigenfaces
from .matchdb import EnrollmentDatabase, build_db, query_topk, subsample_identities
from .reconstruct import (
    BlobReconstructor,
    BlobSearchConfig,
    LinearDecoder,
    ReconstructionResult,
    blob_reconstruct,
    fit_linear_decoder,
    reconstruct_batch,
)
from .synth import make_synthetic_gallery

__version__ = "0.1.0"

__all__ = [
    "BlobReconstructor",
    "BlobSearchConfig",
    "EigenfaceModel",
    "EnrollmentDatabase",
    "EvalReport",
    "Gallery",
    "LinearDecoder",
    "PriceSchedule",
    "QueryLedger",
    "QueryOutcome",
    "ReconstructionResult",
    "blob_queries",
    "blob_reconstruct",
    "build_db",
    "classify_outcome",
    "counted",
    "evaluate",
    "fit_eigenfaces",
    "fit_linear_decoder",
    "gallery_stats",
    "hold_out_probes",
    "load_gallery",
    "make_synthetic_gallery",
    "price_queries",
    "price_storage",
    "query_topk",
    "reconstruct_batch",
    "split_gallery",
    "subsample_identities",
    "sweep",
    "training_queries",
    "transfer_grid",
]
