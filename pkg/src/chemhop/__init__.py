"""chemhop: knowledge-graph construction from chemistry text, multi-hop QA
generation over sampled graph paths, and an LLM evaluation harness."""

__version__ = "0.1.0"

from .entities import Entity, EntitySpan
from .enrich import CompoundProfile, EnrichmentRecord
from .evalharness import DatasetStats, EvalRecord, EvalSetup, Report
from .gateway import ChatRequest, ChatResponse, LlmGateway
from .graph import GraphStats, KnowledgeGraph
from .ingest import Chunk, Document
from .qagen import MultiHopQA, OneHopQA
from .relations import Triplet
from .sampler import PathSample
from .verify import Verdict

__all__ = [
    "ChatRequest",
    "ChatResponse",
    "Chunk",
    "CompoundProfile",
    "DatasetStats",
    "Document",
    "EnrichmentRecord",
    "Entity",
    "EntitySpan",
    "EvalRecord",
    "EvalSetup",
    "GraphStats",
    "KnowledgeGraph",
    "LlmGateway",
    "MultiHopQA",
    "OneHopQA",
    "PathSample",
    "Report",
    "Triplet",
    "Verdict",
]
