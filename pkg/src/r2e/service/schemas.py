"""Request/response models for the HTTP API."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class RankRequest(BaseModel):
    query: str
    k: int | None = Field(default=None, ge=1)
    c: float | None = None
    top_n: int | None = Field(default=None, ge=1)


class AnswerScore(BaseModel):
    answer_id: str
    logit: float
    prob: float
    f_c: float
    corrected_logit: float
    rank: int


class RankResponse(BaseModel):
    session_id: str
    query: str
    k: int
    c: float
    ordering: Literal["corrected", "raw"]
    answers: list[AnswerScore]


class ExplainRequest(BaseModel):
    session: str
    answer_id: str
    output_space: Literal["logit", "probability"] = "probability"
    m: int | None = Field(default=None, ge=1, alias="M")
    seed: int = 0

    model_config = {"populate_by_name": True}


class EvidenceAttribution(BaseModel):
    index: int
    passage_id: str
    text: str
    doc_id: str
    year: int
    source: str
    similarity: float
    shapley: float


class ExplainResponse(BaseModel):
    answer_id: str
    baseline: float
    total: float
    output_space: Literal["logit", "probability"]
    bias_term: float | None
    n_permutations: int | None
    evidence: list[EvidenceAttribution]


class AuditRequest(BaseModel):
    session: str
    answer_id: str
    masked_evidence: list[int]


class AuditResponse(BaseModel):
    answer_id: str
    masked_evidence: list[int]
    old_score: float
    new_score: float
    delta: float


class EvidenceHitModel(BaseModel):
    passage_id: str
    doc_id: str
    year: int
    source: str
    similarity: float
    text: str


class EvidenceResponse(BaseModel):
    answer_id: str
    query: str
    k: int
    hits: list[EvidenceHitModel]


class StatsResponse(BaseModel):
    answers: dict[str, int]
    splits: dict[str, int]
    index_checksum: str
    n_passages: int
    answer_set_size: int


class ErrorBody(BaseModel):
    code: str
    message: str
