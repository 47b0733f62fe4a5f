"""HTTP facade over ranking, explanation, and audit rescoring.

Models and index load once and stay immutable; only the session store
mutates. Errors are JSON {code, message}; malformed bodies map to 400 and
out-of-range audit indices to 422.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .. import reasoner as R
from ..pipeline import Defaults, ModelBundle
from . import schemas as S
from .config import ServiceConfig
from .sessions import SessionStore


def _error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status,
                         detail={"code": code, "message": message})


def create_app(bundle: ModelBundle | None = None,
               config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="evidence-ranked cloze answering")

    if bundle is None:
        try:
            bundle = ModelBundle.load(
                config.corpus_dir, config.retriever_dir, config.reasoner_dir,
                config.index_path,
                defaults=Defaults(config.default_k, config.default_c,
                                  config.default_m),
                dtype=np.float64 if config.precision == "f64" else np.float32)
        except Exception:
            bundle = None  # surface as 503 per endpoint

    app.state.bundle = bundle
    app.state.sessions = SessionStore(config.session_ttl_seconds)
    app.state.config = config

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={
            "code": "bad_request", "message": str(exc.errors()[:3])})

    @app.exception_handler(HTTPException)
    async def structured_error(request: Request, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else {
            "code": "error", "message": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    def need_bundle() -> ModelBundle:
        if app.state.bundle is None:
            raise _error(503, "models_not_loaded",
                         "model artifacts are not available")
        return app.state.bundle

    def need_session(session_id: str):
        session = app.state.sessions.get(session_id)
        if session is None:
            raise _error(404, "unknown_session",
                         f"session {session_id!r} does not exist or expired")
        return session

    @app.post("/rank", response_model=S.RankResponse)
    def rank(req: S.RankRequest):
        b = need_bundle()
        if not req.query.strip():
            raise _error(400, "empty_query", "query text is empty")
        c = b.defaults.c if req.c is None else req.c
        if not 0.0 <= c <= 1.0:
            raise _error(400, "invalid_parameter", "c must lie in [0, 1]")
        k = req.k or b.defaults.k
        ranking, details = b.rank(req.query, k=k, c=c)
        session = app.state.sessions.create(req.query, k, c, ranking, details)
        entries = sorted(ranking.entries, key=lambda e: e.rank)
        if req.top_n is not None:
            entries = entries[:req.top_n]
        return S.RankResponse(
            session_id=session.session_id, query=req.query, k=k, c=c,
            ordering=ranking.ordering,
            answers=[S.AnswerScore(answer_id=e.answer_id, logit=e.logit,
                                   prob=e.prob, f_c=e.f_c,
                                   corrected_logit=e.corrected_logit,
                                   rank=e.rank) for e in entries])

    @app.post("/explain", response_model=S.ExplainResponse)
    def explain(req: S.ExplainRequest):
        b = need_bundle()
        session = need_session(req.session)
        cached = session.answers.get(req.answer_id)
        if cached is None:
            raise _error(404, "unknown_answer",
                         f"answer {req.answer_id!r} not scored in this session")
        with session.lock:
            detail = cached.masked_detail()
        result = b.explain(detail, output_space=req.output_space,
                           m_permutations=req.m, seed=req.seed, c=session.c)
        return S.ExplainResponse(**b.explain_payload(detail, result))

    @app.post("/audit", response_model=S.AuditResponse)
    def audit(req: S.AuditRequest):
        b = need_bundle()
        session = need_session(req.session)
        cached = session.answers.get(req.answer_id)
        if cached is None:
            raise _error(404, "unknown_answer",
                         f"answer {req.answer_id!r} not scored in this session")
        k = len(cached.detail.features)
        bad = [i for i in req.masked_evidence if not 0 <= i < k]
        if bad:
            raise _error(422, "index_out_of_range",
                         f"evidence indices out of range: {bad}")
        with session.lock:
            cached.mask = set(req.masked_evidence)
            _, new_prob = R.audit_rescore(cached.detail, sorted(cached.mask),
                                          b.reasoner)
        return S.AuditResponse(
            answer_id=req.answer_id,
            masked_evidence=sorted(cached.mask),
            old_score=cached.detail.prob,
            new_score=new_prob,
            delta=new_prob - cached.detail.prob)

    @app.get("/answers/{answer_id}/evidence", response_model=S.EvidenceResponse)
    def evidence(answer_id: str, query: str, k: int | None = None,
                 year_max: int | None = None):
        b = need_bundle()
        if answer_id not in b.index:
            raise _error(404, "unknown_answer",
                         f"answer {answer_id!r} has no evidence partition")
        hits = b.evidence_for(answer_id, query, k=k, year_max=year_max)
        return S.EvidenceResponse(
            answer_id=answer_id, query=query, k=k or b.defaults.k,
            hits=[S.EvidenceHitModel(
                passage_id=h.ref.passage_id, doc_id=h.ref.doc_id,
                year=h.ref.year, source=h.ref.source, similarity=h.similarity,
                text=(b.passages.get(h.ref.passage_id).masked_text
                      if h.ref.passage_id in b.passages else ""))
                for h in hits])

    @app.get("/corpus/stats", response_model=S.StatsResponse)
    def stats():
        return S.StatsResponse(**need_bundle().stats())

    if config.static_dir:
        app.mount("/ui", StaticFiles(directory=config.static_dir, html=True),
                  name="ui")

    return app
