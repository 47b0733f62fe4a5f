"""In-memory audit sessions with idle expiry."""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from ..ranking import RankedAnswerList
from ..reasoner import AnswerScoreDetail, PairFeature


@dataclass
class CachedAnswer:
    detail: AnswerScoreDetail
    mask: set[int] = field(default_factory=set)

    def masked_detail(self) -> AnswerScoreDetail:
        """The cached features with the current audit mask NULLed in."""
        features = [PairFeature(None) if i in self.mask else f
                    for i, f in enumerate(self.detail.features)]
        return AnswerScoreDetail(self.detail.answer_id, self.detail.logit,
                                 self.detail.prob, features)


@dataclass
class Session:
    session_id: str
    query: str
    k: int
    c: float
    ranking: RankedAnswerList
    answers: dict[str, CachedAnswer]
    created: float
    last_used: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    def __init__(self, ttl_seconds: float = 1800.0, clock=time.monotonic):
        self.ttl = ttl_seconds
        self._clock = clock
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, query: str, k: int, c: float, ranking: RankedAnswerList,
               details: dict[str, AnswerScoreDetail]) -> Session:
        now = self._clock()
        session = Session(
            session_id=uuid.uuid4().hex, query=query, k=k, c=c, ranking=ranking,
            answers={a: CachedAnswer(d) for a, d in details.items()},
            created=now, last_used=now)
        with self._lock:
            self._purge(now)
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session | None:
        now = self._clock()
        with self._lock:
            self._purge(now)
            session = self._sessions.get(session_id)
            if session is not None:
                session.last_used = now
            return session

    def _purge(self, now: float) -> None:
        dead = [sid for sid, s in self._sessions.items()
                if now - s.last_used > self.ttl]
        for sid in dead:
            del self._sessions[sid]

    def __len__(self) -> int:
        return len(self._sessions)
