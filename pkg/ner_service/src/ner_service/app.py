"""FastAPI application exposing the NER wire contract.

Endpoints:
    POST /ner    {"text": ...} -> {"spans": [{surface, start, end, score}]}
    GET  /health -> {"status": "ok", "model_id": ...}

Both return 503 until the model has loaded; /ner returns 413 when the text
exceeds the configured character cap. Offsets are character offsets into the
request text, and served spans are non-overlapping (longest match wins).
"""

from __future__ import annotations

import os
from contextlib import asynccontextmanager
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .models import build_model, resolve_overlaps

DEFAULT_MAX_CHARS = 4000


@dataclass
class Settings:
    model_spec: str = ""
    max_chars: int = DEFAULT_MAX_CHARS
    auto_load: bool = True

    def __post_init__(self):
        if not self.model_spec:
            self.model_spec = "lexicon:"  # bundled gazetteer

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            model_spec=os.environ.get("NER_MODEL", ""),
            max_chars=int(os.environ.get("NER_MAX_CHARS", DEFAULT_MAX_CHARS)),
        )


class NerRequest(BaseModel):
    text: str


def create_app(settings: Settings | None = None) -> FastAPI:
    settings = settings or Settings.from_env()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if settings.auto_load:
            app.state.load_model()
        yield

    app = FastAPI(title="ner-service", lifespan=lifespan)
    app.state.settings = settings
    app.state.model = None

    def load_model() -> None:
        app.state.model = build_model(settings.model_spec)

    app.state.load_model = load_model

    @app.get("/health")
    def health():
        if app.state.model is None:
            raise HTTPException(status_code=503, detail="model not ready")
        return {"status": "ok", "model_id": app.state.model.model_id}

    @app.post("/ner")
    def ner(request: NerRequest):
        if app.state.model is None:
            raise HTTPException(status_code=503, detail="model not ready")
        if len(request.text) > settings.max_chars:
            raise HTTPException(
                status_code=413,
                detail=f"text length {len(request.text)} exceeds cap {settings.max_chars}",
            )
        spans = resolve_overlaps(app.state.model.predict(request.text))
        for span in spans:  # contract: every surface indexes its substring
            assert request.text[span.start : span.end] == span.surface
        return {"spans": [s.to_json() for s in spans]}

    return app


def main() -> None:  # pragma: no cover - thin uvicorn runner
    import uvicorn

    host = os.environ.get("NER_HOST", "127.0.0.1")
    port = int(os.environ.get("NER_PORT", "8088"))
    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":  # pragma: no cover
    main()
