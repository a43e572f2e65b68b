"""FastAPI wire-protocol server around one checkpoint.

Endpoints: GET /v1/capabilities, POST /v1/next_word, /v1/segment,
/v1/distribution, /v1/hidden_state, /v1/count_tokens.  Requests are
serialized around the model with a lock; run one process per model and as
many processes side by side as needed.

Error mapping: context longer than --max-context -> 400; out-of-memory
-> 503; both with a structured {"error": {...}} body.
"""

from __future__ import annotations

import argparse
import threading
from typing import Optional

import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .model import ContextTooLong, ModelRunner


class ContextBody(BaseModel):
    context: str
    top_k: int = 5


class SegmentBody(BaseModel):
    context: str
    max_tokens: int


class TextBody(BaseModel):
    text: str


def create_app(model_id: str, device: str = "cpu",
               max_context: int = 2048) -> FastAPI:
    runner = ModelRunner(model_id, device=device, max_context=max_context)
    lock = threading.Lock()
    app = FastAPI(title="mentorcollab-adapter")

    def error(status: int, kind: str, message: str) -> JSONResponse:
        return JSONResponse(
            status_code=status,
            content={"error": {"kind": kind, "message": message}},
        )

    @app.exception_handler(ContextTooLong)
    async def _too_long(_req: Request, exc: ContextTooLong):
        return error(400, "context_too_long", str(exc))

    @app.exception_handler(torch.cuda.OutOfMemoryError)
    async def _oom(_req: Request, exc: Exception):
        return error(503, "out_of_memory", str(exc))

    @app.exception_handler(MemoryError)
    async def _mem(_req: Request, exc: Exception):
        return error(503, "out_of_memory", str(exc))

    @app.get("/v1/capabilities")
    def capabilities():
        return runner.capabilities()

    @app.post("/v1/next_word")
    def next_word(body: ContextBody):
        with lock:
            word, count, topk = runner.next_word(body.context, body.top_k)
        return {
            "word": word,
            "native_token_count": count,
            "topk": [{"token": e.token, "prob": e.prob} for e in topk],
        }

    @app.post("/v1/segment")
    def segment(body: SegmentBody):
        with lock:
            text, count = runner.segment(body.context, body.max_tokens)
        return {"text": text, "native_token_count": count}

    @app.post("/v1/distribution")
    def distribution(body: ContextBody):
        with lock:
            topk = runner.top_k(body.context, body.top_k)
        return {"topk": [{"token": e.token, "prob": e.prob} for e in topk]}

    @app.post("/v1/hidden_state")
    def hidden_state(body: ContextBody):
        with lock:
            vec = runner.hidden_state(body.context)
        return {"vector": vec, "dim": len(vec)}

    @app.post("/v1/count_tokens")
    def count_tokens(body: TextBody):
        with lock:
            return {"count": runner.count_tokens(body.text)}

    return app


def main(argv: Optional[list] = None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(description="serve one checkpoint over "
                                     "the decoding wire protocol")
    parser.add_argument("--model", required=True,
                        help="model id or local checkpoint directory")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-context", type=int, default=2048)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args(argv)
    app = create_app(args.model, device=args.device,
                     max_context=args.max_context)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
