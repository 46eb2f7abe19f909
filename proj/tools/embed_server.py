"""Embedding provider for live evaluation.

Serves the lastmile embedding protocol on top of sentence-transformers:

  POST /embed   {"model": str, "texts": [str]} -> {"model", "dimension", "vectors"}
  GET  /health  -> {"status": "ok", "model": str}

Usage:
  python3 tools/embed_server.py --port 8091
  LASTMILE_EMBED_URL=http://127.0.0.1:8091 build/tests/acceptance
"""
import argparse
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from sentence_transformers import SentenceTransformer

DEFAULT_MODEL = "paraphrase-multilingual-MiniLM-L12-v2"


def make_handler(model_name: str, model: SentenceTransformer):
    class Handler(BaseHTTPRequestHandler):
        def _reply(self, status: int, payload: dict) -> None:
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path.rstrip("/").endswith("/health"):
                self._reply(200, {"status": "ok", "model": model_name})
            else:
                self._reply(404, {"error": "no such route"})

        def do_POST(self):
            if not self.path.rstrip("/").endswith("/embed"):
                return self._reply(404, {"error": "no such route"})
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                texts = body["texts"]
                if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
                    raise ValueError("texts must be a list of strings")
            except (ValueError, KeyError, TypeError) as exc:
                return self._reply(400, {"error": str(exc)})
            requested = body.get("model", model_name)
            if requested != model_name:
                return self._reply(400, {"error": f"unknown model '{requested}'"})
            vectors = model.encode(texts, convert_to_numpy=True).tolist() if texts else []
            dim = len(vectors[0]) if vectors else model.get_sentence_embedding_dimension()
            self._reply(200, {"model": model_name, "dimension": dim, "vectors": vectors})

        def log_message(self, fmt, *args):
            pass

    return Handler


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8091)
    parser.add_argument("--model", default=DEFAULT_MODEL)
    args = parser.parse_args()
    model = SentenceTransformer(f"sentence-transformers/{args.model}")
    server = ThreadingHTTPServer((args.host, args.port), make_handler(args.model, model))
    print(f"serving {args.model} on http://{args.host}:{args.port}", flush=True)
    server.serve_forever()


if __name__ == "__main__":
    main()
