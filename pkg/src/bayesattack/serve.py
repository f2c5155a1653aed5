"""Loopback HTTP server exposing any TargetModel over the query protocol."""

from __future__ import annotations

import json
import threading

from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .models import TargetModel


def _make_handler(model: TargetModel, quiet: bool):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            if not quiet:
                super().log_message(fmt, *args)

        def _reply(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path.rstrip("/") != "/query" and self.path != "/query":
                self._reply(404, {"error": f"unknown path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length).decode("utf-8"))
                shape = tuple(int(s) for s in body["shape"])
                flat = np.asarray(body["image"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                self._reply(400, {"error": f"malformed request: {exc}"})
                return
            if len(shape) != 3 or flat.ndim != 1 or flat.shape[0] != int(np.prod(shape)):
                self._reply(400, {"error": f"shape {shape} does not match {flat.shape[0]} pixels"})
                return
            expected = getattr(model, "input_shape", None)
            if expected is not None and shape != tuple(expected):
                self._reply(400, {"error": f"model expects input shape {tuple(expected)}"})
                return
            try:
                log_probs = model.query(flat.reshape(shape))
            except Exception as exc:  # surface model errors as protocol errors
                self._reply(400, {"error": f"model rejected the query: {exc}"})
                return
            self._reply(200, {"log_probs": np.asarray(log_probs, dtype=np.float64).tolist()})

    return Handler


class ModelServer:
    """Serve a model on loopback; use as a context manager in tests."""

    def __init__(self, model: TargetModel, host: str = "127.0.0.1", port: int = 0,
                 quiet: bool = True):
        self._server = ThreadingHTTPServer((host, port), _make_handler(model, quiet))
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> str:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self.url

    def stop(self) -> None:
        self._server.shutdown()
        if self._thread is not None:
            self._thread.join()
        self._server.server_close()

    def serve_forever(self) -> None:
        try:
            self._server.serve_forever()
        finally:
            self._server.server_close()

    def __enter__(self) -> "ModelServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
