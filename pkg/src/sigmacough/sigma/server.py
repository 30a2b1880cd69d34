"""HTTP/1.1 JSON front end for the sample store (stdlib ``http.server``).

Endpoints::

    POST /v1/samples                  multipart: audio (WAV), metadata (JSON), kind
    GET  /v1/samples/<id>             stored record as JSON
    GET  /v1/samples/<id>/audio       normalized WAV
    GET  /v1/export/<YYYY-MM-DD>      tar bundle for that UTC day
    GET  /v1/healthz
"""

from __future__ import annotations

import collections
import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from email import policy
from email.parser import BytesParser
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..config import load_allowlist, parse_bind
from .store import SampleStore, StoreError

log = logging.getLogger(__name__)

MAX_BODY = 64 * 1024 * 1024
SAMPLE_RE = re.compile(r"^/v1/samples/([0-9a-f]{64})(/audio)?$")
EXPORT_RE = re.compile(r"^/v1/export/(\d{4}-\d{2}-\d{2})$")


class BindFailure(OSError):
    pass


@dataclass
class ServiceConfig:
    bind_addr: str = "127.0.0.1:8080"
    storage_root: str = "sigma-store"
    region_allowlist: str = ""
    rate_limit_per_hour: int = 60

    @classmethod
    def from_mapping(cls, cfg: dict) -> "ServiceConfig":
        out = cls()
        for key in ("bind_addr", "storage_root", "region_allowlist"):
            if key in cfg:
                setattr(out, key, cfg[key])
        if "rate_limit_per_hour" in cfg:
            out.rate_limit_per_hour = int(cfg["rate_limit_per_hour"])
        return out


class RateLimiter:
    """Sliding one-hour window per client address; ``limit <= 0`` disables it."""

    def __init__(self, limit: int, window_s: float = 3600.0, clock=time.monotonic):
        self.limit = limit
        self.window = window_s
        self.clock = clock
        self._hits = collections.defaultdict(collections.deque)
        self._lock = threading.Lock()

    def allow(self, key: str) -> bool:
        if self.limit <= 0:
            return True
        now = self.clock()
        with self._lock:
            q = self._hits[key]
            while q and now - q[0] >= self.window:
                q.popleft()
            if len(q) >= self.limit:
                return False
            q.append(now)
            return True


def parse_multipart(content_type: str, body: bytes) -> dict:
    msg = BytesParser(policy=policy.HTTP).parsebytes(
        b"Content-Type: " + content_type.encode("latin-1") + b"\r\n\r\n" + body)
    if not msg.is_multipart():
        raise ValueError("expected multipart/form-data")
    parts = {}
    for part in msg.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if name:
            parts[name] = part.get_payload(decode=True) or b""
    return parts


class SigmaHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "sigma/1"

    @property
    def store(self) -> SampleStore:
        return self.server.store

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, content_type: str, extra=()):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for k, v in extra:
            self.send_header(k, v)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _json(self, status: int, obj, extra=()):
        self._send(status, (json.dumps(obj, sort_keys=True) + "\n").encode(), "application/json", extra)

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path == "/v1/healthz":
            return self._json(200, {"status": "ok", "records": len(self.store)})
        m = SAMPLE_RE.match(path)
        if m:
            sid, audio = m.group(1), m.group(2)
            if audio:
                data = self.store.audio(sid)
                if data is None:
                    return self._json(404, {"error": "not found"})
                return self._send(200, data, "audio/wav")
            rec = self.store.get(sid)
            if rec is None:
                return self._json(404, {"error": "not found"})
            return self._json(200, rec)
        m = EXPORT_RE.match(path)
        if m:
            try:
                bundle = self.store.daily_export(m.group(1))
            except ValueError:
                return self._json(400, {"error": "invalid date"})
            return self._send(200, bundle.tar_bytes, "application/x-tar", [
                ("Content-Disposition", f'attachment; filename="sigma-{bundle.date}.tar"'),
                ("X-Manifest-Digest", bundle.manifest["manifest_digest"]),
                ("X-Export-Empty", "true" if bundle.empty else "false"),
            ])
        return self._json(404, {"error": "not found"})

    def do_POST(self):
        path = self.path.split("?", 1)[0]
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            self.close_connection = True
            return self._json(413, {"error": "body too large"})
        body = self.rfile.read(length) if length else b""
        if path != "/v1/samples":
            return self._json(404, {"error": "not found"})
        if not self.server.limiter.allow(self.client_address[0]):
            return self._json(429, {"error": "rate limit exceeded"})
        try:
            parts = parse_multipart(self.headers.get("Content-Type", ""), body)
            audio, meta_raw = parts["audio"], parts["metadata"]
            kind = parts["kind"].decode("utf-8").strip()
            metadata = json.loads(meta_raw)
        except (KeyError, ValueError, UnicodeDecodeError) as exc:
            return self._json(400, {"error": f"malformed submission: {exc}"})
        try:
            res = self.store.ingest(kind, audio, metadata)
        except StoreError as exc:
            payload = {"error": type(exc).__name__, "detail": str(exc)}
            if hasattr(exc, "violations"):
                payload["violations"] = [v.to_dict() for v in exc.violations]
            return self._json(exc.status, payload)
        status = 200 if res.duplicate else 201
        return self._json(status, {"sample_id": res.sample_id, "duplicate": res.duplicate,
                                   "duration_s": res.duration_s, "duration_warning": res.duration_warning})


class SigmaServer(ThreadingHTTPServer):
    daemon_threads = False
    block_on_close = True

    def __init__(self, address, store: SampleStore, limiter: RateLimiter):
        self.store = store
        self.limiter = limiter
        try:
            super().__init__(address, SigmaHandler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {address[0]}:{address[1]}: {exc}") from exc

    def shutdown_gracefully(self):
        """Stop accepting, wait for in-flight requests, then flush the index."""
        self.shutdown()
        self.server_close()
        self.store.close()


def make_server(config: ServiceConfig, clock=None) -> SigmaServer:
    host, port = parse_bind(config.bind_addr)
    kwargs = {} if clock is None else {"clock": clock}
    store = SampleStore(config.storage_root, load_allowlist(config.region_allowlist), **kwargs)
    try:
        return SigmaServer((host, port), store, RateLimiter(config.rate_limit_per_hour))
    except BindFailure:
        store.close()
        raise


def serve(config: ServiceConfig) -> SigmaServer:
    """Start serving on a background thread and return the server."""
    server = make_server(config)
    threading.Thread(target=server.serve_forever, name="sigma-http", daemon=True).start()
    return server
