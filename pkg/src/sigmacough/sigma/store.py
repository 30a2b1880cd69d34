"""Content-addressed sample store with an append-only index and daily exports.

Layout under ``root``::

    index.jsonl                      one published record per line
    store/<id[:2]>/<id>/audio.wav    normalized 16 kHz mono PCM
    store/<id[:2]>/<id>/meta.json
    tmp/                             staging area, wiped on open

A record becomes visible only when its index line is appended, which happens
after its directory has been renamed into place. Anything else found on
open (staging leftovers, directories without an index line, a torn final
index line) is discarded.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import io
import json
import os
import shutil
import tarfile
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

from ..audio import AudioError, normalize, parse_wav, write_wav
from .deid import validate_deidentification

KINDS = ("cough", "digits", "om")
MIN_DURATION_S, MAX_DURATION_S = 1.0, 60.0
TARGET_WINDOW_S = (10.0, 14.0)
LICENSE_ID = "CC-BY-4.0"
LICENSE_TEXT = (
    "Audio recordings and metadata in this bundle are released under the\n"
    "Creative Commons Attribution 4.0 International license (CC-BY-4.0).\n"
    "https://creativecommons.org/licenses/by/4.0/legalcode\n"
)


class StoreError(Exception):
    status = 400


class InvalidKind(StoreError):
    pass


class InvalidAudio(StoreError):
    pass


class DurationOutOfRange(StoreError):
    status = 422


class DeidViolations(StoreError):
    status = 422

    def __init__(self, violations):
        super().__init__(f"{len(violations)} de-identification violation(s)")
        self.violations = list(violations)


class StorageUnavailable(Exception):
    pass


@dataclass
class IngestResult:
    sample_id: str
    duplicate: bool
    duration_s: float
    duration_warning: bool


@dataclass
class ExportBundle:
    date: str
    manifest: dict
    manifest_bytes: bytes
    tar_bytes: bytes
    empty: bool


def utc_now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


def format_ts(ts: dt.datetime) -> str:
    return ts.astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def content_id(kind: str, audio_bytes: bytes, metadata: dict) -> str:
    """sha256 over length-prefixed kind, canonical metadata and canonical audio."""
    h = hashlib.sha256(b"sigma-sample/1\0")
    for part in (kind.encode(), canonical_json(metadata), audio_bytes):
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    return h.hexdigest()


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def _write_synced(path: Path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())


class SampleStore:
    def __init__(self, root, region_allowlist=(), clock=utc_now):
        self.root = Path(root)
        self.region_allowlist = frozenset(region_allowlist)
        self.clock = clock
        self._lock = threading.Lock()
        try:
            for sub in ("store", "tmp"):
                (self.root / sub).mkdir(parents=True, exist_ok=True)
            self._index_path = self.root / "index.jsonl"
            self._index_path.touch(exist_ok=True)
        except OSError as exc:
            raise StorageUnavailable(f"cannot use storage root {self.root}: {exc}") from exc
        self._entries: dict = {}
        self._recover()
        self._index = open(self._index_path, "ab")

    # -- startup -----------------------------------------------------------------

    def _recover(self) -> None:
        raw = self._index_path.read_bytes()
        good_len = 0
        for line in raw.split(b"\n")[:-1]:
            try:
                entry = json.loads(line)
                sid = entry["sample_id"]
            except (ValueError, KeyError, TypeError):
                break
            if not (self._record_dir(sid) / "meta.json").exists():
                break
            self._entries[sid] = entry
            good_len += len(line) + 1
        if good_len != len(raw):
            with open(self._index_path, "r+b") as fh:
                fh.truncate(good_len)
                fh.flush()
                os.fsync(fh.fileno())
        shutil.rmtree(self.root / "tmp", ignore_errors=True)
        (self.root / "tmp").mkdir(exist_ok=True)
        for shard in sorted((self.root / "store").iterdir()):
            for rec in sorted(shard.iterdir()):
                if rec.name not in self._entries:
                    shutil.rmtree(rec, ignore_errors=True)

    def _record_dir(self, sample_id: str) -> Path:
        return self.root / "store" / sample_id[:2] / sample_id

    # -- ingestion ---------------------------------------------------------------

    def ingest(self, kind: str, audio_bytes: bytes, raw_metadata) -> IngestResult:
        if kind not in KINDS:
            raise InvalidKind(f"kind must be one of {', '.join(KINDS)}")
        metadata, violations = validate_deidentification(raw_metadata, self.region_allowlist)
        try:
            clip = normalize(parse_wav(audio_bytes))
        except AudioError as exc:
            raise InvalidAudio(str(exc)) from None
        if violations:
            raise DeidViolations(violations)
        duration = clip.duration
        if not MIN_DURATION_S <= duration <= MAX_DURATION_S:
            raise DurationOutOfRange(
                f"duration {duration:.3f} s outside {MIN_DURATION_S:g}-{MAX_DURATION_S:g} s")
        warning = not TARGET_WINDOW_S[0] <= duration <= TARGET_WINDOW_S[1]
        canonical_audio = write_wav(clip)
        meta_dict = metadata.to_dict()
        sid = content_id(kind, canonical_audio, meta_dict)

        with self._lock:
            if sid in self._entries:
                return IngestResult(sid, True, duration, warning)
            received_at = format_ts(self.clock())
            record = {"sample_id": sid, "kind": kind, "received_at": received_at,
                      "duration_s": duration, "duration_warning": warning, "metadata": meta_dict}
            self._publish(sid, canonical_audio, record)
            self._entries[sid] = {"sample_id": sid, "kind": kind, "received_at": received_at}
        return IngestResult(sid, False, duration, warning)

    def _publish(self, sid: str, audio: bytes, record: dict) -> None:
        staging = self.root / "tmp" / uuid.uuid4().hex
        staging.mkdir()
        _write_synced(staging / "audio.wav", audio)
        _write_synced(staging / "meta.json", canonical_json(record) + b"\n")
        final = self._record_dir(sid)
        final.parent.mkdir(exist_ok=True)
        os.rename(staging, final)
        _fsync_dir(final.parent)
        line = canonical_json({"sample_id": sid, "kind": record["kind"],
                               "received_at": record["received_at"]}) + b"\n"
        self._index.write(line)
        self._index.flush()
        os.fsync(self._index.fileno())

    # -- reads -------------------------------------------------------------------

    def __contains__(self, sample_id) -> bool:
        return sample_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self) -> list:
        return list(self._entries)

    def get(self, sample_id: str) -> dict | None:
        if sample_id not in self._entries:
            return None
        return json.loads((self._record_dir(sample_id) / "meta.json").read_bytes())

    def audio(self, sample_id: str) -> bytes | None:
        if sample_id not in self._entries:
            return None
        return (self._record_dir(sample_id) / "audio.wav").read_bytes()

    # -- export ------------------------------------------------------------------

    def daily_export(self, date) -> ExportBundle:
        """Bundle every record received on the given UTC day.

        Output bytes depend only on the records, so re-exporting an
        unchanged day reproduces the same tar and manifest digest.
        """
        day = date if isinstance(date, str) else date.isoformat()
        dt.date.fromisoformat(day)
        with self._lock:
            snapshot = [e for e in self._entries.values() if e["received_at"][:10] == day]
        records = sorted((self.get(e["sample_id"]) for e in snapshot), key=lambda r: r["sample_id"])
        entries = [{"sample_id": r["sample_id"], "kind": r["kind"], "metadata": r["metadata"],
                    "received_at": r["received_at"], "duration_s": r["duration_s"],
                    "audio_path": f"audio/{r['sample_id']}.wav"} for r in records]
        body = {"date": day, "license_id": LICENSE_ID, "entries": entries}
        digest = hashlib.sha256(canonical_json(body)).hexdigest()
        manifest = dict(body, manifest_digest=digest, empty=not entries)
        manifest_bytes = (json.dumps(manifest, sort_keys=True, indent=1, ensure_ascii=False) + "\n").encode("utf-8")

        files = [("manifest.json", manifest_bytes), ("LICENSE.txt", LICENSE_TEXT.encode())]
        files += [(e["audio_path"], self.audio(e["sample_id"])) for e in entries]
        buf = io.BytesIO()
        with tarfile.open(fileobj=buf, mode="w", format=tarfile.USTAR_FORMAT) as tar:
            for name, data in files:
                info = tarfile.TarInfo(f"sigma-{day}/{name}")
                info.size = len(data)
                info.mtime = 0
                info.mode = 0o644
                info.uid = info.gid = 0
                info.uname = info.gname = ""
                tar.addfile(info, io.BytesIO(data))
        return ExportBundle(day, manifest, manifest_bytes, buf.getvalue(), not entries)

    def close(self) -> None:
        with self._lock:
            if not self._index.closed:
                self._index.flush()
                os.fsync(self._index.fileno())
                self._index.close()
