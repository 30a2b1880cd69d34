"""Line-oriented ``key = value`` config files shared by the CLI and the service."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


SERVICE_KEYS = {
    "bind_addr": "127.0.0.1:8080",
    "storage_root": "sigma-store",
    "region_allowlist": "",
    "rate_limit_per_hour": "60",
}
PIPELINE_KEYS = {
    "corpus_root": "",
    "checkpoint": "",
    "report_dir": "",
    "epochs": "",
    "learning_rate": "",
    "batch_size": "",
    "n_mel_filters": "",
    "n_coefficients": "",
    "knn_k": "",
    "n_trees": "",
}
KNOWN_KEYS = {**SERVICE_KEYS, **PIPELINE_KEYS}


def parse_config(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are an error."""
    out, unknown = {}, []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            unknown.append(key)
            continue
        out[key] = value
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return out


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def load_allowlist(path) -> list:
    """One region code per line; blank lines and ``#`` comments ignored."""
    if not path:
        return []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read region allowlist {path}: {exc}") from None
    return [ln.split("#", 1)[0].strip() for ln in lines if ln.split("#", 1)[0].strip()]


def parse_bind(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"bind_addr must look like host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)
