"""Run manifests: what a command ran with and what it produced."""
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
import hashlib
import json
from pathlib import Path
from typing import Optional, Union

from .const import LOGGER
from .types import JsonObject

MANIFEST_NAME = "manifest.json"


def canonical_json(document: JsonObject) -> str:
    """Key-sorted compact JSON, the form every config hash is taken over."""
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def content_hash(text: str) -> str:
    """Git blob hash (``sha1("blob <len>\\0" + content)``) of a UTF-8 text."""
    data = text.encode("utf-8")
    return hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()


def file_hash(path: Union[str, Path]) -> str:
    """SHA-256 of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Snapshot of one command invocation.

    Reruns with an identical ``config`` and ``seed`` reproduce identical
    artifacts; timestamps are informational only.
    """

    command: str
    config: JsonObject
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    config_hash: str = ""
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.config_hash:
            document = {"config": self.config, "seed": self.seed}
            self.config_hash = content_hash(canonical_json(document))

    @property
    def run_name(self) -> str:
        """Directory name derived from the command and the config hash."""
        return f"{self.command}-{self.config_hash[:12]}"

    def finish(self) -> None:
        self.finished_at = _now()

    def write(self, run_dir: Union[str, Path]) -> Path:
        """Write ``manifest.json`` into the run directory, replacing any old one."""
        target = Path(run_dir) / MANIFEST_NAME
        target.parent.mkdir(parents=True, exist_ok=True)
        document = json.dumps(asdict(self), indent=2, sort_keys=True)
        target.write_text(document, encoding="utf-8")
        LOGGER.debug("Wrote manifest %s", target)
        return target

    @classmethod
    def read(cls, run_dir: Union[str, Path]) -> "RunManifest":
        document = (Path(run_dir) / MANIFEST_NAME).read_text(encoding="utf-8")
        return cls(**json.loads(document))
