"""On-disk memo of backend answers, shared across bench runs and sweeps."""

from __future__ import annotations

import hashlib
import json
import sqlite3
import threading
from pathlib import Path
from typing import Sequence

from zoomeye.oracle.base import OracleBackend, Prompt, YesNoLogits
from zoomeye.visual import VisualInput


class MemoStore:
    """A tiny key/value table in a sqlite file; safe to share between threads."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._db = sqlite3.connect(self.path, check_same_thread=False)
        self._db.execute("CREATE TABLE IF NOT EXISTS memo (key TEXT PRIMARY KEY, value TEXT NOT NULL)")
        self._db.commit()

    def get(self, key: str) -> str | None:
        with self._lock:
            row = self._db.execute("SELECT value FROM memo WHERE key = ?", (key,)).fetchone()
            if row is None:
                self.misses += 1
                return None
            self.hits += 1
            return row[0]

    def put(self, key: str, value: str) -> None:
        with self._lock:
            self._db.execute("INSERT OR REPLACE INTO memo (key, value) VALUES (?, ?)", (key, value))
            self._db.commit()

    def __len__(self) -> int:
        with self._lock:
            return self._db.execute("SELECT COUNT(*) FROM memo").fetchone()[0]

    def close(self) -> None:
        with self._lock:
            self._db.close()


def _view_key(visual_input: VisualInput | None) -> list | None:
    if visual_input is None:
        return None
    return [
        visual_input.source,
        list(visual_input.bbox.as_tuple()),
        visual_input.mode.value,
        [list(b.as_tuple()) for b in visual_input.paste_boxes or ()],
    ]


def _digest(*parts: object) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()


class CachingBackend:
    """Answer repeated queries from a :class:`MemoStore`.

    The key covers the wrapped backend's namespace, the image source id,
    the view box, the input mode and the exact prompt. Views without a
    source id bypass the cache since they cannot be told apart.
    """

    def __init__(self, backend: OracleBackend, store: MemoStore | str | Path):
        self.backend = backend
        self.store = store if isinstance(store, MemoStore) else MemoStore(store)

    @property
    def namespace(self) -> str:
        return getattr(self.backend, "cache_namespace", type(self.backend).__name__)

    @property
    def cache_namespace(self) -> str:
        return self.namespace

    def yes_no(self, visual_input: VisualInput, prompt: Prompt) -> YesNoLogits:
        if not visual_input.source:
            return self.backend.yes_no(visual_input, prompt)
        key = _digest("yes_no", self.namespace, _view_key(visual_input), prompt.kind.value, prompt.subject, prompt.text)
        hit = self.store.get(key)
        if hit is not None:
            z_yes, z_no = json.loads(hit)
            return YesNoLogits(z_yes, z_no)
        logits = self.backend.yes_no(visual_input, prompt)
        self.store.put(key, json.dumps([logits.z_yes, logits.z_no]))
        return logits

    def generate(
        self,
        visual_input: VisualInput | None,
        prompt: Prompt,
        history: Sequence[tuple[str, str]] = (),
    ) -> str:
        if visual_input is not None and not visual_input.source:
            return self.backend.generate(visual_input, prompt, history)
        key = _digest(
            "generate", self.namespace, _view_key(visual_input), prompt.kind.value, prompt.subject, prompt.text,
            [list(h) for h in history],
        )
        hit = self.store.get(key)
        if hit is not None:
            return json.loads(hit)
        text = self.backend.generate(visual_input, prompt, history)
        self.store.put(key, json.dumps(text))
        return text
