"""Chat-completions server exposing the toy student as a context compressor.

The pipeline's student strategy POSTs {system prompt, user payload} where the
user payload is "## NEXT_TASKS\n<tasks>\n## CONTEXT\n<rendered context>". The
server answers with a compressed rendered context. Decoding is constrained:
the context is split into candidate lines, each line is scored by the trained
LM as a continuation of the payload, and only high-scoring lines are kept in
a rebuilt context. Copying lines verbatim keeps the output well formed; the
model contributes the selection, which is the learned part.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch
import torch.nn.functional as F

from paace_trainer.model import TinyGPT
from paace_trainer.vocab import Vocab

SECTION_ORDER = (
    "SYSTEM", "PLAN", "INPUT", "MEMORY", "HISTORY", "OBSERVATIONS", "RETRIEVED",
)
_HEADER_RE = re.compile(r"^## ([A-Z_]+)$")
_VALUE_RE = re.compile(r"[Ss]tep\s+(\d+)\b.*?=>\s*(\S+)")
_CONTEXT_SPLIT = "\n## CONTEXT\n"


def split_compression_input(user_text: str) -> tuple[str, str]:
    """(upcoming-tasks text, rendered context text) from the wire payload."""
    head, sep, context = user_text.partition(_CONTEXT_SPLIT)
    if not sep:
        return "", user_text
    tasks = head.removeprefix("## NEXT_TASKS\n")
    return tasks, context


def parse_sections(context_text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {name: [] for name in SECTION_ORDER}
    current = "MEMORY"  # preamble and unknown headers fold into memory
    for line in context_text.splitlines():
        match = _HEADER_RE.match(line)
        if match and match.group(1) in sections:
            current = match.group(1)
            continue
        if line.strip():
            sections[current].append(line)
    return sections


def render_sections(sections: dict[str, list[str]]) -> str:
    parts = []
    for name in SECTION_ORDER:
        parts.append(f"## {name}")
        parts.extend(sections.get(name, []))
    return "\n".join(parts)


def canonical_value_line(line: str) -> str:
    match = _VALUE_RE.search(line)
    if match:
        return f"Step {match.group(1)} => {match.group(2)}"
    return line


class StudentCompressor:
    """Scores candidate context lines with the LM and keeps the top band."""

    def __init__(self, model: TinyGPT, vocab: Vocab) -> None:
        self.model = model
        self.vocab = vocab
        self._lock = threading.Lock()

    def _line_scores(self, prefix_text: str, lines: list[str]) -> list[float]:
        vocab = self.vocab
        encoded = [vocab.encode(line) or [vocab.unk_id] for line in lines]
        longest = max(len(ids) for ids in encoded)
        budget = self.model.cfg.max_len - longest - 2
        prefix = vocab.encode(prefix_text)
        prefix = prefix[max(0, len(prefix) - budget):]  # head-first truncation
        base = [vocab.bos_id] + prefix + [vocab.sep_id]
        width = len(base) + longest
        rows = torch.full((len(lines), width), vocab.pad_id, dtype=torch.long)
        for row, ids in enumerate(encoded):
            rows[row, : len(base)] = torch.tensor(base, dtype=torch.long)
            rows[row, len(base) : len(base) + len(ids)] = torch.tensor(
                ids, dtype=torch.long
            )
        with self._lock, torch.no_grad():
            self.model.eval()
            logits = self.model(rows[:, :-1])
            logprobs = F.log_softmax(logits, dim=-1)
        gathered = logprobs.gather(-1, rows[:, 1:].unsqueeze(-1)).squeeze(-1)
        scores = []
        start = len(base) - 1  # position predicting the first line token
        for row, ids in enumerate(encoded):
            span = gathered[row, start : start + len(ids)]
            scores.append(float(span.mean().item()))
        return scores

    def compress_text(self, user_text: str) -> str:
        tasks, context_text = split_compression_input(user_text)
        sections = parse_sections(context_text)
        candidates: list[tuple[str, str]] = []
        for name in ("INPUT", "MEMORY", "HISTORY", "OBSERVATIONS", "RETRIEVED"):
            for line in sections[name]:
                entry = canonical_value_line(line) if name == "HISTORY" else line
                candidates.append((name, entry))

        out = {name: [] for name in SECTION_ORDER}
        out["SYSTEM"] = list(sections["SYSTEM"])
        # The plan is dropped: the executor restates the current task each
        # turn, and the training targets never carry one.
        if len(candidates) <= 1:
            for name, entry in candidates:
                out[name].append(entry)
            return render_sections(out)

        scores = self._line_scores(user_text, [entry for _, entry in candidates])
        midpoint = (max(scores) + min(scores)) / 2.0
        for (name, entry), score in zip(candidates, scores):
            if score >= midpoint:
                out[name].append(entry)
        return render_sections(out)


class _Handler(BaseHTTPRequestHandler):
    compressor: StudentCompressor  # set by start_server

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        if self.path != "/chat/completions":
            self._reply(404, {"error": "unknown path"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length))
            messages = payload["messages"]
            user = next(m["content"] for m in reversed(messages) if m["role"] == "user")
            if not isinstance(user, str):
                raise TypeError("content must be a string")
        except (ValueError, KeyError, TypeError, StopIteration):
            self._reply(400, {"error": "malformed request"})
            return
        content = self.compressor.compress_text(user)
        self._reply(
            200,
            {
                "id": "student-1",
                "object": "chat.completion",
                "model": payload.get("model", ""),
                "choices": [
                    {
                        "index": 0,
                        "message": {"role": "assistant", "content": content},
                        "finish_reason": "stop",
                    }
                ],
                "usage": {
                    "prompt_tokens": len(user.split()),
                    "completion_tokens": len(content.split()),
                },
            },
        )

    def _reply(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args) -> None:  # silence request logging
        return


def start_server(
    model: TinyGPT, vocab: Vocab, host: str = "127.0.0.1", port: int = 0
) -> tuple[ThreadingHTTPServer, threading.Thread, str]:
    """Serve the student; returns (server, thread, base_url). Port 0 picks one."""
    compressor = StudentCompressor(model, vocab)
    handler = type("BoundHandler", (_Handler,), {"compressor": compressor})
    server = ThreadingHTTPServer((host, port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://{server.server_address[0]}:{server.server_address[1]}"
    return server, thread, url
