"""Client for external backward reaction models.

The wire protocol is line-delimited JSON over standard streams or a TCP
socket: one request object per line, one response per line, UTF-8, ids
echoed back, reactions ordered by descending score.  The client keeps a
single request in flight and validates every response against the backward
model invariants before handing proposals to a search.
"""

from __future__ import annotations

import json
import os
import selectors
import socket
import subprocess
import threading
from typing import Sequence

from .errors import ProtocolError, RejectedProposalError, RemoteTimeoutError

Proposal = tuple[tuple[str, ...], float]


class _LineChannel:
    """Blocking line transport with a read deadline."""

    def send_line(self, line: bytes) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def recv_line(self, timeout: float) -> bytes:  # pragma: no cover - interface
        raise NotImplementedError

    def close(self) -> None:  # pragma: no cover - interface
        raise NotImplementedError


class _PipeChannel(_LineChannel):
    def __init__(self, proc: subprocess.Popen):
        self.proc = proc
        self._buffer = b""
        self._selector = selectors.DefaultSelector()
        self._selector.register(proc.stdout, selectors.EVENT_READ)

    def send_line(self, line: bytes) -> None:
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ProtocolError(f"model process closed its input: {exc}") from exc

    def recv_line(self, timeout: float) -> bytes:
        while b"\n" not in self._buffer:
            if not self._selector.select(timeout):
                raise RemoteTimeoutError(f"no response within {timeout} s")
            chunk = os.read(self.proc.stdout.fileno(), 65536)
            if not chunk:
                raise ProtocolError("model process closed its output")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line

    def close(self) -> None:
        self._selector.close()
        for stream in (self.proc.stdin, self.proc.stdout):
            if stream:
                stream.close()
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:  # pragma: no cover - last resort
            self.proc.kill()


class _SocketChannel(_LineChannel):
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buffer = b""

    def send_line(self, line: bytes) -> None:
        try:
            self.sock.sendall(line)
        except OSError as exc:
            raise ProtocolError(f"socket send failed: {exc}") from exc

    def recv_line(self, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        while b"\n" not in self._buffer:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise RemoteTimeoutError(f"no response within {timeout} s") from None
            if not chunk:
                raise ProtocolError("server closed the connection")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line

    def close(self) -> None:
        self.sock.close()


class RemoteBackwardModel:
    """Backward model served by an external process.

    Deterministic servers make this interchangeable with in-process models;
    every response is validated (id echo, score ordering and range, product
    not among reactants) before use.
    """

    def __init__(self, channel: _LineChannel, timeout: float = 30.0):
        self.channel = channel
        self.timeout = timeout
        self.call_count = 0
        self._next_id = 0
        self._lock = threading.Lock()  # one request in flight

    @classmethod
    def spawn(cls, argv: Sequence[str], timeout: float = 30.0) -> "RemoteBackwardModel":
        proc = subprocess.Popen(
            list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        return cls(_PipeChannel(proc), timeout=timeout)

    @classmethod
    def connect_tcp(cls, host: str, port: int,
                    timeout: float = 30.0) -> "RemoteBackwardModel":
        sock = socket.create_connection((host, port), timeout=timeout)
        return cls(_SocketChannel(sock), timeout=timeout)

    def close(self) -> None:
        self.channel.close()

    def __enter__(self) -> "RemoteBackwardModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def propose(self, molecule: str) -> list[Proposal]:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            payload = json.dumps(
                {"id": request_id, "molecule": molecule}, ensure_ascii=False
            )
            self.channel.send_line(payload.encode("utf8") + b"\n")
            raw = self.channel.recv_line(self.timeout)
        self.call_count += 1
        return self._parse_response(raw, request_id, molecule)

    @staticmethod
    def _parse_response(raw: bytes, request_id: int, molecule: str) -> list[Proposal]:
        try:
            doc = json.loads(raw.decode("utf8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"response is not a JSON line: {exc}") from exc
        if not isinstance(doc, dict):
            raise ProtocolError(f"response must be an object, got {type(doc).__name__}")
        if "error" in doc:
            raise ProtocolError(f"server error: {doc['error']}")
        if doc.get("id") != request_id:
            raise ProtocolError(
                f"response id {doc.get('id')!r} does not echo request id {request_id}"
            )
        reactions = doc.get("reactions")
        if not isinstance(reactions, list):
            raise ProtocolError("response lacks a 'reactions' list")
        proposals: list[Proposal] = []
        last_score = None
        for entry in reactions:
            if not isinstance(entry, dict):
                raise ProtocolError("each reaction must be an object")
            reactants = entry.get("reactants")
            score = entry.get("score")
            if (not isinstance(reactants, list) or not reactants
                    or not all(isinstance(r, str) and r for r in reactants)):
                raise ProtocolError(f"invalid reactant list {reactants!r}")
            if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
                raise ProtocolError(f"score {score!r} outside [0, 1]")
            if last_score is not None and score > last_score:
                raise ProtocolError("reactions are not ordered by descending score")
            last_score = score
            if molecule in reactants:
                raise RejectedProposalError(
                    f"server proposed {molecule!r} among its own reactants"
                )
            proposals.append((tuple(reactants), float(score)))
        return proposals
