"""Remote denoiser bridge: newline-delimited JSON over stdio or TCP.

One JSON object per line.  The client opens with a handshake
``{"id": 0, "op": "hello", "d": ..., "m": ...}`` which the server must echo
with its own dimensions (and an optional ``"concurrent"`` flag); afterwards
each prediction is one request/response round trip with strictly increasing
ids:

    -> {"id": 7, "op": "predict_noise", "x": [...], "c": [...],
        "t": 840, "alpha_bar": 0.123}
    <- {"id": 7, "eps": [...]}            on success
    <- {"id": 7, "error": "message"}      on failure

Floats survive the trip exactly because JSON rendering uses shortest
round-trip representations, so a loopback server wrapping the in-process
oracle is observationally identical to calling it directly.
"""

from __future__ import annotations

import json
import queue
import socket
import subprocess
import threading
from typing import Sequence

import numpy as np

from .denoiser import ConditionEmbedding, Denoiser
from .errors import DenoiserError, ParameterError


class MalformedFrameError(DenoiserError):
    """A line on the wire was not a valid protocol object."""


class IdMismatchError(DenoiserError):
    """A response arrived with an id different from the pending request."""


class DimensionMismatchError(DenoiserError):
    """Handshake dimensions or a returned vector length did not match."""


class RemoteTimeoutError(DenoiserError):
    """No response arrived within the configured timeout."""


class TransportClosedError(DenoiserError):
    """The peer closed the stream while a response was pending."""


def serve_stream(denoiser: Denoiser, rfile, wfile) -> None:
    """Answer protocol requests on a line-oriented stream until EOF."""
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("frame must be an object")
        except ValueError:
            _send(wfile, {"id": None, "error": "malformed frame"})
            continue
        msg_id = msg.get("id")
        try:
            op = msg.get("op")
            if op == "hello":
                if int(msg["d"]) != denoiser.d or int(msg["m"]) != denoiser.m:
                    raise ValueError(
                        f"dimension mismatch: server has d={denoiser.d}, m={denoiser.m}")
                reply = {"id": msg_id, "op": "hello", "d": denoiser.d, "m": denoiser.m,
                         "concurrent": bool(denoiser.concurrent_safe)}
            elif op == "predict_noise":
                x = np.asarray(msg["x"], dtype=np.float64)
                c = ConditionEmbedding(np.asarray(msg["c"], dtype=np.float64))
                eps = denoiser.predict_noise(x, c, float(msg["alpha_bar"]), int(msg["t"]))
                reply = {"id": msg_id, "eps": [float(v) for v in eps]}
            else:
                raise ValueError(f"unknown op {op!r}")
        except Exception as err:
            reply = {"id": msg_id, "error": str(err)}
        _send(wfile, reply)


def _send(wfile, obj: dict) -> None:
    wfile.write(json.dumps(obj) + "\n")
    wfile.flush()


def serve_tcp(denoiser: Denoiser, host: str = "127.0.0.1", port: int = 0,
              ready: threading.Event | None = None,
              bound: list | None = None) -> None:
    """Serve one connection at a time; ``bound`` receives the listening port."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        if bound is not None:
            bound.append(server.getsockname()[1])
        if ready is not None:
            ready.set()
        while True:
            conn, _ = server.accept()
            with conn:
                rfile = conn.makefile("r", encoding="utf-8")
                wfile = conn.makefile("w", encoding="utf-8")
                serve_stream(denoiser, rfile, wfile)


class _SubprocessTransport:
    """Child process speaking the protocol on its standard streams."""

    def __init__(self, argv: Sequence[str]):
        self._proc = subprocess.Popen(
            list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def send_line(self, line: str) -> None:
        if self._proc.poll() is not None or self._proc.stdin is None:
            raise TransportClosedError("server process has exited")
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as err:
            raise TransportClosedError(f"server pipe closed: {err}") from err

    def recv_line(self, timeout: float) -> str:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise RemoteTimeoutError(f"no response within {timeout}s") from None
        if line is None:
            raise TransportClosedError("server closed its output stream")
        return line

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class _TcpTransport:
    """Protocol peer over a TCP connection."""

    def __init__(self, host: str, port: int, connect_timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._rfile = self._sock.makefile("r", encoding="utf-8")
        self._wfile = self._sock.makefile("w", encoding="utf-8")

    def send_line(self, line: str) -> None:
        try:
            self._wfile.write(line + "\n")
            self._wfile.flush()
        except OSError as err:
            raise TransportClosedError(f"connection closed: {err}") from err

    def recv_line(self, timeout: float) -> str:
        self._sock.settimeout(timeout)
        try:
            line = self._rfile.readline()
        except socket.timeout:
            raise RemoteTimeoutError(f"no response within {timeout}s") from None
        if line == "":
            raise TransportClosedError("server closed the connection")
        return line

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class RemoteDenoiser(Denoiser):
    """Denoiser implementation backed by a protocol peer.

    Requests are serialized (one in flight per connection); the instance
    declares itself concurrency-safe only if the server's handshake does.
    """

    def __init__(self, transport, d: int, m: int, timeout: float = 10.0):
        self._transport = transport
        self._timeout = timeout
        self._next_id = 0
        self._lock = threading.Lock()
        self.d = d
        self.m = m
        self.concurrent_safe = False
        reply = self._round_trip({"op": "hello", "d": d, "m": m})
        if reply.get("op") != "hello":
            raise MalformedFrameError(f"handshake reply missing op: {reply}")
        if int(reply["d"]) != d or int(reply["m"]) != m:
            raise DimensionMismatchError(
                f"server dimensions d={reply['d']}, m={reply['m']} do not match "
                f"requested d={d}, m={m}")
        self.concurrent_safe = bool(reply.get("concurrent", False))

    @classmethod
    def from_command(cls, argv: Sequence[str], d: int, m: int,
                     timeout: float = 10.0) -> "RemoteDenoiser":
        return cls(_SubprocessTransport(argv), d, m, timeout)

    @classmethod
    def from_address(cls, host: str, port: int, d: int, m: int,
                     timeout: float = 10.0) -> "RemoteDenoiser":
        return cls(_TcpTransport(host, port), d, m, timeout)

    def _round_trip(self, payload: dict) -> dict:
        with self._lock:
            msg_id = self._next_id
            self._next_id += 1
            request = {"id": msg_id, **payload}
            self._transport.send_line(json.dumps(request))
            line = self._transport.recv_line(self._timeout)
        try:
            reply = json.loads(line)
            if not isinstance(reply, dict):
                raise ValueError("reply must be an object")
        except ValueError as err:
            raise MalformedFrameError(f"unparseable reply {line!r}: {err}") from err
        if reply.get("id") != msg_id:
            raise IdMismatchError(
                f"expected reply id {msg_id}, got {reply.get('id')!r}")
        return reply

    def predict_noise(self, x: np.ndarray, c: ConditionEmbedding,
                      alpha_bar: float, t: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if c.values.size != self.m:
            raise ParameterError(
                f"condition has dimension {c.values.size}, expected {self.m}")
        reply = self._round_trip({
            "op": "predict_noise",
            "x": [float(v) for v in x],
            "c": [float(v) for v in c.values],
            "t": int(t),
            "alpha_bar": float(alpha_bar),
        })
        if "error" in reply:
            raise DenoiserError(f"server error at training step {t}: {reply['error']}")
        if not isinstance(reply.get("eps"), list):
            raise MalformedFrameError(f"reply carries no eps array: {reply}")
        eps = np.asarray(reply["eps"], dtype=np.float64)
        if eps.ndim != 1 or eps.size != x.size:
            raise DimensionMismatchError(
                f"server returned {eps.size} values at training step {t}, "
                f"expected {x.size}")
        return eps

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "RemoteDenoiser":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
