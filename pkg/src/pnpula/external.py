"""Wire protocol for out-of-process denoisers.

Request:  ``PNPD`` | u8 version (=1) | u32 height | u32 width | f64 eps | h*w f64 pixels
Response: ``PNPR`` | u8 status (0 = ok) | h*w f64 pixels

All integers and floats little-endian. One synchronous request per chain step.
The transport is a byte stream: a child process's stdin/stdout or a TCP socket.

Run ``python -m pnpula.external --kind gaussian`` for a reference server.
"""
import argparse
import os
import selectors
import socket
import struct
import subprocess
import sys

import numpy as np

from .denoisers import Denoiser, GaussianDenoiser, _check_eps
from .errors import TransportError

REQUEST_MAGIC = b"PNPD"
RESPONSE_MAGIC = b"PNPR"
VERSION = 1
_REQ_HEADER = struct.Struct("<4sBIId")
_RESP_HEADER = struct.Struct("<4sB")


def encode_request(x, eps):
    x = np.asarray(x, dtype=np.float64)
    h, w = (1, x.size) if x.ndim < 2 else x.shape
    return _REQ_HEADER.pack(REQUEST_MAGIC, VERSION, h, w, float(eps)) + np.ascontiguousarray(x, "<f8").tobytes()


def encode_response(pixels, status=0):
    body = b"" if pixels is None else np.ascontiguousarray(pixels, "<f8").tobytes()
    return _RESP_HEADER.pack(RESPONSE_MAGIC, status) + body


def _read_exact(read, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = read(n - len(buf))
        if not chunk:
            raise TransportError(f"stream closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def read_request(read):
    """Parse one request from a ``read(n)`` callable; ``None`` on clean EOF."""
    first = read(1)
    if not first:
        return None
    head = first + _read_exact(read, _REQ_HEADER.size - 1)
    magic, version, h, w, eps = _REQ_HEADER.unpack(head)
    if magic != REQUEST_MAGIC or version != VERSION:
        raise TransportError(f"bad request header {magic!r} v{version}")
    body = _read_exact(read, 8 * h * w)
    return np.frombuffer(body, "<f8").reshape(h, w).astype(np.float64), eps


class _PipeChannel:
    def __init__(self, command, timeout):
        self.timeout = timeout
        self.proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     stderr=subprocess.PIPE)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)

    def send(self, data):
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"denoiser process unavailable: {exc}") from exc

    def read(self, n):
        if not self._sel.select(self.timeout):
            raise TransportError(f"no response within {self.timeout}s")
        return os.read(self.proc.stdout.fileno(), n)

    def close(self):
        self._sel.close()
        for f in (self.proc.stdin, self.proc.stdout, self.proc.stderr):
            try:
                f.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class _SocketChannel:
    def __init__(self, address, timeout):
        try:
            self.sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {address}: {exc}") from exc

    def send(self, data):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(str(exc)) from exc

    def read(self, n):
        try:
            return self.sock.recv(n)
        except socket.timeout as exc:
            raise TransportError("socket read timed out") from exc

    def close(self):
        self.sock.close()


class ExternalDenoiser(Denoiser):
    """Client side of the protocol.

    Exactly one of ``command`` (argv of a server process) or ``address``
    (``(host, port)``) must be given. ``lipschitz`` is the user-declared
    residual bound; it cannot be certified, only refuted by probing.
    """

    kind = "external"

    def __init__(self, command=None, address=None, lipschitz=1.0, timeout=30.0):
        if (command is None) == (address is None):
            raise ValueError("give exactly one of command or address")
        self._declared = float(lipschitz)
        self.endpoint = command if command is not None else address
        if command is not None:
            self._chan = _PipeChannel(list(command), timeout)
        else:
            self._chan = _SocketChannel(tuple(address), timeout)

    def denoise(self, x, eps):
        _check_eps(eps)
        x = np.asarray(x, dtype=np.float64)
        self._chan.send(encode_request(x, eps))
        head = _read_exact(self._chan.read, _RESP_HEADER.size)
        magic, status = _RESP_HEADER.unpack(head)
        if magic != RESPONSE_MAGIC:
            raise TransportError(f"bad response magic {magic!r} from {self.endpoint}")
        if status != 0:
            raise TransportError(f"denoiser {self.endpoint} returned status {status}")
        body = _read_exact(self._chan.read, 8 * x.size)
        return np.frombuffer(body, "<f8").astype(np.float64).reshape(x.shape)

    def lipschitz(self, eps):
        return self._declared

    def close(self):
        self._chan.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_denoise(endpoint, x, eps):
    return endpoint.denoise(x, eps)


def serve(fn, read, write, fault=None):
    """Answer requests until EOF. ``fn(x, eps)`` returns the denoised image.

    ``fault="truncate"`` sends half a response and stops (for testing clients).
    """
    while True:
        req = read_request(read)
        if req is None:
            return
        x, eps = req
        out = encode_response(fn(x, eps))
        if fault == "truncate":
            write(out[: len(out) // 2])
            return
        write(out)


def main(argv=None):
    p = argparse.ArgumentParser(description="reference denoiser server on stdin/stdout")
    p.add_argument("--kind", choices=["echo", "gaussian"], default="echo")
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--fault", choices=["truncate"], default=None)
    args = p.parse_args(argv)
    if args.kind == "echo":
        def fn(x, eps):
            return x
    else:
        fn = GaussianDenoiser(args.mean, args.variance).denoise
    out = sys.stdout.buffer

    def write(b):
        out.write(b)
        out.flush()

    serve(fn, sys.stdin.buffer.read1, write, fault=args.fault)


if __name__ == "__main__":
    main()
