"""
Serve or consume a gradient oracle over stdin/stdout.

Every message is a frame: a little-endian u32 payload length followed by the
payload. Requests carry ``u8 op, u32 arg`` then the image as little-endian
float64 values in (i, j, c) order. Responses carry ``u8 status`` then either
float64 values (status 0) or a UTF-8 error message (status 1).

======  ==========  =========================================
op      arg         response floats
======  ==========  =========================================
0       unused      num_classes, M, N, C (no image sent)
1       unused      logits
2       label       cross-entropy, then input gradient
3       class k     input gradient of logit k
255     unused      none; server exits
======  ==========  =========================================
"""

import struct
import subprocess

import numpy as np

OP_INFO, OP_LOGITS, OP_LOSS_GRAD, OP_LOGIT_GRAD, OP_QUIT = 0, 1, 2, 3, 255
_REQ = struct.Struct("<BI")
_LEN = struct.Struct("<I")


class ProtocolError(RuntimeError):
    pass


def write_frame(stream, payload):
    stream.write(_LEN.pack(len(payload)) + payload)
    stream.flush()


def read_frame(stream):
    head = stream.read(_LEN.size)
    if not head:
        return None
    if len(head) != _LEN.size:
        raise ProtocolError("truncated frame header")
    (n,) = _LEN.unpack(head)
    payload = stream.read(n)
    if len(payload) != n:
        raise ProtocolError(f"truncated frame: expected {n} bytes, got {len(payload)}")
    return payload


def _floats(values):
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def serve(oracle, fin, fout):
    """Answer requests from binary stream `fin` on `fout` until EOF or quit."""
    d = int(np.prod(oracle.input_shape))
    while True:
        payload = read_frame(fin)
        if payload is None:
            return
        op, arg = _REQ.unpack_from(payload)
        if op == OP_QUIT:
            return
        try:
            if op == OP_INFO:
                out = [oracle.num_classes, *oracle.input_shape]
            else:
                x = np.frombuffer(payload, dtype="<f8", offset=_REQ.size)
                if x.size != d:
                    raise ValueError(f"expected {d} input values, got {x.size}")
                x = x.reshape(oracle.input_shape)
                if op == OP_LOGITS:
                    out = oracle.logits(x)
                elif op == OP_LOSS_GRAD:
                    loss, grad = oracle.loss_grad(x, arg)
                    out = np.concatenate([[loss], grad.reshape(-1)])
                elif op == OP_LOGIT_GRAD:
                    out = oracle.logit_grad(x, arg).reshape(-1)
                else:
                    raise ValueError(f"unknown op {op}")
            write_frame(fout, b"\x00" + _floats(out))
        except Exception as exc:  # reported to the client, server keeps running
            write_frame(fout, b"\x01" + str(exc).encode())


class ProcessOracle:
    """Gradient oracle backed by an external process speaking the frame protocol."""

    def __init__(self, command):
        self._proc = subprocess.Popen(command, stdin=subprocess.PIPE,
                                      stdout=subprocess.PIPE)
        info = self._call(OP_INFO, 0, None)
        self.num_classes = int(info[0])
        self.input_shape = tuple(int(v) for v in info[1:4])

    def _call(self, op, arg, x):
        body = _REQ.pack(op, arg) + (b"" if x is None else _floats(np.asarray(x).reshape(-1)))
        write_frame(self._proc.stdin, body)
        resp = read_frame(self._proc.stdout)
        if resp is None:
            raise ProtocolError("oracle process closed its output")
        if resp[:1] != b"\x00":
            raise ProtocolError(resp[1:].decode(errors="replace"))
        return np.frombuffer(resp, dtype="<f8", offset=1).copy()

    def logits(self, x):
        return self._call(OP_LOGITS, 0, x)

    def loss_grad(self, x, label):
        out = self._call(OP_LOSS_GRAD, label, x)
        return float(out[0]), out[1:].reshape(self.input_shape)

    def logit_grad(self, x, k):
        return self._call(OP_LOGIT_GRAD, k, x).reshape(self.input_shape)

    def close(self):
        if self._proc.poll() is None:
            try:
                write_frame(self._proc.stdin, _REQ.pack(OP_QUIT, 0))
                self._proc.stdin.close()
            except BrokenPipeError:
                pass
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
