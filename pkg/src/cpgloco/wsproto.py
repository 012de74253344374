"""Minimal RFC 6455 WebSocket framing over blocking sockets.

Server side only accepts masked client frames (per the RFC) and sends
unmasked text frames.  Enough of the protocol for a loopback teleoperation
link: text, ping/pong, close.  A tiny client implementation is included for
tests and scripting.
"""

import base64
import hashlib
import os
import socket
import struct

GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_TEXT = 0x1
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class SocketClosed(ConnectionError):
    pass


class BufferedSocket:
    """Socket wrapper that replays bytes overread during the HTTP phase."""

    def __init__(self, sock, leftover=b""):
        self.sock = sock
        self.leftover = leftover

    def recv(self, n):
        if self.leftover:
            chunk, self.leftover = self.leftover[:n], self.leftover[n:]
            return chunk
        return self.sock.recv(n)

    def sendall(self, data):
        self.sock.sendall(data)

    def close(self):
        self.sock.close()


def _read_exact(sock, n):
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise SocketClosed("peer closed the connection")
        buf += chunk
    return buf


def read_http_request(sock, limit=65536):
    """Read one HTTP head; returns (request_line, headers dict, leftover).

    Bytes beyond the blank line (e.g. a pipelined WebSocket frame) are
    returned so the caller can replay them through a BufferedSocket.
    """
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise SocketClosed("peer closed during HTTP request")
        data += chunk
        if len(data) > limit:
            raise ValueError("oversized HTTP request")
    head, leftover = data.split(b"\r\n\r\n", 1)
    lines = head.decode("latin-1").split("\r\n")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    return lines[0], headers, leftover


def accept_key(client_key):
    digest = hashlib.sha1((client_key + GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def send_handshake_response(sock, client_key):
    resp = ("HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept_key(client_key)}\r\n\r\n")
    sock.sendall(resp.encode("latin-1"))


def send_frame(sock, payload, opcode=OP_TEXT, mask=False):
    """Send one frame; payload is bytes (text frames take UTF-8 bytes)."""
    header = bytes([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        header += bytes([mask_bit | n])
    elif n < 65536:
        header += bytes([mask_bit | 126]) + struct.pack(">H", n)
    else:
        header += bytes([mask_bit | 127]) + struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        masked = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        sock.sendall(header + key + masked)
    else:
        sock.sendall(header + payload)


def recv_frame(sock):
    """Receive one frame; returns (opcode, payload bytes)."""
    b0, b1 = _read_exact(sock, 2)
    opcode = b0 & 0x0F
    masked = bool(b1 & 0x80)
    n = b1 & 0x7F
    if n == 126:
        n = struct.unpack(">H", _read_exact(sock, 2))[0]
    elif n == 127:
        n = struct.unpack(">Q", _read_exact(sock, 8))[0]
    if n > 16 * 1024 * 1024:
        raise ValueError("oversized frame")
    key = _read_exact(sock, 4) if masked else None
    payload = _read_exact(sock, n) if n else b""
    if key:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return opcode, payload


def send_text(sock, text, mask=False):
    send_frame(sock, text.encode("utf-8"), OP_TEXT, mask=mask)


def recv_text(sock):
    """Receive frames until a text frame arrives; answers pings, raises on close."""
    while True:
        opcode, payload = recv_frame(sock)
        if opcode == OP_TEXT:
            return payload.decode("utf-8")
        if opcode == OP_PING:
            send_frame(sock, payload, OP_PONG)
        elif opcode == OP_CLOSE:
            raise SocketClosed("close frame received")


class WsClient:
    """Blocking WebSocket client for tests and scripts."""

    def __init__(self, host, port, path="/", timeout=10.0):
        raw = socket.create_connection((host, port), timeout=timeout)
        key = base64.b64encode(os.urandom(16)).decode()
        req = (f"GET {path} HTTP/1.1\r\n"
               f"Host: {host}:{port}\r\n"
               "Upgrade: websocket\r\n"
               "Connection: Upgrade\r\n"
               f"Sec-WebSocket-Key: {key}\r\n"
               "Sec-WebSocket-Version: 13\r\n\r\n")
        raw.sendall(req.encode("latin-1"))
        status, headers, leftover = read_http_request(raw)
        if "101" not in status:
            raise ConnectionError(f"handshake rejected: {status}")
        if headers.get("sec-websocket-accept") != accept_key(key):
            raise ConnectionError("bad Sec-WebSocket-Accept")
        self.sock = BufferedSocket(raw, leftover)

    def send(self, text):
        send_text(self.sock, text, mask=True)

    def recv(self):
        return recv_text(self.sock)

    def close(self):
        try:
            send_frame(self.sock, b"", OP_CLOSE, mask=True)
        except OSError:
            pass
        self.sock.close()
