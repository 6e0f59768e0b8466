"""Teleoperation server: control in, telemetry out.

Wire protocol: one JSON document per newline-terminated UTF-8 line over a
full-duplex socket. Browsers reach the same protocol through a WebSocket
upgrade at /ws (one document per message); anything else on the port is
treated as a raw socket driver. GET requests for other paths serve the
bundled client assets so the drive server can host its own UI.
"""
from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
from collections import deque
from pathlib import Path

from .tub import frame_to_png_bytes

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
CONTENT_TYPES = {".html": "text/html", ".js": "application/javascript",
                 ".css": "text/css", ".map": "application/json",
                 ".png": "image/png", ".ico": "image/x-icon"}


def validate_control(msg: dict) -> str | None:
    """Schema check for client messages; returns an error string or None."""
    if not isinstance(msg, dict) or "type" not in msg:
        return "message must be an object with a type"
    if msg["type"] == "control":
        for key in ("steer", "throttle"):
            if key not in msg or not isinstance(msg[key], (int, float)):
                return f"control message needs numeric {key}"
        if not -1.0 <= msg["steer"] <= 1.0:
            return f"steer {msg['steer']} outside [-1, 1]"
        if not 0.0 <= msg["throttle"] <= 1.0:
            return f"throttle {msg['throttle']} outside [0, 1]"
        if "record" in msg and not isinstance(msg["record"], bool):
            return "record must be a boolean"
        return None
    if msg["type"] == "mode":
        if msg.get("mode") not in ("manual", "autopilot"):
            return "mode must be manual or autopilot"
        return None
    return f"unknown message type {msg['type']!r}"


class _Driver:
    """One connected driver, raw socket or websocket framing."""

    def __init__(self, conn: socket.socket, is_ws: bool):
        self.conn = conn
        self.is_ws = is_ws
        self.out: deque[bytes] = deque(maxlen=64)  # drop-oldest backpressure
        self.cv = threading.Condition()
        self.alive = True

    def queue(self, payload: bytes) -> None:
        with self.cv:
            self.out.append(payload)
            self.cv.notify()

    def send_loop(self) -> None:
        while True:
            with self.cv:
                while not self.out and self.alive:
                    self.cv.wait(timeout=0.5)
                if not self.alive and not self.out:
                    return
                payload = self.out.popleft() if self.out else None
            if payload is None:
                continue
            try:
                if self.is_ws:
                    self.conn.sendall(_ws_frame(payload))
                else:
                    self.conn.sendall(payload + b"\n")
            except OSError:
                self.alive = False
                return

    def stop(self) -> None:
        with self.cv:
            self.alive = False
            self.cv.notify_all()
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.conn.close()
        except OSError:
            pass


def _ws_accept(key: str) -> str:
    digest = hashlib.sha1((key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _ws_frame(payload: bytes, opcode: int = 0x1) -> bytes:
    n = len(payload)
    head = bytes([0x80 | opcode])
    if n < 126:
        head += bytes([n])
    elif n < 65536:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + payload


def _ws_read_frame(sock: socket.socket):
    """Read one frame; returns (opcode, payload) or None on EOF."""
    head = _read_exact(sock, 2)
    if head is None:
        return None
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    n = head[1] & 0x7F
    if n == 126:
        ext = _read_exact(sock, 2)
        if ext is None:
            return None
        n = struct.unpack(">H", ext)[0]
    elif n == 127:
        ext = _read_exact(sock, 8)
        if ext is None:
            return None
        n = struct.unpack(">Q", ext)[0]
    mask = b"\x00" * 4
    if masked:
        mask = _read_exact(sock, 4)
        if mask is None:
            return None
    payload = _read_exact(sock, n) if n else b""
    if payload is None:
        return None
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return opcode, payload


def _read_exact(sock: socket.socket, n: int):
    buf = b""
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError:
            return None
        if not chunk:
            return None
        buf += chunk
    return buf


class TeleopServer:
    """Accepts one driver; queues its controls; broadcasts telemetry."""

    def __init__(self, host: str = "127.0.0.1", port: int = 8887,
                 static_dir=None, saliency_source=None):
        self.host = host
        self.port = port
        self.static_dir = Path(static_dir) if static_dir else None
        self.saliency_source = saliency_source
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self.port = self._sock.getsockname()[1]
        self._lock = threading.Lock()
        self._driver: _Driver | None = None
        self._controls: deque[dict] = deque(maxlen=256)
        self._disconnected = False
        self._closing = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    # -- loop-facing API ------------------------------------------------------

    def poll_controls(self) -> tuple[list[dict], bool]:
        """Drain queued control messages; flag reports a driver disconnect."""
        with self._lock:
            msgs = list(self._controls)
            self._controls.clear()
            disc = self._disconnected
            self._disconnected = False
        return msgs, disc

    def broadcast_telemetry(self, *, frame, seq, t, steer_u, throttle_pwm,
                            snap, mode, race_phase, fps, battery_v) -> None:
        with self._lock:
            driver = self._driver
        if driver is None or not driver.alive:
            return
        msg = {
            "type": "telemetry",
            "seq": int(seq),
            "t": float(t),
            "frame_png_b64": base64.b64encode(frame_to_png_bytes(frame)).decode(),
            "steer_u": float(steer_u),
            "throttle_pwm": int(throttle_pwm),
            "ultra": [int(u) for u in snap.ultra],
            "imu": [float(a) for a in snap.accel],
            "mode": mode,
            "race_phase": race_phase,
            "fps": float(fps),
            "battery_v": float(battery_v),
        }
        if self.saliency_source is not None:
            overlay_png = self.saliency_source(frame)
            if overlay_png is not None:
                msg["saliency_png_b64"] = base64.b64encode(overlay_png).decode()
        driver.queue(json.dumps(msg).encode())

    def has_driver(self) -> bool:
        with self._lock:
            return self._driver is not None and self._driver.alive

    def close(self) -> None:
        self._closing = True
        with self._lock:
            driver = self._driver
            self._driver = None
        if driver is not None:
            driver.stop()
        try:
            self._sock.close()
        except OSError:
            pass

    # -- connection handling ---------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._handle_conn, args=(conn,),
                             daemon=True).start()

    def _handle_conn(self, conn: socket.socket) -> None:
        conn.settimeout(10.0)
        try:
            first = conn.recv(4096)
        except OSError:
            conn.close()
            return
        if not first:
            conn.close()
            return
        if first.startswith(b"GET "):
            self._handle_http(conn, first)
        else:
            self._attach_driver(conn, is_ws=False, initial=first)

    def _handle_http(self, conn: socket.socket, buf: bytes) -> None:
        while b"\r\n\r\n" not in buf:
            try:
                chunk = conn.recv(4096)
            except OSError:
                conn.close()
                return
            if not chunk:
                conn.close()
                return
            buf += chunk
        head = buf.split(b"\r\n\r\n", 1)[0].decode("utf-8", "replace")
        lines = head.split("\r\n")
        path = lines[0].split(" ")[1].split("?")[0]
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                k, v = line.split(":", 1)
                headers[k.strip().lower()] = v.strip()
        if path == "/ws" and "websocket" in headers.get("upgrade", "").lower():
            accept = _ws_accept(headers.get("sec-websocket-key", ""))
            conn.sendall(
                b"HTTP/1.1 101 Switching Protocols\r\n"
                b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
                b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n")
            self._attach_driver(conn, is_ws=True, initial=b"")
            return
        self._serve_static(conn, path)

    def _serve_static(self, conn: socket.socket, path: str) -> None:
        body, ctype, status = b"not found", "text/plain", "404 Not Found"
        if self.static_dir is not None:
            rel = "index.html" if path == "/" else path.lstrip("/")
            target = (self.static_dir / rel).resolve()
            if str(target).startswith(str(self.static_dir.resolve())) and target.is_file():
                body = target.read_bytes()
                ctype = CONTENT_TYPES.get(target.suffix, "application/octet-stream")
                status = "200 OK"
        conn.sendall((f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
                      f"Content-Length: {len(body)}\r\n"
                      "Connection: close\r\n\r\n").encode() + body)
        conn.close()

    def _attach_driver(self, conn: socket.socket, is_ws: bool, initial: bytes) -> None:
        driver = _Driver(conn, is_ws)
        with self._lock:
            if self._driver is not None and self._driver.alive:
                busy = json.dumps({"type": "error", "detail": "busy: a driver is already connected"}).encode()
                try:
                    conn.sendall(_ws_frame(busy) if is_ws else busy + b"\n")
                except OSError:
                    pass
                conn.close()
                return
            self._driver = driver
        conn.settimeout(None)
        threading.Thread(target=driver.send_loop, daemon=True).start()
        if is_ws:
            self._ws_reader(driver)
        else:
            self._line_reader(driver, initial)

    def _dispatch_line(self, driver: _Driver, line: bytes) -> None:
        text = line.strip()
        if not text:
            return
        try:
            msg = json.loads(text.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as e:
            driver.queue(json.dumps({"type": "error", "detail": f"bad json: {e}"}).encode())
            return
        err = validate_control(msg)
        if err is not None:
            driver.queue(json.dumps({"type": "error", "detail": err}).encode())
            return
        with self._lock:
            self._controls.append(msg)

    def _line_reader(self, driver: _Driver, initial: bytes) -> None:
        buf = initial
        while driver.alive:
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                self._dispatch_line(driver, line)
            try:
                chunk = driver.conn.recv(4096)
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
        self._drop_driver(driver)

    def _ws_reader(self, driver: _Driver) -> None:
        while driver.alive:
            frame = _ws_read_frame(driver.conn)
            if frame is None:
                break
            opcode, payload = frame
            if opcode == 0x8:  # close
                break
            if opcode == 0x9:  # ping -> pong
                try:
                    driver.conn.sendall(_ws_frame(payload, opcode=0xA))
                except OSError:
                    break
                continue
            if opcode in (0x1, 0x2):
                for line in payload.split(b"\n"):
                    self._dispatch_line(driver, line)
        self._drop_driver(driver)

    def _drop_driver(self, driver: _Driver) -> None:
        driver.stop()
        with self._lock:
            if self._driver is driver:
                self._driver = None
                self._disconnected = True


class TeleopClient:
    """Minimal raw-socket driver client, used by tests and scripts."""

    def __init__(self, host: str = "127.0.0.1", port: int = 8887, timeout: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._buf = b""

    def send(self, msg: dict) -> None:
        self.sock.sendall(json.dumps(msg).encode() + b"\n")

    def send_control(self, steer: float, throttle: float, record: bool | None = None) -> None:
        msg = {"type": "control", "steer": steer, "throttle": throttle}
        if record is not None:
            msg["record"] = record
        self.send(msg)

    def recv_msg(self, timeout: float = 5.0):
        self.sock.settimeout(timeout)
        while b"\n" not in self._buf:
            chunk = self.sock.recv(65536)
            if not chunk:
                return None
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return json.loads(line.decode())

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass
