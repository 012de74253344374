"""Live teleoperation server: real-time paced policy stepping with inbound
command frames and 20 Hz telemetry broadcast over WebSocket text frames.

Wire protocol (JSON payloads):
  server -> client on connect:
    {"type": "hello", "ranges": {"vx": [lo, hi], "vy": [...], "yaw_rate": [...],
     "h": [0.17, 0.30], "g_c": [0.03, 0.12]}, "telemetry_hz": 20}
  client -> server:
    {"type": "set_command", "vx": float, "vy": float, "yaw_rate": float}
    {"type": "set_shape", "h": float?, "g_c": float?}
    {"type": "add_mass", "kg": float}
    {"type": "push", "dir": [x, y], "mag": float}
    {"type": "pause"}   (toggles)
    {"type": "reset"}
  server -> client at 20 Hz:
    {"type": "telemetry", "t": s, "paused": bool, "pos": [3], "rpy": [3],
     "v_body": [3], "omega": [3], "contacts": [4], "r": [4], "theta": [4],
     "phi": [4], "foot_xz": [[x, z] x4], "reward": float,
     "cmd": {"vx":, "vy":, "yaw_rate":}, "shape": {"h":, "g_c":}, "payload": kg}
  server -> sender on a malformed message:
    {"type": "error", "message": str}

The simulation thread is authoritative and never blocks on clients: each
client has a bounded outbound queue; full queues drop the oldest frame.
Inbound commands are applied at the next control-step boundary.  All values
clamp to the advertised ranges server-side.
"""

import json
import queue
import socket
import threading
import time

import numpy as np

from . import wsproto
from .checkpoint import load_checkpoint
from .config import RunConfig
from .env import FIXED_TASK_VX, FORWARD_VX_RANGE, OMNI_RANGE, POLICY_DT, VectorEnv
from .kinematics import CLEARANCE_RANGE, HEIGHT_RANGE
from .rotation import roll_pitch, yaw_from_quat

TELEMETRY_EVERY = 5          # control steps between frames (20 Hz)
CLIENT_QUEUE_FRAMES = 32


class TeleopServer:
    def __init__(self, checkpoint, port=8765, host="127.0.0.1", run_config=None,
                 static_dir=None, realtime=True):
        self.cfg = run_config or RunConfig()
        self.policy, self.normalizer, _ = load_checkpoint(checkpoint)
        env_cfg = self.cfg.env_config()
        env_cfg.n_envs = 1
        env_cfg.randomization.enabled = False
        self.env = VectorEnv(env_cfg, terrain=self.cfg.terrain())
        if self.policy.obs_dim != self.env.obs_dim:
            raise SystemExit(
                f"checkpoint obs dim {self.policy.obs_dim} does not match "
                f"mode '{env_cfg.obs_mode}' ({self.env.obs_dim})")
        if self.cfg.task == "omni":
            self.cmd_ranges = {"vx": OMNI_RANGE, "vy": OMNI_RANGE,
                               "yaw_rate": OMNI_RANGE}
        else:
            self.cmd_ranges = {"vx": FORWARD_VX_RANGE, "vy": (0.0, 0.0),
                               "yaw_rate": (0.0, 0.0)}
        self.realtime = realtime
        self.static_dir = static_dir
        self.host, self.port = host, port

        self.env.cmd.vx[:] = np.clip(FIXED_TASK_VX, *self.cmd_ranges["vx"])
        self.env.cmd.vy[:] = 0.0
        self.env.cmd.yaw_rate[:] = 0.0

        self.paused = False
        self.inbound = queue.Queue()
        self.clients = []
        self.clients_lock = threading.Lock()
        self.running = threading.Event()
        self.running.set()
        self.command_log = []
        self.last_reward = 0.0
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen(8)
        self.accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self.sim_thread = threading.Thread(target=self._sim_loop, daemon=True)

    # ---- lifecycle ----

    def start(self):
        self.accept_thread.start()
        self.sim_thread.start()

    def serve_forever(self):
        self.start()
        while self.running.is_set():
            time.sleep(0.2)

    def shutdown(self):
        self.running.clear()
        self._dump_command_log()
        try:
            self.sock.close()
        except OSError:
            pass
        with self.clients_lock:
            for client in self.clients:
                client.close()

    def _dump_command_log(self):
        """Persist the inbound command timeline so a session can be replayed."""
        import os
        try:
            os.makedirs(self.cfg.out_dir, exist_ok=True)
            with open(os.path.join(self.cfg.out_dir, "teleop_commands.json"),
                      "w") as fh:
                json.dump(self.command_log, fh, indent=1)
        except OSError:
            pass

    # ---- networking ----

    def _accept_loop(self):
        while self.running.is_set():
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            threading.Thread(target=self._handle_connection, args=(conn,),
                             daemon=True).start()

    def _handle_connection(self, conn):
        try:
            request, headers, leftover = wsproto.read_http_request(conn)
        except (OSError, ValueError, ConnectionError):
            conn.close()
            return
        if headers.get("upgrade", "").lower() == "websocket" \
                and "sec-websocket-key" in headers:
            wsproto.send_handshake_response(conn, headers["sec-websocket-key"])
            client = _Client(wsproto.BufferedSocket(conn, leftover))
            with self.clients_lock:
                self.clients.append(client)
            client.send_now(json.dumps(self._hello()))
            client.start()
            self._read_client(client)
        else:
            self._serve_static(conn, request)
            conn.close()

    def _serve_static(self, conn, request):
        try:
            path = request.split(" ")[1].split("?")[0]
        except IndexError:
            path = "/"
        body, ctype = self._static_body(path)
        status = "200 OK" if body is not None else "404 Not Found"
        if body is None:
            body = b"<html><body>cpgloco teleop: connect a WebSocket client, " \
                   b"or run with --static-dir for the browser UI.</body></html>"
            ctype = "text/html"
        head = (f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
                f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n")
        try:
            conn.sendall(head.encode("latin-1") + body)
        except OSError:
            pass

    def _static_body(self, path):
        import os
        if not self.static_dir:
            return None, None
        if path in ("", "/"):
            path = "/index.html"
        full = os.path.realpath(os.path.join(self.static_dir, path.lstrip("/")))
        root = os.path.realpath(self.static_dir)
        if not full.startswith(root + os.sep) and full != root:
            return None, None
        if not os.path.isfile(full):
            return None, None
        ctype = {"html": "text/html", "js": "text/javascript",
                 "css": "text/css", "map": "application/json",
                 "json": "application/json"}.get(full.rsplit(".", 1)[-1],
                                                 "application/octet-stream")
        with open(full, "rb") as fh:
            return fh.read(), ctype

    def _read_client(self, client):
        while self.running.is_set():
            try:
                text = wsproto.recv_text(client.conn)
            except (ConnectionError, OSError, ValueError):
                break
            try:
                msg = json.loads(text)
                if not isinstance(msg, dict) or "type" not in msg:
                    raise ValueError("message must be an object with a 'type'")
                self._validate(msg)
            except (ValueError, KeyError, TypeError) as exc:
                client.send_queued(json.dumps(
                    {"type": "error", "message": f"bad message: {exc}"}))
                continue
            self.inbound.put(msg)
        self._drop_client(client)

    def _drop_client(self, client):
        with self.clients_lock:
            if client in self.clients:
                self.clients.remove(client)
        client.close()

    def _hello(self):
        return {
            "type": "hello",
            "ranges": {
                "vx": list(self.cmd_ranges["vx"]),
                "vy": list(self.cmd_ranges["vy"]),
                "yaw_rate": list(self.cmd_ranges["yaw_rate"]),
                "h": list(HEIGHT_RANGE),
                "g_c": list(CLEARANCE_RANGE),
            },
            "telemetry_hz": 1.0 / (POLICY_DT * TELEMETRY_EVERY),
        }

    @staticmethod
    def _validate(msg):
        kind = msg["type"]
        if kind == "set_command":
            for key in ("vx", "vy", "yaw_rate"):
                if key in msg:
                    float(msg[key])
        elif kind == "set_shape":
            if "h" not in msg and "g_c" not in msg:
                raise ValueError("set_shape needs h or g_c")
            for key in ("h", "g_c"):
                if key in msg:
                    float(msg[key])
        elif kind == "add_mass":
            float(msg["kg"])
        elif kind == "push":
            d = msg["dir"]
            if len(d) != 2:
                raise ValueError("push dir must be [x, y]")
            float(d[0]), float(d[1]), float(msg["mag"])
        elif kind in ("pause", "reset"):
            pass
        else:
            raise ValueError(f"unknown type {kind!r}")

    # ---- simulation ----

    def _apply(self, msg):
        kind = msg["type"]
        self.command_log.append({"t": float(self.env.step_count[0] * POLICY_DT), **msg})
        if kind == "set_command":
            if "vx" in msg:
                self.env.cmd.vx[:] = np.clip(float(msg["vx"]), *self.cmd_ranges["vx"])
            if "vy" in msg:
                self.env.cmd.vy[:] = np.clip(float(msg["vy"]), *self.cmd_ranges["vy"])
            if "yaw_rate" in msg:
                self.env.cmd.yaw_rate[:] = np.clip(float(msg["yaw_rate"]),
                                                   *self.cmd_ranges["yaw_rate"])
        elif kind == "set_shape":
            self.env.set_shape(h=msg.get("h"), g_c=msg.get("g_c"))
        elif kind == "add_mass":
            self.env.params.payload[:] = max(float(msg["kg"]), 0.0)
        elif kind == "push":
            d = np.array([float(msg["dir"][0]), float(msg["dir"][1])])
            norm = np.linalg.norm(d)
            if norm > 1e-9:
                d = d / norm
            mag = float(np.clip(msg["mag"], 0.0, 1.0))
            self.env.sim.vel[0, 0] += mag * d[0]
            self.env.sim.vel[0, 1] += mag * d[1]
        elif kind == "pause":
            self.paused = not self.paused
        elif kind == "reset":
            self.env.reset_env(0)
            self.env.cmd.vx[:] = np.clip(FIXED_TASK_VX, *self.cmd_ranges["vx"])
            self.env.cmd.vy[:] = 0.0
            self.env.cmd.yaw_rate[:] = 0.0

    def _sim_loop(self):
        obs = self.env.observe()
        step_i = 0
        next_deadline = time.monotonic()
        while self.running.is_set():
            while True:
                try:
                    self._apply(self.inbound.get_nowait())
                except queue.Empty:
                    break
            if not self.paused:
                mean, _, _ = self.policy.forward(self.normalizer.normalize(obs))
                cmd_backup = (self.env.cmd.vx[0], self.env.cmd.vy[0],
                              self.env.cmd.yaw_rate[0])
                obs, reward, done, info = self.env.step(np.clip(mean, -1.0, 1.0))
                # teleop owns the command; undo any auto-resample on reset
                self.env.cmd.vx[:], self.env.cmd.vy[:], self.env.cmd.yaw_rate[:] = cmd_backup
                self.last_reward = float(reward[0])
            step_i += 1
            if step_i % TELEMETRY_EVERY == 0:
                frame = json.dumps(self._telemetry())
                with self.clients_lock:
                    targets = list(self.clients)
                for client in targets:
                    client.send_queued(frame)
            if self.realtime:
                next_deadline += POLICY_DT
                delay = next_deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_deadline = time.monotonic()

    def _telemetry(self):
        env = self.env
        sim = env.sim
        v_body = (sim.vel[0] @ _rot3(sim.quat[0]))
        roll, pitch = roll_pitch(sim.quat[0:1])
        feet = sim.feet_in_hip_frame(env.geometry)[0]
        return {
            "type": "telemetry",
            "t": float(sim.time[0]),
            "paused": self.paused,
            "pos": [round(float(v), 5) for v in sim.pos[0]],
            "rpy": [round(float(roll[0]), 5), round(float(pitch[0]), 5),
                    round(float(yaw_from_quat(sim.quat[0:1])[0]), 5)],
            "v_body": [round(float(v), 5) for v in v_body],
            "omega": [round(float(v), 5) for v in sim.omega[0]],
            "contacts": [int(c) for c in sim.contact[0]],
            "r": [round(float(v), 5) for v in env.osc.r[0]],
            "theta": [round(float(v), 5) for v in env.osc.theta[0]],
            "phi": [round(float(v), 5) for v in env.osc.phi[0]],
            "foot_xz": [[round(float(feet[l, 0]), 5), round(float(feet[l, 2]), 5)]
                        for l in range(4)],
            "reward": round(self.last_reward, 6),
            "cmd": {"vx": float(env.cmd.vx[0]), "vy": float(env.cmd.vy[0]),
                    "yaw_rate": float(env.cmd.yaw_rate[0])},
            "shape": {"h": float(env.shape_h[0]), "g_c": float(env.shape_gc[0])},
            "payload": float(env.params.payload[0]),
        }


def _rot3(quat):
    from .rotation import quat_to_matrix
    return quat_to_matrix(quat[None])[0]


class _Client:
    """One connected UI: a bounded outbound queue drained by a writer thread."""

    def __init__(self, conn):
        self.conn = conn
        self.queue = queue.Queue(maxsize=CLIENT_QUEUE_FRAMES)
        self.alive = True
        self.writer = threading.Thread(target=self._write_loop, daemon=True)

    def start(self):
        self.writer.start()

    def send_now(self, text):
        try:
            wsproto.send_text(self.conn, text)
        except OSError:
            self.alive = False

    def send_queued(self, text):
        try:
            self.queue.put_nowait(text)
        except queue.Full:
            try:  # drop the oldest frame, keep the link realtime
                self.queue.get_nowait()
                self.queue.put_nowait(text)
            except (queue.Empty, queue.Full):
                pass

    def _write_loop(self):
        while self.alive:
            text = self.queue.get()
            if text is None:
                return
            try:
                wsproto.send_text(self.conn, text)
            except OSError:
                self.alive = False

    def close(self):
        self.alive = False
        try:
            self.queue.put_nowait(None)
        except queue.Full:
            pass
        try:
            self.conn.close()
        except OSError:
            pass
