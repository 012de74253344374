import json
import socket
import threading
import time

import numpy as np
import pytest

from cpgloco import wsproto
from cpgloco.checkpoint import save_checkpoint
from cpgloco.config import parse_assignments
from cpgloco.networks import ActorCritic
from cpgloco.ppo import RunningNormalizer
from cpgloco.teleop import TeleopServer


@pytest.fixture(scope="module")
def server():
    import tempfile, os
    tmp = tempfile.mkdtemp()
    path = os.path.join(tmp, "p.ckpt")
    policy = ActorCritic(76, 12, hidden=(16, 8), seed=0)
    norm = RunningNormalizer(76)
    save_checkpoint(path, policy, norm)
    cfg = parse_assignments(["randomization=false", "n_envs=1"])
    srv = TeleopServer(path, port=0, run_config=cfg, realtime=True)
    srv.port = srv.sock.getsockname()[1]
    srv.start()
    yield srv
    srv.shutdown()


def connect(server):
    client = wsproto.WsClient("127.0.0.1", server.port, timeout=15.0)
    # the hello frame arrives first in practice; tolerate stray telemetry
    for _ in range(5):
        hello = json.loads(client.recv())
        if hello["type"] == "hello":
            return client, hello
    raise AssertionError("no hello frame")


def recv_type(client, kind, limit=200):
    for _ in range(limit):
        msg = json.loads(client.recv())
        if msg["type"] == kind:
            return msg
    raise AssertionError(f"no {kind} frame within {limit} frames")


def test_handshake_advertises_ranges(server):
    client, hello = connect(server)
    try:
        assert hello["type"] == "hello"
        assert hello["ranges"]["h"] == [0.17, 0.30]
        assert hello["ranges"]["g_c"] == [0.03, 0.12]
        assert hello["telemetry_hz"] == pytest.approx(20.0)
    finally:
        client.close()


def test_telemetry_flows_and_is_monotone(server):
    client, _ = connect(server)
    try:
        frames = [recv_type(client, "telemetry") for _ in range(5)]
        times = [f["t"] for f in frames]
        assert all(b >= a for a, b in zip(times, times[1:]))
        f = frames[-1]
        assert len(f["r"]) == 4 and len(f["contacts"]) == 4
        assert "shape" in f and "cmd" in f
    finally:
        client.close()


def test_set_shape_clamped_and_echoed(server):
    client, _ = connect(server)
    try:
        client.send(json.dumps({"type": "set_shape", "h": 0.95, "g_c": 0.001}))
        deadline = time.time() + 10
        while time.time() < deadline:
            f = recv_type(client, "telemetry")
            if f["shape"]["h"] == pytest.approx(0.30):
                break
        assert f["shape"]["h"] == pytest.approx(0.30)
        assert f["shape"]["g_c"] == pytest.approx(0.03)
        client.send(json.dumps({"type": "set_shape", "h": 0.25}))
        deadline = time.time() + 10
        while time.time() < deadline:
            f = recv_type(client, "telemetry")
            if f["shape"]["h"] == pytest.approx(0.25):
                break
        assert f["shape"]["h"] == pytest.approx(0.25)
    finally:
        client.close()


def test_malformed_message_gets_error_frame(server):
    client, _ = connect(server)
    try:
        client.send("this is not json")
        msg = recv_type(client, "error")
        assert "bad message" in msg["message"]
        client.send(json.dumps({"type": "warp"}))
        msg = recv_type(client, "error")
        assert "unknown type" in msg["message"]
        # session still alive afterwards
        assert recv_type(client, "telemetry")
    finally:
        client.close()


def test_pause_freezes_simulation_time(server):
    client, _ = connect(server)
    try:
        client.send(json.dumps({"type": "pause"}))
        deadline = time.time() + 10
        while time.time() < deadline:
            f = recv_type(client, "telemetry")
            if f["paused"]:
                break
        assert f["paused"]
        t0 = f["t"]
        frames = [recv_type(client, "telemetry") for _ in range(5)]
        assert all(fr["t"] == t0 for fr in frames if fr["paused"])
        client.send(json.dumps({"type": "pause"}))
        deadline = time.time() + 10
        while time.time() < deadline:
            f = recv_type(client, "telemetry")
            if not f["paused"] and f["t"] > t0:
                break
        assert f["t"] > t0
    finally:
        client.close()


def test_command_latency_under_100ms_median():
    # dedicated realtime server: slider change -> reflected telemetry
    import tempfile, os
    tmp = tempfile.mkdtemp()
    path = os.path.join(tmp, "p.ckpt")
    save_checkpoint(path, ActorCritic(76, 12, hidden=(16, 8), seed=1),
                    RunningNormalizer(76))
    cfg = parse_assignments(["randomization=false", "n_envs=1"])
    srv = TeleopServer(path, port=0, run_config=cfg, realtime=True)
    srv.port = srv.sock.getsockname()[1]
    srv.start()
    try:
        client, _ = connect(srv)
        latencies = []
        value = 0.17
        for k in range(9):
            value = 0.18 + 0.01 * k
            sent = time.monotonic()
            client.send(json.dumps({"type": "set_shape", "h": value}))
            while True:
                f = recv_type(client, "telemetry")
                if abs(f["shape"]["h"] - value) < 1e-9:
                    latencies.append(time.monotonic() - sent)
                    break
        client.close()
        assert np.median(latencies) < 0.100, latencies
    finally:
        srv.shutdown()


def test_client_disconnect_keeps_simulation(server):
    client, _ = connect(server)
    t_before = recv_type(client, "telemetry")["t"]
    client.sock.close()  # abrupt disconnect, no close frame
    time.sleep(0.3)
    client2, _ = connect(server)
    try:
        t_after = recv_type(client2, "telemetry")["t"]
        assert t_after >= t_before
    finally:
        client2.close()


def test_push_and_add_mass_and_reset(server):
    client, _ = connect(server)
    try:
        client.send(json.dumps({"type": "add_mass", "kg": 2.5}))
        deadline = time.time() + 10
        while time.time() < deadline:
            f = recv_type(client, "telemetry")
            if f["payload"] == pytest.approx(2.5):
                break
        assert f["payload"] == pytest.approx(2.5)
        client.send(json.dumps({"type": "push", "dir": [1.0, 0.0], "mag": 0.5}))
        client.send(json.dumps({"type": "reset"}))
        deadline = time.time() + 10
        while time.time() < deadline:
            f = recv_type(client, "telemetry")
            if f["payload"] == 0.0:
                break
        assert f["payload"] == 0.0
    finally:
        client.close()


def test_http_fallback_serves_info_page(server):
    sock = socket.create_connection(("127.0.0.1", server.port), timeout=5)
    sock.sendall(b"GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
    data = b""
    while True:
        chunk = sock.recv(4096)
        if not chunk:
            break
        data += chunk
    sock.close()
    assert b"200 OK" in data or b"404" in data
    assert b"teleop" in data


def test_golden_frames_match_live_schema(server):
    """The goldens shared with the frontend suite mirror the live frames."""
    import json as _json
    import os
    golden_path = os.path.join(os.path.dirname(__file__), "..", "protocol",
                               "golden_frames.json")
    with open(golden_path) as fh:
        golden = _json.load(fh)
    live_t = server._telemetry()
    assert set(live_t.keys()) == set(golden["telemetry"].keys())
    live_h = server._hello()
    assert set(live_h.keys()) == set(golden["hello"].keys())
    assert set(live_h["ranges"].keys()) == set(golden["hello"]["ranges"].keys())
    assert golden["error"]["type"] == "error"
