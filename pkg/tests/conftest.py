import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from gatedchain import backend as backend_mod
from gatedchain.agents import AgentRole, load_templates
from gatedchain.backend import Rule, script_backend
from gatedchain.engine import ChainConfig

TEMPLATES = load_templates()

# acceptance lines collected by test_acceptance and printed in the summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def scripted_config(worker, filter_, judge=None, manager="final answer", **overrides) -> ChainConfig:
    """ChainConfig whose roles each have their own scripted backend.

    Each role argument is either a responder (string/callable/exception, reused
    for every call) or a list of responders consumed in order.
    """

    def make(spec):
        if isinstance(spec, list):
            return script_backend([Rule(r) for r in spec])
        return script_backend([Rule(spec, repeat=True)])

    backends = {
        AgentRole.WORKER: make(worker),
        AgentRole.FILTER: make(filter_),
        AgentRole.JUDGE: make(judge if judge is not None else "LATER"),
        AgentRole.MANAGER: make(manager),
    }
    return ChainConfig(role_backends=backends, templates=TEMPLATES, **overrides)


def shared_config(rules, **overrides) -> ChainConfig:
    """All roles share one scripted backend so its transcript is the global call order."""
    spec = script_backend(rules)
    backends = {role: spec for role in AgentRole}
    return ChainConfig(role_backends=backends, templates=TEMPLATES, **overrides)


def transcript_roles(config: ChainConfig) -> list[str]:
    spec = config.role_backends[AgentRole.WORKER]
    return [r[0].upper() for r in spec.script.roles]


@pytest.fixture
def no_sleep(monkeypatch):
    delays = []
    monkeypatch.setattr(backend_mod, "_sleep", delays.append)
    return delays


class StubServer:
    """Chat-completions stub: replays (status, body) pairs and logs arrivals."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.arrivals: list[float] = []
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                stub.arrivals.append(time.perf_counter())
                length = int(self.headers.get("Content-Length", 0))
                stub.requests.append(json.loads(self.rfile.read(length) or b"{}"))
                stub.headers.append(dict(self.headers))
                status, body = stub.replies.pop(0) if stub.replies else (500, "stub exhausted")
                if isinstance(body, (dict, list)):
                    body = json.dumps(body)
                data = body.encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
        self.thread.start()

    @property
    def endpoint(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def completion_body(text, usage=True):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = {"prompt_tokens": 11, "completion_tokens": 3}
    return body


@pytest.fixture
def stub_server():
    servers = []

    def start(replies):
        s = StubServer(replies)
        servers.append(s)
        return s

    yield start
    for s in servers:
        s.close()
