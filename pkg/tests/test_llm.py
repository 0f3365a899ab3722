"""Model client tests: extraction, mock determinism, live transport paths."""

from __future__ import annotations

import hashlib
import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzzmend.llm import (
    CompletionRequest,
    MockClient,
    MockMiss,
    ModelConfig,
    OllamaClient,
    ProtocolError,
    TransportError,
    extract_code,
    save_cassette,
)

PROGRAM = "int main(void){return 0;}"


# --------------------------------------------------------------------------
# extract_code
# --------------------------------------------------------------------------


def test_extract_fenced_block():
    text = f"Here is the fix:\n```c\n{PROGRAM}\n```"
    assert extract_code(text) == PROGRAM


def test_extract_prose_returns_none():
    assert extract_code("I cannot fix this program, sorry.") is None


def test_extract_first_of_two_fences():
    text = f"```c\n{PROGRAM}\n```\nor alternatively\n```c\nint main(void){{return 1;}}\n```"
    assert extract_code(text) == PROGRAM


def test_extract_skips_non_c_fences():
    text = f"```python\nprint('hi')\n```\n```c\n{PROGRAM}\n```"
    assert extract_code(text) == PROGRAM


def test_extract_plain_fence_and_cpp_fence():
    assert extract_code(f"```\n{PROGRAM}\n```") == PROGRAM
    assert extract_code(f"```cpp\n{PROGRAM}\n```") == PROGRAM


def test_extract_fallback_heuristic():
    text = (
        "Sure. The corrected program is:\n"
        "#include <stdio.h>\n"
        "int main(void) {\n"
        '  printf("ok\\n");\n'
        "  return 0;\n"
        "}\n"
        "This version avoids the overflow."
    )
    code = extract_code(text)
    assert code is not None
    assert code.startswith("#include <stdio.h>")
    assert code.endswith("}")
    assert "This version" not in code


def test_extract_fallback_needs_three_lines():
    assert extract_code("int x;\n") is None


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=300).filter(lambda s: "```" not in s))
def test_fence_round_trip(source):
    assert extract_code("```c\n" + source + "\n```") == source


# --------------------------------------------------------------------------
# mock backend
# --------------------------------------------------------------------------


def test_mock_determinism_keyed_on_prompt_hash():
    prompt = "fix this: " + PROGRAM
    sha = hashlib.sha256(prompt.encode()).hexdigest()
    client = MockClient(keyed={sha: "```c\nint main(void){return 2;}\n```"})
    req = CompletionRequest(prompt=prompt, config=client.config)
    first = client.complete(req)
    second = client.complete(req)
    assert first.text == second.text
    assert first.backend == "mock"


def test_mock_miss_raises():
    client = MockClient()
    with pytest.raises(MockMiss):
        client.complete(CompletionRequest(prompt="anything", config=client.config))


def test_mock_queue_consumed_in_order():
    client = MockClient(queue=["first", "second"])
    req = CompletionRequest(prompt="p", config=client.config)
    assert client.complete(req).text == "first"
    assert client.complete(req).text == "second"
    with pytest.raises(MockMiss):
        client.complete(req)


def test_cassette_round_trip(tmp_path):
    path = tmp_path / "cassette.json"
    save_cassette(
        path,
        [
            {"prompt_sha256": hashlib.sha256(b"p1").hexdigest(), "response_text": "r1"},
            {"prompt_sha256": None, "response_text": "fallback"},
        ],
    )
    client = MockClient.from_cassette(path)
    assert client.complete(CompletionRequest(prompt="p1", config=client.config)).text == "r1"
    assert client.complete(CompletionRequest(prompt="other", config=client.config)).text == "fallback"


def test_mock_performs_no_network_operations(monkeypatch):
    def explode(*args, **kwargs):
        raise AssertionError("socket use in mock backend")

    monkeypatch.setattr(socket, "socket", explode)
    monkeypatch.setattr(socket, "create_connection", explode)
    client = MockClient(queue=["ok"])
    response = client.complete(CompletionRequest(prompt="p", config=client.config))
    assert response.text == "ok"


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        CompletionRequest(prompt="", config=ModelConfig())


def test_transport_retries_capped():
    with pytest.raises(ValueError):
        ModelConfig(transport_retries=3)


# --------------------------------------------------------------------------
# live backend against a loopback stub server
# --------------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    behaviour = "ok"
    seen_payloads: list[dict] = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        type(self).seen_payloads.append(payload)
        if type(self).behaviour == "ok":
            body = json.dumps({"response": f"echo:{payload['model']}"}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        elif type(self).behaviour == "garbage":
            body = b"not json at all"
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        else:
            self.send_response(500)
            self.send_header("Content-Length", "0")
            self.end_headers()

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.behaviour = "ok"
    _StubHandler.seen_payloads = []
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_live_client_round_trip(stub_server):
    cfg = ModelConfig(endpoint=stub_server, model_name="llama3.2")
    client = OllamaClient(cfg)
    response = client.complete(CompletionRequest(prompt="hello", config=cfg))
    assert response.text == "echo:llama3.2"
    assert response.backend == "live"
    payload = _StubHandler.seen_payloads[0]
    assert payload["prompt"] == "hello"
    assert payload["stream"] is False


def test_live_client_unreachable_endpoint_raises_after_retry():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        dead_port = probe.getsockname()[1]
    cfg = ModelConfig(
        endpoint=f"http://127.0.0.1:{dead_port}", transport_retries=1, request_timeout_s=2
    )
    client = OllamaClient(cfg)
    with pytest.raises(TransportError):
        client.complete(CompletionRequest(prompt="hello", config=cfg))


def test_live_client_http_error_retried_then_raised(stub_server):
    _StubHandler.behaviour = "error"
    cfg = ModelConfig(endpoint=stub_server, transport_retries=1)
    client = OllamaClient(cfg)
    with pytest.raises(TransportError):
        client.complete(CompletionRequest(prompt="hello", config=cfg))
    assert len(_StubHandler.seen_payloads) == 2  # initial try + 1 retry


def test_live_client_malformed_body_is_protocol_error(stub_server):
    _StubHandler.behaviour = "garbage"
    cfg = ModelConfig(endpoint=stub_server)
    client = OllamaClient(cfg)
    with pytest.raises(ProtocolError):
        client.complete(CompletionRequest(prompt="hello", config=cfg))


def test_response_truncated_at_cap():
    text = "x" * 1000
    client = MockClient(queue=[text], config=ModelConfig(max_response_bytes=100))
    response = client.complete(CompletionRequest(prompt="p", config=client.config))
    assert len(response.text.encode()) <= 100
    assert response.truncated is True
