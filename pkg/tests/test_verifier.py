"""Verifier stack: cosine reward, the two local embedders, word-vector
table IO, and the remote embedding protocol against a loopback server."""

from __future__ import annotations

import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from mdmkit.errors import DomainError, FormatError, ProtocolError
from mdmkit.verifier import (
    ConstantEmbedder,
    HashedEmbedder,
    WordVecEmbedder,
    WordVecTable,
    avg_wordvec_embed,
    cosine_reward,
    hashed_embed,
    load_wordvec_table,
    remote_embed,
    write_wordvec_table,
)

# ---------------------------------------------------------------------------
# Cosine reward
# ---------------------------------------------------------------------------


def test_cosine_hand_values():
    assert cosine_reward([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)
    assert cosine_reward([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / math.sqrt(2))
    assert cosine_reward([1.0, 2.0], [-1.0, -2.0]) == pytest.approx(-1.0)
    assert cosine_reward([3.0, 4.0], [3.0, 4.0]) == pytest.approx(1.0)


def test_cosine_scale_invariance():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=8), rng.normal(size=8)
    base = cosine_reward(a, b)
    assert cosine_reward(7.3 * a, 0.02 * b) == pytest.approx(base, abs=1e-12)


def test_cosine_zero_norm_and_shape():
    assert cosine_reward(np.zeros(4), np.ones(4)) == 0.0
    with pytest.raises(DomainError):
        cosine_reward(np.ones(3), np.ones(4))
    with pytest.raises(DomainError):
        cosine_reward(np.ones((2, 2)), np.ones((2, 2)))


# ---------------------------------------------------------------------------
# Word-vector embedder
# ---------------------------------------------------------------------------


def _table():
    return WordVecTable(
        vectors={
            "cat": np.asarray([1.0, 0.0]),
            "dog": np.asarray([0.0, 1.0]),
        },
        dim=2,
    )


def test_avg_wordvec_mean_and_oov():
    t = _table()
    np.testing.assert_allclose(avg_wordvec_embed("cat dog", t), [0.5, 0.5])
    np.testing.assert_allclose(avg_wordvec_embed("cat tiger", t), [1.0, 0.0])
    np.testing.assert_allclose(avg_wordvec_embed("tiger lion", t), [0.0, 0.0])
    np.testing.assert_allclose(avg_wordvec_embed("", t), [0.0, 0.0])


def test_wordvec_embedder_batches():
    out = WordVecEmbedder(_table()).embed(["cat", "dog", "cat dog"])
    np.testing.assert_allclose(out, [[1, 0], [0, 1], [0.5, 0.5]])


def test_wordvec_table_roundtrip(tmp_path):
    t = _table()
    p = tmp_path / "vecs.txt"
    write_wordvec_table(t, str(p))
    back = load_wordvec_table(str(p))
    assert back.dim == 2 and len(back) == 2
    for w in ("cat", "dog"):
        np.testing.assert_array_equal(back[w], t[w])


def test_wordvec_table_load_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("cat 1.0 2.0\ndog 3.0\n")
    with pytest.raises(FormatError, match="line 2"):
        load_wordvec_table(str(p))
    p.write_text("cat 1.0 two\n")
    with pytest.raises(FormatError, match="line 1"):
        load_wordvec_table(str(p))
    p.write_text("cat\n")
    with pytest.raises(FormatError, match="no vector"):
        load_wordvec_table(str(p))
    p.write_text("")
    with pytest.raises(FormatError, match="empty"):
        load_wordvec_table(str(p))


def test_wordvec_table_duplicate_warns_last_wins(tmp_path):
    p = tmp_path / "dup.txt"
    p.write_text("cat 1.0 0.0\ncat 0.0 5.0\n")
    with pytest.warns(UserWarning, match="duplicate"):
        t = load_wordvec_table(str(p))
    np.testing.assert_array_equal(t["cat"], [0.0, 5.0])


# ---------------------------------------------------------------------------
# Hashed embedder
# ---------------------------------------------------------------------------


def test_hashed_embed_deterministic_and_word_order_free():
    a = hashed_embed("cat dog bird", 16)
    b = hashed_embed("bird cat dog", 16)
    c = hashed_embed("cat dog bird", 16)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)
    assert not np.array_equal(a, hashed_embed("cat dog bird", 16, seed=1))


def test_hashed_embed_empty_and_dim():
    np.testing.assert_array_equal(hashed_embed("", 4), np.zeros(4))
    with pytest.raises(DomainError):
        hashed_embed("cat", 0)


def test_hashed_words_are_unit_and_distinct():
    a = hashed_embed("cat", 32)
    b = hashed_embed("dog", 32)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert abs(cosine_reward(a, b)) < 0.9


def test_constant_embedder_ranks_nothing():
    e = ConstantEmbedder(np.asarray([1.0, 2.0]))
    out = e.embed(["a", "b c", ""])
    assert out.shape == (3, 2)
    assert cosine_reward(out[0], out[2]) == pytest.approx(1.0)


def test_hashed_embedder_matches_function():
    emb = HashedEmbedder(dim=8, seed=3)
    np.testing.assert_array_equal(
        emb.embed(["cat dog"])[0], hashed_embed("cat dog", 8, seed=3)
    )


# ---------------------------------------------------------------------------
# Remote protocol, against a loopback stub
# ---------------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    script = []  # list of ("ok", dim) | ("status", code) | ("body", dict)
    requests_seen = []

    def do_POST(self):
        n = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(n))
        type(self).requests_seen.append((self.path, payload))
        kind, arg = self.script.pop(0) if self.script else ("status", 500)
        if kind == "ok":
            body = {
                "embeddings": [
                    [float(len(s)), float(arg)] for s in payload["sentences"]
                ]
            }
            raw = json.dumps(body).encode()
            self.send_response(200)
        elif kind == "body":
            raw = json.dumps(arg).encode()
            self.send_response(200)
        else:
            raw = b"{}"
            self.send_response(arg)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *a):
        pass


@pytest.fixture()
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.script = []
    _StubHandler.requests_seen = []
    yield f"http://127.0.0.1:{server.server_port}", _StubHandler
    server.shutdown()
    thread.join(timeout=5)


def test_remote_embed_ok(stub_server):
    endpoint, handler = stub_server
    handler.script[:] = [("ok", 7)]
    out = remote_embed(["ab", "xyz"], endpoint, retries=0)
    np.testing.assert_allclose(out, [[2.0, 7.0], [3.0, 7.0]])
    path, payload = handler.requests_seen[0]
    assert path == "/embed"
    assert payload == {"sentences": ["ab", "xyz"]}


def test_remote_embed_retries_transient_then_succeeds(stub_server):
    endpoint, handler = stub_server
    handler.script[:] = [("status", 503), ("status", 502), ("ok", 1)]
    out = remote_embed(["q"], endpoint, retries=3, backoff=0.01)
    assert out.shape == (1, 2)
    assert len(handler.requests_seen) == 3


def test_remote_embed_4xx_is_fatal_no_retry(stub_server):
    endpoint, handler = stub_server
    handler.script[:] = [("status", 422), ("ok", 1)]
    with pytest.raises(ProtocolError, match="422"):
        remote_embed(["q"], endpoint, retries=3, backoff=0.01)
    assert len(handler.requests_seen) == 1


def test_remote_embed_count_mismatch_fatal(stub_server):
    endpoint, handler = stub_server
    handler.script[:] = [("body", {"embeddings": [[1.0, 2.0]]})]
    with pytest.raises(ProtocolError, match="shape"):
        remote_embed(["a", "b"], endpoint, retries=0)


def test_remote_embed_malformed_body_fatal(stub_server):
    endpoint, handler = stub_server
    handler.script[:] = [("body", {"wrong_key": []})]
    with pytest.raises(ProtocolError, match="malformed"):
        remote_embed(["a"], endpoint, retries=0)


def test_remote_embed_ragged_rows_fatal(stub_server):
    endpoint, handler = stub_server
    handler.script[:] = [("body", {"embeddings": [[1.0], [1.0, 2.0]]})]
    with pytest.raises(ProtocolError):
        remote_embed(["a", "b"], endpoint, retries=0)


def test_remote_embed_exhausted_retries(stub_server):
    endpoint, handler = stub_server
    handler.script[:] = [("status", 500)] * 3
    with pytest.raises(ProtocolError, match="after 3 attempts"):
        remote_embed(["a"], endpoint, retries=2, backoff=0.01)


def test_remote_embed_unreachable_host():
    # RFC 5737 TEST-NET address; nothing listens there
    with pytest.raises(ProtocolError):
        remote_embed(["a"], "http://127.0.0.1:1", retries=1, backoff=0.01, timeout=0.5)
