import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from conftest import CountingBackend, scorer_for
from zoomeye.errors import ContractError, ExtractionError, TransportError, UnknownLabelError
from zoomeye.geometry import BBox, ImageMeta, ImageTree, TreeNode
from zoomeye.oracle import (
    CachingBackend,
    ConfidenceScorer,
    MemoStore,
    PromptKind,
    PromptTemplates,
    RemoteBackend,
    RemoteConfig,
    SceneSpec,
    SimulatedBackend,
    Target,
    YesNoLogits,
    extract_yes_no,
    logits_ratio,
    simulated_yes_no,
)
from zoomeye.visual import InputMode, compose_visual_input

finite = st.floats(-50, 50, allow_nan=False)


class TestLogitsRatio:
    def test_equal(self):
        assert logits_ratio(YesNoLogits(1.3, 1.3)) == 0.0

    def test_ln3(self):
        assert logits_ratio(YesNoLogits(math.log(3), 0.0)) == pytest.approx(0.5, abs=1e-15)

    def test_antisymmetric_example(self):
        assert logits_ratio(YesNoLogits(-5, 5)) == -logits_ratio(YesNoLogits(5, -5))

    def test_extremes_stay_open(self):
        assert -1.0 < logits_ratio(YesNoLogits(-1e6, 1e6)) < 0
        assert 0 < logits_ratio(YesNoLogits(1e6, -1e6)) < 1.0

    def test_non_finite(self):
        with pytest.raises(ContractError):
            YesNoLogits(float("nan"), 0.0)
        with pytest.raises(ContractError):
            YesNoLogits(0.0, float("inf"))

    @settings(max_examples=300, deadline=None)
    @given(finite, finite, finite)
    def test_properties(self, a, b, c):
        z = logits_ratio(YesNoLogits(a, b))
        assert -1.0 < z < 1.0
        assert logits_ratio(YesNoLogits(b, a)) == -z
        # independent closed form: tanh(d/2)
        assert z == pytest.approx(math.tanh((a - b) / 2), abs=1e-12)
        # monotone in the difference
        if c > 0:
            assert logits_ratio(YesNoLogits(a + c, b)) >= z


class TestTemplates:
    def test_defaults_render(self):
        t = PromptTemplates()
        p = t.render(PromptKind.EXISTING, "dog", InputMode.GLOBAL_LOCAL)
        assert p.text == "Is there a dog in the zoomed-in view? Answer Yes or No."
        p = t.render(PromptKind.EXISTING, "dog", InputMode.LOCAL)
        assert p.text == "Is there a dog in the image? Answer Yes or No."
        p = t.render(PromptKind.ANSWERING, "What color is it?", InputMode.LOCAL)
        assert p.text.startswith("Question: What color is it?\nCould you answer the question")

    def test_subject_with_braces_is_not_reexpanded(self):
        p = PromptTemplates().render(PromptKind.EXISTING, "{q}", InputMode.LOCAL)
        assert p.text == "Is there a {q} in the image? Answer Yes or No."

    def test_bad_template(self):
        with pytest.raises(ContractError):
            PromptTemplates({InputMode.LOCAL: {PromptKind.EXISTING: "no hole"}})

    def test_empty_subject(self):
        with pytest.raises(ContractError):
            PromptTemplates().render(PromptKind.EXISTING, "  ", InputMode.LOCAL)


@pytest.fixture
def dog_scene():
    return SceneSpec(
        1000,
        1000,
        [Target("dog", BBox(0.60, 0.10, 0.64, 0.14), "brown"), Target("bus", BBox(0.0, 0.0, 0.5, 0.5), "red")],
        rho=0.005,
    )


class TestSimulated:
    def test_tiny_target_at_root(self, dog_scene):
        root = BBox.full()
        assert logits_ratio(simulated_yes_no(dog_scene, root, PromptKind.EXISTING, "dog")) < 0
        assert logits_ratio(simulated_yes_no(dog_scene, root, PromptKind.LATENT, "dog")) > 0

    def test_tight_view(self, dog_scene):
        view = BBox(0.55, 0.05, 0.70, 0.20)
        z = logits_ratio(simulated_yes_no(dog_scene, view, PromptKind.EXISTING, "dog"))
        assert z >= 0.8
        assert z == pytest.approx(math.tanh(2.0), abs=1e-12)

    def test_latent_disjoint(self, dog_scene):
        z = logits_ratio(simulated_yes_no(dog_scene, BBox(0, 0.5, 0.5, 1), PromptKind.LATENT, "dog"))
        assert z <= -0.8

    def test_answering_needs_all_refs(self, dog_scene):
        q = "Is the dog to the right of the bus?"
        near_dog = BBox(0.5, 0, 0.75, 0.25)
        assert logits_ratio(simulated_yes_no(dog_scene, near_dog, PromptKind.ANSWERING, q)) < 0
        both = BBox(0, 0, 0.65, 0.3)
        assert logits_ratio(simulated_yes_no(dog_scene, both, PromptKind.ANSWERING, q)) > 0

    def test_unknown_label(self, dog_scene):
        with pytest.raises(UnknownLabelError):
            simulated_yes_no(dog_scene, BBox.full(), PromptKind.EXISTING, "giraffe")
        with pytest.raises(UnknownLabelError):
            simulated_yes_no(dog_scene, BBox.full(), PromptKind.ANSWERING, "What colour is the sky?")

    def test_plural_and_all(self):
        scene = SceneSpec(
            1000, 1000, [Target("car #1", BBox(0, 0, 0.3, 0.3)), Target("car #2", BBox(0.6, 0.6, 0.9, 0.9))]
        )
        assert len(scene.targets_for_cue("all cars")) == 2
        assert len(scene.targets_for_cue("car")) == 2
        assert len(scene.targets_for_cue("car #2")) == 1

    def test_jitter_deterministic_and_bounded(self, dog_scene):
        dog_scene.epsilon = 0.7
        dog_scene.seed = 11
        view = BBox(0.5, 0, 1, 0.5)
        a = simulated_yes_no(dog_scene, view, PromptKind.LATENT, "dog")
        b = simulated_yes_no(dog_scene, view, PromptKind.LATENT, "dog")
        assert a == b
        assert abs(a.z_yes - 2.0) <= 0.7 and abs(a.z_no + 2.0) <= 0.7
        dog_scene.seed = 12
        assert simulated_yes_no(dog_scene, view, PromptKind.LATENT, "dog") != a

    def test_existing_implies_latent_up_the_tree(self, dog_scene):
        tree = ImageTree(ImageMeta(4000, 4000), 2, 384)
        for node in tree.iter_nodes():
            if simulated_yes_no(dog_scene, node.bbox, PromptKind.EXISTING, "dog").z_yes > 0:
                n = node
                while n is not None:
                    assert simulated_yes_no(dog_scene, n.bbox, PromptKind.LATENT, "dog").z_yes > 0
                    n = tree.node(n.parent_id) if n.parent_id is not None else None

    def test_scene_roundtrip(self, dog_scene, tmp_path):
        path = tmp_path / "s.json"
        dog_scene.save(path)
        again = SceneSpec.load(path)
        assert again == dog_scene and again.digest() == dog_scene.digest()

    def test_scene_validation(self):
        with pytest.raises(ContractError):
            SceneSpec(10, 10, [], rho=1.0)
        with pytest.raises(ContractError):
            SceneSpec(10, 10, [Target("a", BBox.full()), Target("a", BBox.full())])

    def test_answer_generation(self, dog_scene):
        backend = SimulatedBackend(dog_scene)
        q = "What is the color of the dog?\nA. red\nB. brown\nC. blue\nD. white"
        p = PromptTemplates().render(PromptKind.FINAL_ANSWER, q, InputMode.LOCAL)
        img = Image.new("RGB", (1000, 1000))
        close = compose_visual_input(img, BBox(0.55, 0.05, 0.70, 0.20), InputMode.LOCAL)
        assert backend.generate(close, p) == "B. brown"
        far = compose_visual_input(img, BBox.full(), InputMode.LOCAL)
        guess = backend.generate(far, p)
        assert guess[0] in "ABCD" and guess == backend.generate(far, p)

    def test_always_no(self, dog_scene):
        backend = SimulatedBackend(dog_scene, always_no=True)
        img = Image.new("RGB", (1000, 1000))
        view = compose_visual_input(img, BBox(0.55, 0.05, 0.70, 0.20), InputMode.LOCAL)
        p = PromptTemplates().render(PromptKind.EXISTING, "dog", InputMode.LOCAL)
        assert logits_ratio(backend.yes_no(view, p)) < 0


class TestScorer:
    def test_cache_and_counts(self, ne_scene):
        backend = CountingBackend(SimulatedBackend(ne_scene))
        scorer = scorer_for(ne_scene, backend=backend)
        node = TreeNode(id=10, depth=2, bbox=BBox(0.75, 0, 1, 0.25), parent_id=2)
        z = scorer.confidence(node, PromptKind.EXISTING, "dog")
        assert z >= 0.8
        assert scorer.confidence(node, PromptKind.EXISTING, "dog") == z
        assert backend.yes_no_calls == 1 == scorer.calls
        scorer.confidence(node, PromptKind.LATENT, "dog")
        assert backend.yes_no_calls == 2

    def test_rejects_generation_kind(self, ne_scene):
        scorer = scorer_for(ne_scene)
        with pytest.raises(ContractError):
            scorer.confidence(TreeNode(0, 0, BBox.full()), PromptKind.FINAL_ANSWER, "x")

    def test_extraction_failure_scores_zero(self, ne_scene, caplog):
        class Broken:
            def yes_no(self, vi, prompt):
                raise ExtractionError("no yes/no tokens")

            def generate(self, vi, prompt, history=()):
                return ""

        scorer = ConfidenceScorer(Broken(), Image.new("RGB", (64, 64)), InputMode.LOCAL)
        assert scorer.confidence(TreeNode(0, 0, BBox.full()), PromptKind.EXISTING, "dog") == 0.0
        assert scorer.extraction_failures == 1
        assert "scoring as 0" in caplog.text


class TestExtract:
    @staticmethod
    def body(entries):
        return {"choices": [{"logprobs": {"content": [{"token": "Yes", "top_logprobs": entries}]}}]}

    def test_direct(self):
        entries = [{"token": "Yes", "logprob": -0.2}, {"token": "No", "logprob": -1.7}, {"token": "The", "logprob": -4.0}]
        assert extract_yes_no(self.body(entries)) == YesNoLogits(-0.2, -1.7)

    def test_surface_forms_take_max(self):
        entries = [{"token": " yes", "logprob": -0.9}, {"token": "Yes", "logprob": -1.5}, {"token": "no", "logprob": -2.0}]
        assert extract_yes_no(self.body(entries)) == YesNoLogits(-0.9, -2.0)

    def test_floor_fallback(self):
        entries = [{"token": "Yes", "logprob": -0.1}, {"token": "Sure", "logprob": -3.0}, {"token": "I", "logprob": -9.3}]
        logits = extract_yes_no(self.body(entries))
        assert logits.z_yes == -0.1
        assert logits.z_no == pytest.approx(-10.3)

    @pytest.mark.parametrize("body", [{}, {"choices": []}, {"choices": [{"logprobs": None}]}, "nope"])
    def test_malformed(self, body):
        with pytest.raises(ExtractionError):
            extract_yes_no(body)

    def test_neither(self):
        with pytest.raises(ExtractionError):
            extract_yes_no(self.body([{"token": "Maybe", "logprob": -0.1}]))


class FakeServer:
    """Chat-completions stand-in; ``script`` is a list of (status, body) replies, the last repeats."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                outer.requests.append((dict(self.headers), json.loads(self.rfile.read(length))))
                status, body = outer.script.pop(0) if len(outer.script) > 1 else outer.script[0]
                data = body.encode() if isinstance(body, str) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


YES_BODY = {
    "choices": [
        {
            "message": {"content": "Yes"},
            "logprobs": {
                "content": [
                    {"token": "Yes", "logprob": -0.2, "top_logprobs": [{"token": "Yes", "logprob": -0.2}, {"token": "No", "logprob": -1.7}]}
                ]
            },
        }
    ]
}


def remote(url, **kw):
    return RemoteBackend(RemoteConfig(endpoint=url, model="m", api_key="secret", backoff=0.01, **kw))


class TestRemote:
    def vi(self):
        return compose_visual_input(Image.new("RGB", (64, 64)), BBox(0, 0, 0.5, 0.5), InputMode.GLOBAL_LOCAL)

    def test_yes_no_request_shape(self):
        with FakeServer([(200, YES_BODY)]) as srv:
            backend = remote(srv.url)
            p = PromptTemplates().render(PromptKind.EXISTING, "dog", InputMode.GLOBAL_LOCAL)
            assert backend.yes_no(self.vi(), p) == YesNoLogits(-0.2, -1.7)
        headers, payload = srv.requests[0]
        assert headers["Authorization"] == "Bearer secret"
        assert payload["temperature"] == 0 and payload["max_tokens"] == 1
        assert payload["logprobs"] is True and payload["top_logprobs"] >= 20
        content = payload["messages"][-1]["content"]
        assert [c["type"] for c in content] == ["image_url", "image_url", "text"]
        assert content[0]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_generate(self):
        with FakeServer([(200, YES_BODY)]) as srv:
            p = PromptTemplates().render(PromptKind.CUE_GENERATION, "q?", InputMode.LOCAL)
            assert remote(srv.url).generate(None, p, [("u", "a")]) == "Yes"
        payload = srv.requests[0][1]
        assert payload["max_tokens"] == 512
        assert [m["role"] for m in payload["messages"]] == ["user", "assistant", "user"]

    def test_retries_then_succeeds(self):
        with FakeServer([(503, {}), (500, {}), (200, YES_BODY)]) as srv:
            p = PromptTemplates().render(PromptKind.EXISTING, "dog", InputMode.LOCAL)
            assert remote(srv.url).yes_no(self.vi(), p).z_yes == -0.2
        assert len(srv.requests) == 3

    def test_gives_up(self):
        with FakeServer([(503, {})]) as srv:
            p = PromptTemplates().render(PromptKind.EXISTING, "dog", InputMode.LOCAL)
            with pytest.raises(TransportError) as err:
                remote(srv.url, max_retries=2).yes_no(self.vi(), p)
        assert err.value.attempts == 3 and err.value.status == 503
        assert len(srv.requests) == 3

    def test_client_error_not_retried(self):
        with FakeServer([(400, {"error": "bad"})]) as srv:
            p = PromptTemplates().render(PromptKind.EXISTING, "dog", InputMode.LOCAL)
            with pytest.raises(TransportError):
                remote(srv.url).yes_no(self.vi(), p)
        assert len(srv.requests) == 1

    def test_malformed_body(self):
        with FakeServer([(200, "not json")]) as srv:
            p = PromptTemplates().render(PromptKind.EXISTING, "dog", InputMode.LOCAL)
            with pytest.raises(ExtractionError):
                remote(srv.url).yes_no(self.vi(), p)

    def test_unreachable(self):
        backend = remote("http://127.0.0.1:9/v1/chat/completions", max_retries=1)
        p = PromptTemplates().render(PromptKind.EXISTING, "dog", InputMode.LOCAL)
        with pytest.raises(TransportError):
            backend.yes_no(self.vi(), p)

    def test_config_env(self, monkeypatch):
        monkeypatch.setenv("ZOOMEYE_ENDPOINT", "http://x/v1")
        monkeypatch.setenv("ZOOMEYE_MODEL", "vlm")
        cfg = RemoteConfig.from_env()
        assert cfg.endpoint == "http://x/v1" and cfg.model == "vlm"
        monkeypatch.delenv("ZOOMEYE_ENDPOINT")
        with pytest.raises(ContractError):
            RemoteConfig.from_env()
        with pytest.raises(ContractError):
            RemoteConfig("http://x", top_k=5)


class TestCaching:
    def test_hits_across_backends(self, ne_scene, tmp_path):
        store = MemoStore(tmp_path / "c.sqlite")
        img = Image.new("RGB", (ne_scene.width, ne_scene.height))
        vi = compose_visual_input(img, BBox(0.5, 0, 1, 0.5), InputMode.LOCAL, source="scene.png")
        p = PromptTemplates().render(PromptKind.LATENT, "dog", InputMode.LOCAL)
        first = CountingBackend(SimulatedBackend(ne_scene))
        a = CachingBackend(first, store).yes_no(vi, p)
        second = CountingBackend(SimulatedBackend(ne_scene))
        b = CachingBackend(second, store).yes_no(vi, p)
        assert a == b and first.yes_no_calls == 1 and second.yes_no_calls == 0
        assert store.hits == 1 and len(store) == 1

    def test_scene_change_misses(self, ne_scene, tmp_path):
        store = MemoStore(tmp_path / "c.sqlite")
        img = Image.new("RGB", (ne_scene.width, ne_scene.height))
        vi = compose_visual_input(img, BBox.full(), InputMode.LOCAL, source="scene.png")
        p = PromptTemplates().render(PromptKind.LATENT, "dog", InputMode.LOCAL)
        CachingBackend(SimulatedBackend(ne_scene), store).yes_no(vi, p)
        ne_scene.epsilon = 1.0
        inner = CountingBackend(SimulatedBackend(ne_scene))
        CachingBackend(inner, store).yes_no(vi, p)
        assert inner.yes_no_calls == 1

    def test_no_source_bypasses(self, ne_scene, tmp_path):
        store = MemoStore(tmp_path / "c.sqlite")
        vi = compose_visual_input(Image.new("RGB", (16, 16)), BBox.full(), InputMode.LOCAL)
        p = PromptTemplates().render(PromptKind.LATENT, "dog", InputMode.LOCAL)
        CachingBackend(SimulatedBackend(ne_scene), store).yes_no(vi, p)
        assert len(store) == 0
