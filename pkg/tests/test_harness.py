import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from zoomeye.errors import ContractError, SceneGenerationError
from zoomeye.geometry import BBox, ImageMeta, ImageTree
from zoomeye.harness import (
    DatasetRecord,
    MetricsReport,
    RecordOutcome,
    SceneParams,
    extract_choice,
    generate_scenes,
    make_scene,
    read_dataset,
    run_bench,
    scaling_sweep,
    sim_backend_factory,
    write_dataset,
    zoom_success,
)
from zoomeye.oracle import PromptKind, logits_ratio, simulated_yes_no
from zoomeye.search import SearchConfig


class TestExtractChoice:
    @pytest.mark.parametrize(
        "text,letter",
        [("B. brown", "B"), ("The answer is (C).", "C"), ("A", "A"), ("nothing", None), (None, None), ("ABC", None)],
    )
    def test_examples(self, text, letter):
        assert extract_choice(text) == letter


class TestZoomSuccess:
    def test_contains(self):
        assert zoom_success(BBox(0, 0, 0.5, 0.5), [BBox(0.1, 0.1, 0.2, 0.2)])

    def test_exactly_half(self):
        assert zoom_success(BBox(0, 0, 0.5, 1), [BBox(0.25, 0, 0.75, 0.5)])

    def test_just_under(self):
        assert not zoom_success(BBox(0, 0, 0.49, 1), [BBox(0, 0, 1, 0.5)])

    def test_all_golds(self):
        assert not zoom_success(BBox(0, 0, 0.5, 0.5), [BBox(0.1, 0.1, 0.2, 0.2), BBox(0.8, 0.8, 0.9, 0.9)])

    def test_no_golds(self):
        assert zoom_success(BBox.full(), []) is None


@given(st.lists(st.tuples(st.booleans(), st.sampled_from([True, False, None])), min_size=1, max_size=50))
def test_report_arithmetic(rows):
    outcomes = [RecordOutcome(id=str(i), correct=c, zoom_success=z, steps=i) for i, (c, z) in enumerate(rows)]
    r = MetricsReport.from_outcomes(outcomes)
    assert r.accuracy == pytest.approx(100 * sum(c for c, _ in rows) / len(rows))
    if r.zoom_scored and r.accuracy_given_success is not None and r.accuracy_given_failure is not None:
        s = r.zoom_success_rate / 100
        scored_acc = 100 * sum(c for c, z in rows if z is not None) / r.zoom_scored
        assert s * r.accuracy_given_success + (1 - s) * r.accuracy_given_failure == pytest.approx(scored_acc)
    for v in (r.accuracy, r.zoom_success_rate, r.accuracy_given_success, r.accuracy_given_failure):
        assert v is None or 0 <= v <= 100


class TestDataset:
    def test_record_validation(self):
        with pytest.raises(ContractError):
            DatasetRecord(image="a.png", question=" ", answer="x")
        with pytest.raises(ContractError):
            DatasetRecord(image="a.png", question="q?", answer="pink", options=["red", "blue"])
        rec = DatasetRecord(image="a.png", question="q?", answer="blue", options=["red", "blue"])
        assert rec.gold_letter == "B"
        assert rec.prompt().splitlines()[1:3] == ["A. red", "B. blue"]

    def test_roundtrip_and_skips(self, tmp_path):
        path = tmp_path / "d.jsonl"
        recs = [DatasetRecord(image="a.png", question="q?", answer="red", options=["red", "blue"], target_boxes=[BBox(0, 0, 0.1, 0.1)], id="r1")]
        write_dataset(recs, path)
        with open(path, "a") as fh:
            fh.write("{not json}\n")
            fh.write(json.dumps({"image": "b.png", "question": "q?", "answer": "green", "options": ["red"]}) + "\n")
        loaded, skipped = read_dataset(path)
        assert loaded == recs
        assert len(skipped) == 2

    def test_empty(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("\n")
        with pytest.raises(ContractError):
            read_dataset(path)


class TestScenes:
    def test_deterministic(self, tmp_path):
        a = generate_scenes(42, 5, tmp_path / "a")
        b = generate_scenes(42, 5, tmp_path / "b")
        files = sorted(p.name for p in a.parent.iterdir())
        assert len(files) == 5 * 2 + 2
        for name in files:
            assert (a.parent / name).read_bytes() == (b.parent / name).read_bytes()

    def test_independent_of_count(self):
        p = SceneParams()
        assert make_scene(7, 3, p)[0] == make_scene(7, 3, p)[0]

    def test_zero_targets(self):
        with pytest.raises(ContractError):
            SceneParams(targets=0)

    def test_infeasible(self):
        with pytest.raises(SceneGenerationError):
            make_scene(0, 0, SceneParams(targets=20, min_size=0.3, max_size=0.4))

    def test_small_targets_hidden_at_root(self):
        params = SceneParams(width=2246, height=1582, min_size=0.01, max_size=0.04)
        for i in range(20):
            scene, rec = make_scene(1, i, params)
            assert all(t.bbox.area < scene.rho for t in scene.targets)
            z = logits_ratio(simulated_yes_no(scene, BBox.full(), PromptKind.ANSWERING, rec.question))
            assert z < 0

    def test_reachable_for_every_grid(self):
        params = SceneParams(grids=(2, 3, 4))
        for i in range(5):
            scene, _ = make_scene(9, i, params)
            for g in (2, 3, 4):
                tree = ImageTree(ImageMeta(scene.width, scene.height), g, params.s_min)
                for t in scene.targets:
                    assert any(scene.visible(t, n.bbox) for n in tree.iter_nodes())

    def test_counting_question(self):
        scene, rec = make_scene(5, 0, SceneParams(instances=3))
        assert rec.question.startswith("How many") and rec.answer == "3"
        assert len(rec.target_boxes) == 3


@pytest.fixture(scope="module")
def ten(tmp_path_factory):
    return generate_scenes(11, 10, tmp_path_factory.mktemp("ten"), SceneParams(width=2246, height=1582))


class TestBench:
    def test_perfect_oracle(self, ten, tmp_path):
        run = run_bench(ten, SearchConfig.global_local(), sim_backend_factory(), tmp_path)
        assert run.report.accuracy == 100.0 and run.report.zoom_success_rate == 100.0
        assert (tmp_path / "report.json").exists() and len(list((tmp_path / "traces").iterdir())) == 10
        lines = (tmp_path / "results.jsonl").read_text().splitlines()
        assert [json.loads(l)["id"] for l in lines] == [f"scene_{i:04d}" for i in range(10)]

    def test_always_no(self, ten):
        run = run_bench(ten, SearchConfig.global_local(), sim_backend_factory(always_no=True))
        # the oracle never sees anything, so every answer is the backend's blind guess
        assert all(r.traces[0].fallback for r in run.results)
        guessed = sum(o.correct for o in run.outcomes)
        assert run.report.accuracy == pytest.approx(10 * guessed)
        assert run.report.accuracy < 100.0
        # targets are hidden at the root, and the blind search ends on an arbitrary leaf
        assert run.report.zoom_success_rate < 50.0

    def test_parallel_matches_serial(self, ten, tmp_path):
        cfg = SearchConfig.global_local()
        run_bench(ten, cfg, sim_backend_factory(epsilon=2.0), tmp_path / "a")
        run_bench(ten, cfg, sim_backend_factory(epsilon=2.0), tmp_path / "b", parallel=4)
        for name in ["report.json", "results.jsonl"]:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_fixed_cues(self, ten):
        run = run_bench(ten, SearchConfig.global_local(), sim_backend_factory(), cues=["giraffe"])
        # a cue naming no scene object is an oracle error, counted rather than raised
        assert run.report.errors == 10 and run.report.accuracy == 0.0


class TestSweep:
    def test_needs_two(self, ten):
        with pytest.raises(ContractError):
            scaling_sweep(ten, SearchConfig.global_local(), sim_backend_factory(), taus=[0.6])

    def test_flat_when_noiseless(self, ten, tmp_path):
        # every target here sits at depth <= 3, so D + 1 = 4 pops suffice
        points = scaling_sweep(ten, SearchConfig.global_local(), sim_backend_factory(), budgets=[4, 8, 32], out_dir=tmp_path)
        assert [p.accuracy for p in points] == [100.0, 100.0, 100.0]
        assert (tmp_path / "curve.png").exists()
        assert json.loads((tmp_path / "curve.json").read_text())[0]["setting"] == "max_steps"

    def test_cache_reused(self, ten, tmp_path):
        scaling_sweep(ten, SearchConfig.global_local(), sim_backend_factory(epsilon=2.0), budgets=[2, 3], out_dir=tmp_path)
        from zoomeye.oracle import MemoStore

        store = MemoStore(tmp_path / "confidence_cache.sqlite")
        assert len(store) > 0
        scaling_sweep(
            ten, SearchConfig.global_local(), sim_backend_factory(epsilon=2.0), budgets=[2, 3],
            cache_path=tmp_path / "confidence_cache.sqlite",
        )
        assert len(store) == len(MemoStore(tmp_path / "confidence_cache.sqlite"))

    def test_tau_sweep(self, ten):
        points = scaling_sweep(ten, SearchConfig.global_local(), sim_backend_factory(epsilon=2.0), taus=[0.9, 0.6, 0.3])
        assert [p.setting for p in points] == ["tau"] * 3
