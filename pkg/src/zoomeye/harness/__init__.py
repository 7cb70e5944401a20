from zoomeye.harness.bench import BenchRun, run_bench, shared_backend_factory, sim_backend_factory
from zoomeye.harness.dataset import DatasetRecord, read_dataset, write_dataset
from zoomeye.harness.metrics import MetricsReport, RecordOutcome, extract_choice, zoom_success
from zoomeye.harness.scenes import SceneParams, generate_scenes, make_scene, render_scene
from zoomeye.harness.sweep import SweepPoint, scaling_sweep

__all__ = [
    "BenchRun",
    "DatasetRecord",
    "MetricsReport",
    "RecordOutcome",
    "SceneParams",
    "SweepPoint",
    "extract_choice",
    "generate_scenes",
    "make_scene",
    "read_dataset",
    "render_scene",
    "run_bench",
    "scaling_sweep",
    "shared_backend_factory",
    "sim_backend_factory",
    "write_dataset",
    "zoom_success",
]
