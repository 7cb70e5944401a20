from zoomeye.oracle.base import (
    ConfidenceScorer,
    OracleBackend,
    Prompt,
    PromptKind,
    PromptTemplates,
    YesNoLogits,
    logits_ratio,
)
from zoomeye.oracle.cache import CachingBackend, MemoStore
from zoomeye.oracle.remote import RemoteBackend, RemoteConfig, extract_yes_no
from zoomeye.oracle.simulated import SceneSpec, SimulatedBackend, Target, simulated_yes_no

__all__ = [
    "CachingBackend",
    "ConfidenceScorer",
    "MemoStore",
    "OracleBackend",
    "Prompt",
    "PromptKind",
    "PromptTemplates",
    "RemoteBackend",
    "RemoteConfig",
    "SceneSpec",
    "SimulatedBackend",
    "Target",
    "YesNoLogits",
    "extract_yes_no",
    "logits_ratio",
    "simulated_yes_no",
]
