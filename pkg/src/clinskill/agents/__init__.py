from clinskill.agents.backends import (
    BackendError,
    ChatCompletionsBackend,
    Completion,
    GenerationBackend,
    Message,
    ScriptedMockBackend,
    ScriptError,
    ToolCall,
    ToolSpec,
    backend_from_spec,
)
from clinskill.agents.decision import (
    DEFAULT_DECISION,
    CheckpointDecision,
    DecisionParseError,
    parse_decision,
)
from clinskill.agents.qa import QA_BUDGET, QAResult, parse_verdict, run_qa_episode
from clinskill.agents.runner import read_jsonl, run_many, write_jsonl
from clinskill.agents.surveillance import SURVEILLANCE_BUDGET, SurveillanceResult, run_surveillance_episode

__all__ = [
    "BackendError",
    "ChatCompletionsBackend",
    "CheckpointDecision",
    "Completion",
    "DEFAULT_DECISION",
    "DecisionParseError",
    "GenerationBackend",
    "Message",
    "QAResult",
    "QA_BUDGET",
    "SURVEILLANCE_BUDGET",
    "ScriptError",
    "ScriptedMockBackend",
    "SurveillanceResult",
    "ToolCall",
    "ToolSpec",
    "backend_from_spec",
    "parse_decision",
    "parse_verdict",
    "read_jsonl",
    "run_many",
    "run_qa_episode",
    "run_surveillance_episode",
    "write_jsonl",
]
