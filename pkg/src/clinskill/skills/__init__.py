from clinskill.skills.executor import Missing, SkillRuntimeError, SkillTypeError, execute_skill, render_value
from clinskill.skills.library import LibraryError, SkillLibrary, SkillRecord
from clinskill.skills.program import (
    FINAL,
    SkillParseError,
    SkillProgram,
    extract_skill_candidates,
    final_candidate,
    parse_program,
)
from clinskill.skills.synthesis import (
    ConfigError,
    EmptySkillError,
    SynthesisAborted,
    SynthesisConfig,
    SynthesisRun,
    SynthesisSession,
    compress_context,
    estimate_tokens,
    maybe_compress,
    run_autoformalize,
)
from clinskill.skills.verify import VerificationDataset, VerificationReport, build_feedback, verify_skill

__all__ = [
    "ConfigError",
    "EmptySkillError",
    "FINAL",
    "LibraryError",
    "Missing",
    "SkillLibrary",
    "SkillParseError",
    "SkillProgram",
    "SkillRecord",
    "SkillRuntimeError",
    "SkillTypeError",
    "SynthesisAborted",
    "SynthesisConfig",
    "SynthesisRun",
    "SynthesisSession",
    "VerificationDataset",
    "VerificationReport",
    "build_feedback",
    "compress_context",
    "estimate_tokens",
    "execute_skill",
    "extract_skill_candidates",
    "final_candidate",
    "maybe_compress",
    "parse_program",
    "render_value",
    "run_autoformalize",
    "verify_skill",
]
