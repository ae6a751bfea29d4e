from clinskill.guidelines.store import (
    PREVIEW_CHARS,
    SECTION_TITLES,
    GuidelineDoc,
    GuidelineError,
    GuidelinePreview,
    GuidelineStore,
    parse_guideline,
    tokenize,
)

__all__ = [
    "PREVIEW_CHARS",
    "SECTION_TITLES",
    "GuidelineDoc",
    "GuidelineError",
    "GuidelinePreview",
    "GuidelineStore",
    "parse_guideline",
    "tokenize",
]
