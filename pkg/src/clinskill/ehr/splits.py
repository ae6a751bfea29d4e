"""Subject-level train/test assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clinskill.ehr.store import EhrStore

SPLITS = ("train", "test")


@dataclass(frozen=True)
class SplitAssignment:
    subject_split: dict[int, str]
    stay_subject: dict[int, int]

    def split_of_subject(self, subject_id: int) -> str:
        return self.subject_split[int(subject_id)]

    def split_of_stay(self, stay_id: int) -> str:
        return self.subject_split[self.stay_subject[int(stay_id)]]

    def stays_in(self, split: str) -> list[int]:
        return sorted(s for s, subj in self.stay_subject.items() if self.subject_split[subj] == split)

    def subjects_in(self, split: str) -> list[int]:
        return sorted(s for s, sp in self.subject_split.items() if sp == split)


def split_subjects(store: EhrStore, train_fraction: float, seed: int) -> SplitAssignment:
    """Independent Bernoulli(train_fraction) draw per subject, in subject-id order."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction!r}")
    subjects = sorted({r.subject_id for r in store.subjects()})
    draws = np.random.default_rng([int(seed), 2]).random(len(subjects))
    subject_split = {s: ("train" if u < train_fraction else "test") for s, u in zip(subjects, draws)}
    stay_subject = {r.stay_id: r.subject_id for r in store.stays()}
    return SplitAssignment(subject_split, stay_subject)
