"""scikit-learn style wrapper: ``fit`` synthesizes a skill, ``predict`` runs it."""

from __future__ import annotations

import logging

from sklearn.base import BaseEstimator

from clinskill.metrics.core import answers_match
from clinskill.skills.executor import Missing, SkillRuntimeError, execute_skill
from clinskill.skills.synthesis import SynthesisConfig, run_autoformalize
from clinskill.skills.verify import VerificationDataset, _as_answer, bind_args

logger = logging.getLogger(__name__)


class SkillSynthesizer(BaseEstimator):
    """Estimator over lists of QAInstance.

    ``fit(X)`` treats the train-split items of X as the verification set
    (labels live on the instances, so ``y`` is ignored). ``predict`` returns
    one answer per instance, ``None`` where the skill cannot answer.
    """

    def __init__(self, concept=None, store=None, backend=None, guidelines=None, library=None,
                 theta=0.90, max_iterations=100, compression_trigger=25_000):
        self.concept = concept
        self.store = store
        self.backend = backend
        self.guidelines = guidelines
        self.library = library
        self.theta = theta
        self.max_iterations = max_iterations
        self.compression_trigger = compression_trigger

    _RESOURCES = ("store", "backend", "guidelines", "library")

    def __sklearn_clone__(self):
        # resources are shared by reference; only hyperparameters are copied
        params = self.get_params(deep=False)
        return type(self)(**params)

    def fit(self, X, y=None):
        if self.store is None or self.backend is None:
            raise ValueError("store and backend are required")
        concept = self.concept or X[0].concept
        dataset = VerificationDataset.from_instances(X, concept)
        config = SynthesisConfig(theta=self.theta, max_iterations=self.max_iterations,
                                 compression_trigger=self.compression_trigger)
        run = run_autoformalize(concept, dataset, self.store, self.guidelines, self.library, self.backend, config)
        self.run_ = run
        self.record_ = run.record
        self.accuracy_ = run.record.accuracy
        return self

    def _resolve(self, name):
        if self.library is None:
            raise KeyError(name)
        return self.library.get(name).program

    def predict(self, X):
        prog = self.record_.program
        out = []
        for inst in X:
            try:
                raw = execute_skill(prog, bind_args(prog, inst), self.store, self._resolve)
            except SkillRuntimeError:
                out.append(None)
                continue
            value, _ = _as_answer(raw)
            out.append(None if isinstance(value, Missing) else value)
        return out

    def score(self, X, y=None):
        preds = self.predict(X)
        return sum(p is not None and answers_match(p, i.truth).correct for p, i in zip(preds, X)) / len(X)
