from clinskill.ehr.cohort import ARCHETYPES, CohortSpec, CohortSpecError, generate_cohort
from clinskill.ehr.schema import DICTIONARY, DictionaryEntry
from clinskill.ehr.splits import SplitAssignment, split_subjects
from clinskill.ehr.sql import (
    QueryTimeout,
    ResultTable,
    SqlError,
    SqlSyntaxError,
    WriteRejected,
    execute_sql,
)
from clinskill.ehr.store import (
    ClinicalEvent,
    EhrStore,
    StayRecord,
    SubjectRecord,
    UnknownStayError,
)
from clinskill.ehr.view import TimeScopedView, time_scoped_view

__all__ = [
    "ARCHETYPES",
    "ClinicalEvent",
    "CohortSpec",
    "CohortSpecError",
    "DICTIONARY",
    "DictionaryEntry",
    "EhrStore",
    "QueryTimeout",
    "ResultTable",
    "SplitAssignment",
    "SqlError",
    "SqlSyntaxError",
    "StayRecord",
    "SubjectRecord",
    "TimeScopedView",
    "UnknownStayError",
    "WriteRejected",
    "execute_sql",
    "generate_cohort",
    "split_subjects",
    "time_scoped_view",
]
