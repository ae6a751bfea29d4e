"""Miniature ICU relational layout and the item dictionary.

Item ids follow the MIMIC-IV numbering where a well-known id exists so that
queries written against this store read like queries against the real one.
Ids marked ``synthetic`` in their label have no MIMIC counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DictionaryEntry:
    item_id: int
    label: str
    source_table: str
    unit: str


# fmt: off
CHART_ITEMS = (
    DictionaryEntry(220045, "Heart Rate", "chartevents", "bpm"),
    DictionaryEntry(220052, "Arterial Blood Pressure mean", "chartevents", "mmHg"),
    DictionaryEntry(220179, "Non Invasive Blood Pressure systolic", "chartevents", "mmHg"),
    DictionaryEntry(220210, "Respiratory Rate", "chartevents", "insp/min"),
    DictionaryEntry(220277, "O2 saturation pulseoxymetry", "chartevents", "%"),
    DictionaryEntry(223762, "Temperature Celsius", "chartevents", "°C"),
    DictionaryEntry(223835, "Inspired O2 Fraction", "chartevents", "%"),
    DictionaryEntry(220339, "PEEP set", "chartevents", "cmH2O"),
    DictionaryEntry(220739, "GCS - Eye Opening", "chartevents", "points"),
    DictionaryEntry(223900, "GCS - Verbal Response", "chartevents", "points"),
    DictionaryEntry(223901, "GCS - Motor Response", "chartevents", "points"),
    DictionaryEntry(226559, "Foley", "chartevents", "mL"),
    DictionaryEntry(226512, "Admission Weight (Kg)", "chartevents", "kg"),
    DictionaryEntry(226730, "Height (cm)", "chartevents", "cm"),
)

LAB_ITEMS = (
    DictionaryEntry(50912, "Creatinine", "labevents", "mg/dL"),
    DictionaryEntry(51006, "Urea Nitrogen", "labevents", "mg/dL"),
    DictionaryEntry(50971, "Potassium", "labevents", "mEq/L"),
    DictionaryEntry(50983, "Sodium", "labevents", "mEq/L"),
    DictionaryEntry(50931, "Glucose", "labevents", "mg/dL"),
    DictionaryEntry(50862, "Albumin", "labevents", "g/dL"),
    DictionaryEntry(50885, "Bilirubin, Total", "labevents", "mg/dL"),
    DictionaryEntry(51265, "Platelet Count", "labevents", "K/uL"),
    DictionaryEntry(51301, "White Blood Cells", "labevents", "K/uL"),
    DictionaryEntry(51222, "Hemoglobin", "labevents", "g/dL"),
    DictionaryEntry(51256, "Neutrophils", "labevents", "%"),
    DictionaryEntry(51244, "Lymphocytes", "labevents", "%"),
    DictionaryEntry(51237, "INR(PT)", "labevents", "ratio"),
    DictionaryEntry(50813, "Lactate", "labevents", "mmol/L"),
    DictionaryEntry(50820, "pH", "labevents", "units"),
    DictionaryEntry(50821, "pO2", "labevents", "mmHg"),
    DictionaryEntry(50818, "pCO2", "labevents", "mmHg"),
    DictionaryEntry(51003, "Troponin T", "labevents", "ng/mL"),
    DictionaryEntry(50889, "C-Reactive Protein", "labevents", "mg/L"),
    DictionaryEntry(70012, "Blood Culture (synthetic microbiology)", "labevents", "text"),
    DictionaryEntry(70079, "Urine Culture (synthetic microbiology)", "labevents", "text"),
)

INFUSION_ITEMS = (
    DictionaryEntry(221906, "Norepinephrine", "infusions", "mcg/kg/min"),
    DictionaryEntry(221289, "Epinephrine", "infusions", "mcg/kg/min"),
    DictionaryEntry(222315, "Vasopressin", "infusions", "units/hour"),
    DictionaryEntry(221749, "Phenylephrine", "infusions", "mcg/kg/min"),
    DictionaryEntry(221662, "Dopamine", "infusions", "mcg/kg/min"),
    DictionaryEntry(221653, "Dobutamine", "infusions", "mcg/kg/min"),
    DictionaryEntry(221986, "Milrinone", "infusions", "mcg/kg/min"),
    DictionaryEntry(225798, "Vancomycin", "infusions", "mg/hour"),
    DictionaryEntry(225893, "Piperacillin/Tazobactam (Zosyn)", "infusions", "mg/hour"),
    DictionaryEntry(225851, "Cefepime", "infusions", "mg/hour"),
    DictionaryEntry(225883, "Meropenem", "infusions", "mg/hour"),
    DictionaryEntry(225152, "Heparin Sodium", "infusions", "units/hour"),
    DictionaryEntry(222168, "Propofol", "infusions", "mcg/kg/min"),
    DictionaryEntry(223258, "Insulin - Regular", "infusions", "units/hour"),
    DictionaryEntry(225158, "NaCl 0.9%", "infusions", "mL/hour"),
    DictionaryEntry(221555, "Cisatracurium", "infusions", "mcg/kg/min"),
)

PROCEDURE_ITEMS = (
    DictionaryEntry(225792, "Invasive Ventilation", "procedures", "min"),
    DictionaryEntry(225794, "Non-invasive Ventilation", "procedures", "min"),
    DictionaryEntry(227287, "High Flow Nasal Cannula (synthetic)", "procedures", "min"),
    DictionaryEntry(225802, "Dialysis - CRRT", "procedures", "min"),
    DictionaryEntry(225752, "Arterial Line", "procedures", "min"),
)
# fmt: on

DICTIONARY: dict[int, DictionaryEntry] = {
    e.item_id: e for e in CHART_ITEMS + LAB_ITEMS + INFUSION_ITEMS + PROCEDURE_ITEMS
}

VASOPRESSORS = (221906, 221289, 222315, 221749, 221662)
INOTROPES = (221653, 221986)
ANTIBIOTICS = (225798, 225893, 225851, 225883)
CULTURES = (70012, 70079)
GCS_ITEMS = (220739, 223900, 223901)

# name -> (column, SQL type) in table order; event tables carry every id so
# the time-scoped views can filter without joins
TABLES: dict[str, tuple[tuple[str, str], ...]] = {
    "subjects": (("subject_id", "BIGINT"), ("age", "INTEGER"), ("sex", "VARCHAR")),
    "admissions": (
        ("hadm_id", "BIGINT"),
        ("subject_id", "BIGINT"),
        ("admittime", "TIMESTAMP"),
        ("dischtime", "TIMESTAMP"),
    ),
    "icustays": (
        ("stay_id", "BIGINT"),
        ("hadm_id", "BIGINT"),
        ("subject_id", "BIGINT"),
        ("intime", "TIMESTAMP"),
        ("outtime", "TIMESTAMP"),
    ),
    "chartevents": (
        ("subject_id", "BIGINT"),
        ("hadm_id", "BIGINT"),
        ("stay_id", "BIGINT"),
        ("charttime", "TIMESTAMP"),
        ("itemid", "INTEGER"),
        ("value", "VARCHAR"),
        ("valuenum", "DOUBLE"),
        ("valueuom", "VARCHAR"),
    ),
    "labevents": (
        ("subject_id", "BIGINT"),
        ("hadm_id", "BIGINT"),
        ("stay_id", "BIGINT"),
        ("charttime", "TIMESTAMP"),
        ("itemid", "INTEGER"),
        ("value", "VARCHAR"),
        ("valuenum", "DOUBLE"),
        ("valueuom", "VARCHAR"),
    ),
    "infusions": (
        ("subject_id", "BIGINT"),
        ("hadm_id", "BIGINT"),
        ("stay_id", "BIGINT"),
        ("starttime", "TIMESTAMP"),
        ("endtime", "TIMESTAMP"),
        ("itemid", "INTEGER"),
        ("rate", "DOUBLE"),
        ("rateuom", "VARCHAR"),
    ),
    "procedures": (
        ("subject_id", "BIGINT"),
        ("hadm_id", "BIGINT"),
        ("stay_id", "BIGINT"),
        ("starttime", "TIMESTAMP"),
        ("endtime", "TIMESTAMP"),
        ("itemid", "INTEGER"),
        ("value", "DOUBLE"),
        ("valueuom", "VARCHAR"),
    ),
    "d_items": (
        ("itemid", "INTEGER"),
        ("label", "VARCHAR"),
        ("linksto", "VARCHAR"),
        ("unitname", "VARCHAR"),
    ),
    "d_labitems": (
        ("itemid", "INTEGER"),
        ("label", "VARCHAR"),
        ("fluid", "VARCHAR"),
        ("unitname", "VARCHAR"),
    ),
}

EVENT_TABLES = ("chartevents", "labevents")
INTERVAL_TABLES = ("infusions", "procedures")
RAW_TABLES = tuple(TABLES)


def dictionary_rows() -> dict[str, list[tuple]]:
    """Rows for ``d_items`` (chart, infusion, procedure) and ``d_labitems``."""
    d_items = [
        (e.item_id, e.label, e.source_table, e.unit)
        for e in CHART_ITEMS + INFUSION_ITEMS + PROCEDURE_ITEMS
    ]
    d_labitems = [
        (e.item_id, e.label, "Blood" if e.item_id != 70079 else "Urine", e.unit)
        for e in LAB_ITEMS
    ]
    return {"d_items": sorted(d_items), "d_labitems": sorted(d_labitems)}


def describe_schema() -> str:
    """Plain-text table listing shown to agents in place of the raw schema."""
    lines = []
    for name, cols in TABLES.items():
        lines.append(f"{name}(" + ", ".join(f"{c} {t}" for c, t in cols) + ")")
    return "\n".join(lines)
