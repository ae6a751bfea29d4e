"""Hand-built single-stay stores for oracle tests."""

from __future__ import annotations

import datetime as dt
from pathlib import Path

import pandas as pd

from clinskill.ehr import schema
from clinskill.ehr.store import EhrStore

INTIME = dt.datetime(2150, 3, 1, 8, 0)
STAY, HADM, SUBJ = 1, 100, 1000


def make_store(events=(), intervals=(), los_hours=96, texts=()) -> EhrStore:
    """``events``: (hour, itemid, value); ``intervals``: (start_h, end_h, itemid, rate); ``texts``: (hour, itemid, text)."""
    t = lambda h: INTIME + dt.timedelta(minutes=round(h * 60))
    chart, lab = [], []
    for h, item, value in events:
        entry = schema.DICTIONARY[item]
        row = dict(subject_id=SUBJ, hadm_id=HADM, stay_id=STAY, charttime=t(h), itemid=item,
                   value=str(value), valuenum=float(value), valueuom=entry.unit)
        (chart if entry.source_table == "chartevents" else lab).append(row)
    for h, item, text in texts:
        lab.append(dict(subject_id=SUBJ, hadm_id=HADM, stay_id=STAY, charttime=t(h), itemid=item,
                        value=text, valuenum=None, valueuom="text"))
    inf, proc = [], []
    for s, e, item, rate in intervals:
        entry = schema.DICTIONARY[item]
        base = dict(subject_id=SUBJ, hadm_id=HADM, stay_id=STAY, starttime=t(s), endtime=t(e), itemid=item)
        if entry.source_table == "infusions":
            inf.append({**base, "rate": rate, "rateuom": entry.unit})
        else:
            proc.append({**base, "value": (e - s) * 60.0, "valueuom": "min"})
    cols = lambda name: [c for c, _ in schema.TABLES[name]]
    tables = {
        "subjects": pd.DataFrame([(SUBJ, 60, "F")], columns=cols("subjects")),
        "admissions": pd.DataFrame([(HADM, SUBJ, t(-2), t(los_hours + 24))], columns=cols("admissions")),
        "icustays": pd.DataFrame([(STAY, HADM, SUBJ, INTIME, t(los_hours))], columns=cols("icustays")),
        "chartevents": pd.DataFrame(chart, columns=cols("chartevents")),
        "labevents": pd.DataFrame(lab, columns=cols("labevents")),
        "infusions": pd.DataFrame(inf, columns=cols("infusions")),
        "procedures": pd.DataFrame(proc, columns=cols("procedures")),
    }
    return EhrStore(tables)


def gcs(hour, eye, verbal, motor):
    return [(hour, 220739, eye), (hour, 223900, verbal), (hour, 223901, motor)]


LACTATE = 50813


def make_lab_store(per_stay, item=LACTATE, los_hours=72) -> EhrStore:
    """One stay per entry of ``per_stay``; each entry is a list of (hour, value) for ``item``."""
    t = lambda h: INTIME + dt.timedelta(minutes=round(h * 60))
    entry = schema.DICTIONARY[item]
    subj, adm, icu, rows = [], [], [], []
    for k, values in enumerate(per_stay, start=1):
        sid, hid, pid = k, 100 + k, 1000 + k
        subj.append((pid, 50 + k % 30, "F" if k % 2 else "M"))
        adm.append((hid, pid, t(-2), t(los_hours + 24)))
        icu.append((sid, hid, pid, INTIME, t(los_hours)))
        for h, v in values:
            rows.append(dict(subject_id=pid, hadm_id=hid, stay_id=sid, charttime=t(h), itemid=item,
                             value=str(v), valuenum=float(v), valueuom=entry.unit))
    cols = lambda name: [c for c, _ in schema.TABLES[name]]
    tables = {
        "subjects": pd.DataFrame(subj, columns=cols("subjects")),
        "admissions": pd.DataFrame(adm, columns=cols("admissions")),
        "icustays": pd.DataFrame(icu, columns=cols("icustays")),
        "chartevents": pd.DataFrame([r for r in rows if entry.source_table == "chartevents"], columns=cols("chartevents")),
        "labevents": pd.DataFrame([r for r in rows if entry.source_table != "chartevents"], columns=cols("labevents")),
        "infusions": pd.DataFrame([], columns=cols("infusions")),
        "procedures": pd.DataFrame([], columns=cols("procedures")),
    }
    return EhrStore(tables)


MOCK_DIR = Path(__file__).parent / "data" / "mock"
SMOKE_CONCEPTS = "vitalsign,norepinephrine,gcs,creatinine_baseline,ventilation"


def pipeline_steps(out: Path, n_stays: int = 50, seed: int = 7) -> list[list[str]]:
    """argv lists for the full offline pipeline writing under ``out``."""
    o = str(out)
    qa = f"mock:{MOCK_DIR / 'qa.txt'}"
    common = ["--store", f"{o}/cohort", "--questions", f"{o}/questions.jsonl"]
    return [
        ["generate-cohort", "--seed", str(seed), "--n-stays", str(n_stays), "--out", o],
        ["build-graph", "--out", f"{o}/graph"],
        ["gen-questions", "--store", f"{o}/cohort", "--concepts", SMOKE_CONCEPTS, "--seed", str(seed), "--out", o],
        ["synthesize", *common, "--backend", f"mock:{MOCK_DIR / 'synth.txt'}", "--max-iterations", "3", "--out", o],
        ["evaluate-qa", *common, "--config", "zeroshot", "--backend", qa, "--out", o],
        ["evaluate-qa", *common, "--config", "autoform", "--library", f"{o}/library", "--backend", qa, "--out", o],
        ["run-surveillance", "--store", f"{o}/cohort", "--stays", "5", "--backend",
         f"mock:{MOCK_DIR / 'surv.txt'}", "--out", o],
        ["report", "--qa", f"{o}/qa_zeroshot.jsonl", "--qa", f"{o}/qa_autoform.jsonl", "--questions",
         f"{o}/questions.jsonl", "--surveillance", f"{o}/surveillance.jsonl", "--labels", f"{o}/labels.jsonl",
         "--surveillance-name", "mock", "--out", f"{o}/report"],
    ]


def tree_digest(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != ".lock"}
