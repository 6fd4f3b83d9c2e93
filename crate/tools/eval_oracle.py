#!/usr/bin/env python3
"""Brute-force reference for the synthetic evaluation.

Recomputes every step from the raw fixture files with plain loops (no
index structures, no shared code with the Rust crates) and writes the
expected metrics for both modes:

    python3 tools/eval_oracle.py > fixtures/eval_oracle.json
"""

import json
import math
import re
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIX = ROOT / "fixtures"

RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"
RDFS_LABEL = "http://www.w3.org/2000/01/rdf-schema#label"
ALT_LABEL = "http://www.w3.org/2004/02/skos/core#altLabel"
N, K = 10, 10
FLOOR = -100.0
BOOST = 1e6
K1, B = 1.2, 0.75
HITS = (1, 5, 10)
PARTITION = {"person": "Creator", "publication": "Publication", "venue": "Stream"}


def parse_nt(path):
    pat = re.compile(r'^<([^>]*)> <([^>]*)> (?:<([^>]*)>|"((?:[^"\\]|\\.)*)"(?:\^\^<[^>]*>|@[\w-]+)?) \.$')
    facts = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = pat.match(line)
        assert m, line
        s, p, o_iri, o_lit = m.groups()
        if o_iri is not None:
            facts.append((s, p, ("iri", o_iri)))
        else:
            facts.append((s, p, ("lit", json.loads('"' + o_lit + '"'))))
    return facts


def read_labels(path):
    recs = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        aliases = [a.strip() for a in cols[3].split("|")] if len(cols) > 3 else []
        recs.append({"iri": cols[0], "type": cols[1], "label": cols[2].strip(),
                     "aliases": [a for a in aliases if a]})
    return recs


def normalize(s):
    out = " ".join(s.lower().split())
    pairs = [('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’")]
    changed = True
    while changed:
        changed = False
        for a, b in pairs:
            if len(out) >= 2 and out.startswith(a) and out.endswith(b):
                out = out[1:-1].strip()
                changed = True
                break
    return out


def tokens(s):
    return [t for t in re.split(r"[^\w]|_", s) if t]


def names_of(rec):
    return sorted({normalize(x) for x in [rec["label"]] + rec["aliases"] if normalize(x)})


def retrieve(recs, query, kg_type, n):
    docs = [r for r in recs if r["type"] == kg_type]
    if not docs:
        return []
    q = normalize(query)
    doc_terms = {r["iri"]: [t for name in names_of(r) for t in tokens(name)] for r in docs}
    avg = max(sum(len(v) for v in doc_terms.values()) / len(docs), 1.0)
    scores = {}
    for term in sorted(set(tokens(q))):
        df = sum(1 for r in docs if term in doc_terms[r["iri"]])
        if df == 0:
            continue
        idf = math.log(1.0 + (len(docs) - df + 0.5) / (df + 0.5))
        for r in sorted(docs, key=lambda r: r["iri"]):
            tf = doc_terms[r["iri"]].count(term)
            if tf == 0:
                continue
            dl = len(doc_terms[r["iri"]])
            norm = tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * dl / avg))
            scores[r["iri"]] = scores.get(r["iri"], 0.0) + idf * norm
    for r in docs:
        if q in names_of(r):
            scores[r["iri"]] = scores.get(r["iri"], 0.0) + BOOST
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return [iri for iri, _ in ranked]


def humanize(iri):
    local = re.split(r"[#/]", iri.rstrip("/#"))[-1]
    words = []
    for part in re.split(r"[_\- ]", local):
        words += [w.lower() for w in re.findall(r"[A-Z]+(?![a-z])|[A-Z]?[a-z0-9]+", part)]
    return " ".join(words) if words else iri


def neighborhood(facts, labels, iri, k):
    name = lambda x: labels.get(x) or humanize(x)
    rows = []
    for s, p, o in facts:
        if p in (RDFS_LABEL, ALT_LABEL):
            continue
        if s == iri:
            kind, val = o
            tail = name(val) if kind == "iri" else val
            rows.append(((0, p, kind == "lit", val), f"{name(s)} - {name(p)} - {tail}"))
        elif o == ("iri", iri):
            rows.append(((1, p, False, s), f"{name(s)} - {name(p)} - {name(iri)}"))
    rows = sorted(set(rows))
    return [sentence for _, sentence in rows[:k]]


def scoring_prompt(question, sentence):
    return (f'Given this input text: "{question}"\nAnd the neighborhood context:\n{sentence}\n'
            "Is this the correct entity?\nAnswer with 'yes' or 'no'.")


def mock_logprobs(table, prompt):
    for rule in table["rules"]:
        if "logprobs" in rule and all(c in prompt for c in rule["contains"]):
            return rule["logprobs"]
    return table["default_logprobs"]


def mock_completion(table, prompt):
    for rule in table["rules"]:
        if "completion" in rule and all(c in prompt for c in rule["contains"]):
            return rule["completion"]
    raise AssertionError("no completion for " + prompt)


def yes_score(entries):
    ys = [e["logprob"] for e in entries if e["token"].strip().lower() == "yes"]
    if not ys:
        return FLOOR
    return math.log(sum(math.exp(y) for y in ys))


def mentions_from(text):
    for i, ch in enumerate(text):
        if ch != "[":
            continue
        try:
            arr, _ = json.JSONDecoder().raw_decode(text[i:])
        except ValueError:
            continue
        if isinstance(arr, list):
            return [(m["label"].strip(), m["type"].lower()) for m in arr]
    return []


def link(question, mode, recs, facts, labels, table):
    completion = mock_completion(table, f'Sentence: "{question}"')
    ranked, retrieved = [], []
    for label, mtype in mentions_from(completion):
        cands = retrieve(recs, label, PARTITION[mtype], N)
        retrieved.append(cands)
        if mode == "text_only":
            ranked.append(cands)
            continue
        scored = []
        for pos, iri in enumerate(cands):
            sents = neighborhood(facts, labels, iri, K)
            vals = [yes_score(mock_logprobs(table, scoring_prompt(question, s))) for s in sents]
            agg = sum(sorted(vals)) / len(vals) if vals else FLOOR
            scored.append((-agg, pos, iri))
        ranked.append([iri for _, _, iri in sorted(scored)])
    return ranked, retrieved


def metrics(ranked, retrieved, gold):
    gold = {g.rstrip("/") for g in gold}
    pred = {lst[0].rstrip("/") for lst in ranked if lst}
    tp = len(pred & gold)
    p = tp / len(pred) if pred else 0.0
    r = tp / len(gold)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    rr, hits, found = [], {h: 0 for h in HITS}, 0
    for g in sorted(gold):
        ranks = [lst.index(g) + 1 for lst in ([x.rstrip("/") for x in l] for l in ranked) if g in lst]
        best = min(ranks) if ranks else None
        rr.append(1.0 / best if best else 0.0)
        for h in HITS:
            hits[h] += 1 if best and best <= h else 0
        found += 1 if any(g in [x.rstrip("/") for x in l] for l in retrieved) else 0
    return {
        "precision": p, "recall": r, "f1": f1, "mrr": sum(rr) / len(rr),
        **{f"hits@{h}": hits[h] / len(gold) for h in HITS},
        "retrieval_recall": found / len(gold),
    }


def main():
    facts = parse_nt(FIX / "kg.nt")
    labels = {}
    for s, p, o in facts:
        if p == RDFS_LABEL and o[0] == "lit" and s not in labels:
            labels[s] = o[1]
    recs = read_labels(FIX / "labels.tsv")
    table = json.loads((FIX / "mock_rules.json").read_text(encoding="utf-8"))
    items = json.loads((FIX / "eval_synthetic.json").read_text(encoding="utf-8"))
    out = {}
    for mode in ("full", "text_only"):
        per = {}
        for item in items:
            ranked, retrieved = link(item["question"], mode, recs, facts, labels, table)
            per[item["question_id"]] = metrics(ranked, retrieved, item["gold_entities"])
        keys = ["f1", "mrr"] + [f"hits@{h}" for h in HITS] + ["retrieval_recall"]
        out[mode] = {
            "aggregate": {k: sum(q[k] for q in per.values()) / len(per) for k in keys},
            "per_question": per,
        }
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
