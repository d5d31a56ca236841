#!/usr/bin/env python3
"""Writes the synthetic corpora, ground truth and plans used by the test suite.

Countries, answers and projection loadings are invented for testing only.
Replay caches are recorded separately with record_replay.sh.
"""
import json
import pathlib
import random

HERE = pathlib.Path(__file__).resolve().parent
DATA = HERE.parent.parent / "data" / "corpora"

COUNTRIES = [
    ("Testland", "North Province", "Testlandic"),
    ("Otherland", "Coastal District", "Otherlandish"),
    ("Thirdland", "Upper Valley", "Thirdlandic"),
]

WVS_ANSWERS = {
    "Testland": {"Q1": 8, "Q2": [1, 3, 6, 8, 10], "Q3": 5, "Q4": 2, "Q5": 2, "Q6": [1, 3],
                 "Q7": 2, "Q8": 4, "Q9": 2, "Q10": 2},
    "Otherland": {"Q1": 3, "Q2": [2, 4, 5, 6, 8], "Q3": 8, "Q4": 3, "Q5": 1, "Q6": [3, 4],
                  "Q7": 1, "Q8": 9, "Q9": 1, "Q10": 1},
    "Thirdland": {"Q1": 10, "Q2": [1, 3, 7, 9, 11], "Q3": 2, "Q4": 1, "Q5": 3, "Q6": [1, 2],
                  "Q7": 3, "Q8": 2, "Q9": 3, "Q10": 2},
}

IW_ANCHORS = {"Testland": (0.4, -0.2), "Otherland": (1.5, 1.1), "Thirdland": (-1.3, -1.0)}

# (traditional_secular, survival_selfexpr) loadings of the projection fixture.
ORDINAL_LOADINGS = {
    "Q1": (-0.8, 0.0), "Q3": (0.6, 0.0), "Q4": (-0.5, 0.0), "Q5": (0.4, 0.0),
    "Q7": (0.0, -0.6), "Q8": (0.0, 0.7), "Q9": (0.0, -0.5), "Q10": (0.0, -0.4),
}
# Independence, determination +1; religious faith, obedience -1.
Q2_SCORES = [0, 1, 0, 0, 0, 0, 0, 1, -1, 0, -1]
# Materialist aims -1, post-materialist aims +1.
Q6_SCORES = [-1, -1, 1, 1]


def dump(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def projection_corpus():
    bank = json.loads((DATA / "wvs_en.json").read_text(encoding="utf-8"))
    bank["name"] = "wvs"
    loadings = {}
    for q in bank["questions"]:
        scale = q["scale"]
        qid = q["id"]
        if scale["kind"] == "ordinal":
            n = scale["q"]
            ts, se = ORDINAL_LOADINGS[qid]
            loadings[qid] = {"traditional_secular": ts, "survival_selfexpr": se,
                             "mean": (n + 1) / 2, "sd": (n - 1) / 3}
        elif qid == "Q2":
            loadings[qid] = {"traditional_secular": 0.7, "survival_selfexpr": 0.0,
                             "mean": 0.0, "sd": 1.0, "option_scores": Q2_SCORES}
        else:
            loadings[qid] = {"traditional_secular": 0.0, "survival_selfexpr": 0.8,
                             "mean": 0.0, "sd": 1.0, "option_scores": Q6_SCORES}
    bank["projection"] = loadings
    dump(HERE / "corpora" / "wvs_testland_iw.json", bank)


def hofstede_formulas():
    bank = json.loads((DATA / "hofstede_en.json").read_text(encoding="utf-8"))
    return bank["hofstede_spec"]


def hofstede_value(spec, answers):
    out = {}
    for dim, f in spec.items():
        total = f.get("constant", 0)
        for t in f["terms"]:
            total += t["weight"] * (answers[f"Q{t['plus']}"] - answers[f"Q{t['minus']}"])
        out[dim] = total
    return out


def hofstede_answers():
    spec = hofstede_formulas()
    rng = random.Random(2024)
    while True:
        sets = {c: {f"Q{i}": rng.randint(1, 5) for i in range(1, 25)} for c, _, _ in COUNTRIES}
        values = {c: hofstede_value(spec, a) for c, a in sets.items()}
        per_country = [sorted(v.values()) for v in values.values()]
        distinct_dims = all(len({values[c][d] for c in values}) == 3 for d in spec)
        distinct_within = all(len(set(v)) == 6 for v in per_country)
        if distinct_dims and distinct_within:
            return sets, values


def ground_truth():
    for country, _, _ in COUNTRIES:
        x, y = IW_ANCHORS[country]
        dump(HERE / "ground_truth" / f"wvs_{country.lower()}.json",
             {"country": country, "language": "en", "answers": WVS_ANSWERS[country],
              "iw_position": {"x": x, "y": y}})
    sets, values = hofstede_answers()
    for country, _, _ in COUNTRIES:
        dump(HERE / "ground_truth" / f"hofstede_{country.lower()}.json",
             {"country": country, "language": "en", "answers": sets[country],
              "hofstede_official": values[country]})


def plans():
    countries = [{"name": c, "region": r, "nationality": n} for c, r, n in COUNTRIES]
    gen = {"model": "scripted-respondent", "temperature": 0.7, "top_p": 1.0, "max_tokens": 512}
    modes = ["FC", "FR", "FO", "FU"]
    dump(HERE / "plans" / "wvs_replay.json",
         {"bank": "../corpora/wvs_testland_iw.json", "countries": countries, "languages": ["en"],
          "modes": modes, "gen": gen, "repeats": 2, "parallelism": 4})
    dump(HERE / "plans" / "hofstede_replay.json",
         {"bank": "../../../data/corpora/hofstede_en.json", "countries": countries, "languages": ["en"],
          "modes": modes, "gen": gen, "repeats": 1, "parallelism": 4})
    dump(HERE / "plans" / "wvs_refusal.json",
         {"bank": "../../../data/corpora/wvs_en.json", "countries": countries[:1], "languages": ["en"],
          "modes": ["FO"], "gen": dict(gen, model="scripted-refuser"), "repeats": 2, "parallelism": 2})


if __name__ == "__main__":
    projection_corpus()
    ground_truth()
    plans()
