#!/usr/bin/env python3
"""Regenerate the committed test fixtures under tests/fixtures/.

Everything is drawn from a fixed-seed RNG, so reruns are byte-identical.
The corpora are synthetic Greek legal boilerplate: already-normalized text
(lowercase, accent-free) for the pretraining / tokenizer / task fixtures,
and accented mixed-case text for the raw-encoding fixtures.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"

SEED = 20240817

# Normalized legal vocabulary used by the pretrain and task corpora.
STEMS = [
    "νομ", "αρθρ", "παραγραφ", "διαταξ", "αποφασ", "δικαστηρι", "υπουργει",
    "κανονισμ", "οδηγι", "τροπολογι", "προεδρ", "δημοκρατι", "συνταγμ",
    "ψηφισμ", "εκλογ", "φορολογι", "εισοδημ", "δαπαν", "συμβασ", "εργασι",
    "μισθ", "ασφαλισ", "συνταξ", "επιδομ", "αδει", "πολεοδομι", "ρυθμισ",
    "κυρωσ", "ποιν", "προστιμ", "διοικησ", "οργανισμ", "αυτοδιοικησ",
    "περιφερει", "βουλ", "γραμματει", "διαταγμ", "εγκυκλι", "προθεσμι",
    "αιτησ", "προσφυγ", "ενστασ", "αγωγ", "μηνυσ", "κατηγορι", "καταδικ",
    "κωδικ", "τελωνει", "δασμ", "εισαγωγ", "εξαγωγ", "εμπορευμ", "αγορ",
    "πωλησ", "μισθωσ", "ακινητ", "ιδιοκτησι", "κληρονομι", "διαθηκ",
    "επιτροπ", "υπηρεσι", "προυπολογισμ", "ελεγχ", "καταρτισ", "εποπτει",
    "θεσμ", "κυβερνησ", "συνεδριασ", "πρακτικ", "ψηφοφορι", "αναθεσ",
    "προμηθει", "διαγωνισμ", "συμμετοχ", "εγγυησ", "δανει", "επιτοκι",
    "τραπεζ", "πιστωσ", "χρηματοδοτησ", "επενδυσ", "αναπτυξ", "επιχειρησ",
    "εμπορι", "βιομηχανι", "γεωργι", "αλιει", "κτηματολογι", "δικηγορ",
    "συμβολαιογραφ", "πρωτοδικει", "εφετει", "αναιρεσ", "εκτελεσ",
    "κατασχεσ", "πλειστηριασμ", "οφειλ", "απαιτησ", "παραγγελι",
    "μεταβιβασ", "απογραφ", "μητρω", "πιστοποιησ", "αδειοδοτησ", "μελετ",
]
SUFFIXES = ["ος", "ου", "ο", "α", "ας", "η", "ης", "ων", "εις", "ες"]
PREFIXES = ["προ", "αντι", "υπο", "επι", "συν", "παρα"]

VERBS = [
    "οριζει", "προβλεπει", "τροποποιει", "καταργει", "αντικαθισταται",
    "ισχυει", "εφαρμοζεται", "δημοσιευεται", "κυρωνεται", "ψηφιζεται",
    "εγκρινεται", "απαγορευεται", "επιτρεπεται", "υποχρεουται",
    "δικαιουται", "συνισταται", "αναστελλεται", "παρατεινεται",
]
FUNCTION_WORDS = [
    "ο", "η", "το", "του", "της", "των", "με", "και", "για", "απο", "προς",
    "κατα", "μετα", "περι", "ως", "εαν", "οταν", "οπως", "στο", "στη",
    "στην", "στον", "που", "καθε", "ανα",
]
NUMBERS = ["1", "2", "3", "4", "12", "15", "25", "45", "80", "120", "2013",
           "2016", "2019", "2020", "4172/2013", "4412/2016", "2690/1999"]


def noun_pool() -> list[str]:
    return [stem + suffix for stem in STEMS for suffix in SUFFIXES]


def write_pretrain(rng: random.Random) -> None:
    nouns = noun_pool()
    lines = []
    for _ in range(100):
        words: list[str] = []
        for _ in range(rng.randint(3, 5)):
            words.append(rng.choice(FUNCTION_WORDS))
            words.append(rng.choice(nouns))
            if rng.random() < 0.5:
                words.append(rng.choice(VERBS))
            if rng.random() < 0.3:
                words.append(rng.choice(NUMBERS))
        lines.append(" ".join(words))
    (FIXTURES / "pretrain_sentences.txt").write_text(
        "\n".join(lines) + "\n", encoding="utf-8"
    )


def write_tokenizer_corpus(rng: random.Random) -> None:
    # A wider word inventory than the pretraining fixture: every noun form
    # plus prefixed variants, each occurring at least once, so vocabulary
    # targets in the low thousands stay reachable without pair exhaustion.
    forms = noun_pool()
    forms += [PREFIXES[i % len(PREFIXES)] + form for i, form in enumerate(forms) if i % 2 == 0]
    rng.shuffle(forms)
    at = 0

    def next_form() -> str:
        nonlocal at
        form = forms[at % len(forms)]
        at += 1
        return form

    lines = []
    while at < len(forms):
        words: list[str] = []
        for _ in range(rng.randint(3, 5)):
            words.append(rng.choice(FUNCTION_WORDS))
            words.append(next_form())
            if rng.random() < 0.4:
                words.append(rng.choice(VERBS))
            if rng.random() < 0.25:
                words.append(rng.choice(NUMBERS))
        lines.append(" ".join(words))
    (FIXTURES / "tokenizer_corpus.txt").write_text(
        "\n".join(lines) + "\n", encoding="utf-8"
    )


# Gazetteers are disjoint from the filler pools so surface forms imply tags.
GAZETTEERS: dict[str, list[list[str]]] = {
    "GPE": [["αθηνα"], ["θεσσαλονικη"], ["πατρα"], ["λαρισα"], ["ηρακλειο"],
            ["ελλαδα"], ["κυπρος"], ["γαλλια"]],
    "PERSON": [["γεωργιος", "παπαδοπουλος"], ["μαρια", "οικονομου"],
               ["νικολαος", "ιωαννιδης"], ["ελενη", "βασιλειου"],
               ["κωνσταντινος", "δημητριου"], ["σοφια", "παππα"]],
    "ORG": [["υπουργειο", "οικονομικων"], ["υπουργειο", "δικαιοσυνης"],
            ["βουλη", "των", "ελληνων"], ["αρειος", "παγος"],
            ["εθνικη", "τραπεζα"], ["δημος", "αθηναιων"]],
    "LEG-REF": [["ν.", "4172/2013"], ["π.δ.", "80/2016"], ["ν.", "2690/1999"],
                ["υ.α.", "1234/2020"], ["ν.", "4412/2016"]],
    "FACILITY": [["λιμανι", "πειραια"], ["νοσοκομειο", "ευαγγελισμος"],
                 ["σταθμος", "λαρισης"], ["αεροδρομιο", "μακεδονια"]],
    "LOC-NAT": [["ολυμπος"], ["πηνειος"], ["παρνηθα"], ["αλιακμονας"]],
    "LOC-UNK": [["θεση", "λακκα"], ["θεση", "ραχες"], ["περιοχη", "καμπος"]],
    "PUBLIC-DOC": [["φεκ", "120/α/2013"], ["φεκ", "45/β/2019"],
                   ["εγκυκλιος", "12/2021"]],
}
NER_TYPES = sorted(GAZETTEERS)

NER_FILLER = [
    "συμφωνα", "με", "την", "αποφαση", "του", "υπουργου", "δημοσιευεται",
    "στο", "τευχος", "και", "ισχυει", "απο", "την", "ψηφιση", "κατα", "την",
    "εφαρμογη", "της", "διαταξης", "οπως", "οριζεται", "στη", "συνεδριαση",
    "εγκριθηκε", "η", "τροποποιηση", "για", "το", "ετος",
]


def ner_sentence(rng: random.Random, forced_type: str) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []

    def filler(k: int) -> None:
        for _ in range(k):
            pairs.append((rng.choice(NER_FILLER), "O"))

    mention_types = [forced_type]
    if rng.random() < 0.5:
        mention_types.append(rng.choice(NER_TYPES))
    filler(rng.randint(1, 3))
    for t in mention_types:
        mention = rng.choice(GAZETTEERS[t])
        pairs.append((mention[0], f"B-{t}"))
        pairs.extend((w, f"I-{t}") for w in mention[1:])
        filler(rng.randint(1, 3))
    return pairs


def write_ner(rng: random.Random) -> None:
    for name, count in (("ner_train.iob", 50), ("ner_val.iob", 12), ("ner_test.iob", 12)):
        blocks = []
        for i in range(count):
            pairs = ner_sentence(rng, NER_TYPES[i % len(NER_TYPES)])
            blocks.append("\n".join(f"{w}\t{t}" for w, t in pairs))
        (FIXTURES / name).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


HIERARCHY: dict[str, dict[str, list[str]]] = {
    "διοικητικο": {
        "οργανωση_διοικησης": ["δημοσιοι_υπαλληλοι", "δημοσια_εγγραφα"],
        "τοπικη_αυτοδιοικηση": ["δημοι", "περιφερειες"],
    },
    "φορολογικο": {
        "φορος_εισοδηματος": ["φυσικα_προσωπα", "νομικα_προσωπα"],
        "τελωνειακα": ["δασμοι", "εισαγωγες"],
    },
    "εργατικο": {
        "συμβασεις_εργασιας": ["μισθοι", "απολυσεις"],
        "κοινωνικη_ασφαλιση": ["συνταξεις", "επιδοματα"],
    },
}

SUBJECT_WORDS = {
    "δημοσιοι_υπαλληλοι": ["υπαλληλος", "διορισμος", "βαθμολογιο", "μοναδα"],
    "δημοσια_εγγραφα": ["εγγραφο", "πρωτοκολλο", "αρχειο", "επικυρωση"],
    "δημοι": ["δημαρχος", "δημοτικο", "συμβουλιο", "κοινοτητα"],
    "περιφερειες": ["περιφερειαρχης", "αιρετος", "χωρικη", "ενοτητα"],
    "φυσικα_προσωπα": ["φορολογουμενος", "δηλωση", "κλιμακα", "τεκμηριο"],
    "νομικα_προσωπα": ["εταιρεια", "κερδη", "μερισμα", "ισολογισμος"],
    "δασμοι": ["δασμος", "δασμολογιο", "ταξινομηση", "αξια"],
    "εισαγωγες": ["εισαγωγεας", "διασαφηση", "φορτιο", "εκτελωνισμος"],
    "μισθοι": ["αποδοχες", "ωραριο", "υπερωρια", "καταβολη"],
    "απολυσεις": ["καταγγελια", "αποζημιωση", "προειδοποιηση", "λυση"],
    "συνταξεις": ["συνταξιουχος", "πλασματικα", "θεμελιωση", "οριο"],
    "επιδοματα": ["επιδομα", "δικαιουχος", "καταβαλλεται", "τεκνα"],
}

CLS_FILLER = ["ρυθμιση", "διαδικασια", "προυποθεσεις", "εφαρμογη", "κριτηρια",
              "οργανα", "αρμοδιοτητα", "μεταβατικες", "διαταξεις"]


def write_cls(rng: random.Random) -> None:
    rows = []
    records = []
    for volume, chapters in HIERARCHY.items():
        for chapter, subjects in chapters.items():
            for subject in subjects:
                rows.append(f"{volume}\t{chapter}\t{subject}")
                for _ in range(6):
                    words = rng.sample(SUBJECT_WORDS[subject], 3)
                    words += rng.sample(CLS_FILLER, 2)
                    rng.shuffle(words)
                    records.append(
                        {
                            "text": "ο νομος οριζει " + " ".join(words),
                            "volume": volume,
                            "chapter": chapter,
                            "subject": subject,
                        }
                    )
    (FIXTURES / "cls_hierarchy.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    lines = [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records]
    (FIXTURES / "cls_records.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


RAW_TEXTS = {
    "gazette_utf8.txt": (
        "utf-8",
        "legal",
        "Ο παρών νόμος ορίζει  τις διατάξεις εφαρμογής του άρθρου 12.\n"
        "Η ισχύς του παρόντος αρχίζει από τη δημοσίευσή του.\n",
    ),
    "gazette_cp1253.txt": (
        "windows-1253",
        "legal",
        "Άρθρο πρώτο. Η απόφαση δημοσιεύεται στην Εφημερίδα της Κυβερνήσεως.\n",
    ),
    "gazette_iso.txt": (
        "iso-8859-7",
        "legal",
        "Η απόφαση αυτή να δημοσιευθεί στην Εφημερίδα της Κυβερνήσεως.\n",
    ),
    "gazette_unknown.txt": (
        "unknown:windows-1253",
        "legal",
        "Άρθρο δεύτερο. Ο όρος „νόμος” περιλαμβάνει και τα προεδρικά διατάγματα.\n",
    ),
    "parliament_utf8.txt": (
        "utf-8",
        "nonlegal",
        "Η συζήτηση στην ολομέλεια αφορά την οικονομική πολιτική της Ένωσης.\n",
    ),
}


def write_raw() -> None:
    raw_dir = FIXTURES / "raw"
    raw_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# path\tencoding\tcontext\tsize_bytes"]
    for name, (encoding, context, text) in RAW_TEXTS.items():
        declared, _, actual = encoding.partition(":")
        codec = {
            "utf-8": "utf-8",
            "windows-1253": "cp1253",
            "iso-8859-7": "iso8859_7",
        }[actual or declared]
        data = text.encode(codec)
        (raw_dir / name).write_bytes(data)
        lines.append(f"{name}\t{declared}\t{context}\t{len(data)}")
    (raw_dir / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    write_pretrain(rng)
    write_tokenizer_corpus(rng)
    write_ner(rng)
    write_cls(rng)
    write_raw()
    for path in sorted(FIXTURES.rglob("*")):
        if path.is_file():
            print(f"{path.relative_to(ROOT)}\t{path.stat().st_size}B")


if __name__ == "__main__":
    main()
