"""Regenerate the bundled demo dataset under src/ragintrinsics/data/demo/.

Ten conversations over a twenty-document corpus, a gold file, and a
scripted-backend rule file that answers every prompt the four flows (plus
the hd/uq/cg post steps) send for these conversations.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from ragintrinsics import prompts
from ragintrinsics.segmenter import tag_response

OUT = Path(__file__).resolve().parents[1] / "src" / "ragintrinsics" / "data" / "demo"

END = "<|end_of_text|>"
ROLE = "<|start_of_role|>{}<|end_of_role|>"

TOPICS = [
    # (id, gold doc, distractor doc, turns, rewrite, answerable, answer, certainty, correct)
    dict(
        id="c01",
        docs=[
            ("d01", "Resetting an IBM Cloud password",
             "To reset your IBM Cloud password, open the login page and click Forgot password. "
             "A reset link is sent to the email address on your account."),
            ("d02", "IBM Cloud billing",
             "IBM Cloud invoices are issued monthly. Billing contacts can download invoices from the account page."),
        ],
        turns=[("user", "I use IBM Cloud for my projects."),
               ("assistant", "Great, how can I help with IBM Cloud?"),
               ("user", "I forgot my password. How do I reset it?")],
        rewrite="How do I reset my IBM Cloud password?",
        answerable=True,
        answer="Click Forgot password on the IBM Cloud login page. A reset link is emailed to you.",
        certainty="85%", correct=True, target=85, cites={0: ["d01"], 1: ["d01"]},
    ),
    dict(
        id="c02",
        docs=[
            ("d03", "Domain Name System",
             "DNS translates human readable domain names into IP addresses. Resolvers query authoritative name servers."),
            ("d04", "DHCP basics",
             "DHCP assigns IP addresses to devices on a network automatically. Leases expire after a set time."),
        ],
        turns=[("user", "What is DNS?")],
        rewrite="What is DNS?",
        answerable=True,
        answer="DNS translates domain names into IP addresses.",
        certainty="95%", correct=True, target=95, cites={0: ["d03"]},
    ),
    dict(
        id="c03",
        docs=[
            ("d05", "Sorting lists in Python",
             "The sorted function returns a new sorted list. The list sort method sorts a list in place."),
            ("d06", "Python dictionaries",
             "Dictionaries map keys to values. Since Python 3.7 dictionaries preserve insertion order."),
        ],
        turns=[("user", "I am learning Python lists."),
               ("assistant", "Lists are ordered, mutable sequences."),
               ("user", "How can I sort one without changing it?")],
        rewrite="How can I sort a Python list without modifying the original list?",
        answerable=True,
        answer="Use the sorted function, which returns a new sorted list.",
        certainty="75%", correct=True, target=75, cites={0: ["d05"]},
    ),
    dict(
        id="c04",
        docs=[
            ("d07", "Photosynthesis",
             "Photosynthesis converts light energy into chemical energy. Plants release oxygen as a by-product."),
            ("d08", "Cellular respiration",
             "Cellular respiration breaks down glucose to release energy. It consumes oxygen and produces carbon dioxide."),
        ],
        turns=[("user", "What gas do plants release during photosynthesis?")],
        rewrite="What gas do plants release during photosynthesis?",
        answerable=True,
        answer="Plants release oxygen during photosynthesis.",
        certainty="85%", correct=True, target=85, cites={0: ["d07"]},
    ),
    dict(
        id="c05",
        docs=[
            ("d09", "Mount Everest",
             "Mount Everest is the highest mountain above sea level. Its summit is 8849 metres high."),
            ("d10", "K2",
             "K2 is the second highest mountain on Earth. It lies on the border of Pakistan and China."),
        ],
        turns=[("user", "Tell me about Mount Everest."),
               ("assistant", "Mount Everest is in the Himalayas."),
               ("user", "Who was the first person to ski down it?")],
        rewrite="Who was the first person to ski down Mount Everest?",
        answerable=False,
        answer="Mount Everest is the highest mountain above sea level.",
        certainty="25%", correct=False, target=15, cites={},
    ),
    dict(
        id="c06",
        docs=[
            ("d11", "Boiling point of water",
             "At sea level water boils at 100 degrees Celsius. At higher altitude the boiling point is lower."),
            ("d12", "Freezing point of water",
             "Pure water freezes at 0 degrees Celsius. Dissolved salt lowers the freezing point."),
        ],
        turns=[("user", "At what temperature does water boil at sea level?")],
        rewrite="At what temperature does water boil at sea level?",
        answerable=True,
        answer="Water boils at 100 degrees Celsius at sea level.",
        certainty="95%", correct=True, target=95, cites={0: ["d11"]},
    ),
    dict(
        id="c07",
        docs=[
            ("d13", "HTTP status codes",
             "A 404 status code means the requested resource was not found. A 500 code signals a server error."),
            ("d14", "HTTP methods",
             "GET retrieves a resource. POST submits data to be processed."),
        ],
        turns=[("user", "My site returns a 404."),
               ("assistant", "That is an HTTP status code."),
               ("user", "What does that code mean?")],
        rewrite="What does the HTTP 404 status code mean?",
        answerable=True,
        answer="A 404 status code means the requested resource was not found.",
        certainty="65%", correct=False, target=65, cites={0: ["d13"]},
    ),
    dict(
        id="c08",
        docs=[
            ("d15", "The Great Wall of China",
             "The Great Wall of China was built over many centuries. Its total length is over 21000 kilometres."),
            ("d16", "The Forbidden City",
             "The Forbidden City was the imperial palace in Beijing. It now houses the Palace Museum."),
        ],
        turns=[("user", "How many bricks were used to build the Great Wall of China?")],
        rewrite="How many bricks were used to build the Great Wall of China?",
        answerable=False,
        answer="The Great Wall of China is over 21000 kilometres long.",
        certainty="15%", correct=False, target=15, cites={},
    ),
    dict(
        id="c09",
        docs=[
            ("d17", "Git branches",
             "A git branch is a movable pointer to a commit. Create one with git branch followed by a name."),
            ("d18", "Git remotes",
             "A remote is a shared copy of a repository. Use git push to send commits to a remote."),
        ],
        turns=[("user", "I'm new to git."),
               ("assistant", "Git is a version control system."),
               ("user", "How do I create a new branch?")],
        rewrite="How do I create a new branch in git?",
        answerable=True,
        answer="Run git branch followed by a name to create a branch.",
        certainty="75%", correct=True, target=75, cites={0: ["d17"]},
    ),
    dict(
        id="c10",
        docs=[
            ("d19", "Speed of light",
             "Light travels at about 299792 kilometres per second in a vacuum. Nothing with mass can reach this speed."),
            ("d20", "Speed of sound",
             "Sound travels at about 343 metres per second in dry air. It moves faster in water."),
        ],
        turns=[("user", "How fast does light travel in a vacuum?")],
        rewrite="How fast does light travel in a vacuum?",
        answerable=True,
        answer="Light travels at about 299792 kilometres per second in a vacuum.",
        certainty="85%", correct=True, target=85, cites={0: ["d19"]},
    ),
]


def anchored(last_content: str, role: str) -> str:
    """Regex matching a prompt whose final turn is ``last_content`` followed by ``role``."""
    return re.escape(last_content + END + ROLE.format(role)) + r"\Z"


def rules_for(topic: dict) -> list[dict]:
    query = topic["turns"][-1][1]
    answer = topic["answer"]
    rules = [
        {"match": "regex", "pattern": anchored(query, prompts.REWRITE_ROLE),
         "response": json.dumps({"rewritten_question": topic["rewrite"]})},
        {"match": "regex", "pattern": anchored(query, prompts.ANSWERABILITY_ROLE),
         "response": "answerable" if topic["answerable"] else "unanswerable"},
        {"match": "regex", "pattern": anchored(query, "assistant"), "response": answer},
        {"match": "regex", "pattern": anchored(answer, prompts.CERTAINTY_ROLE), "response": topic["certainty"]},
    ]
    tagged_i = tag_response(answer, "i")
    verdicts = [{"i": k, "f": "faithful", "r": "Supported by the documents."} for k in range(len(tagged_i))]
    if not topic["answerable"]:
        verdicts[-1]["f"] = "unfaithful"
    rules.append({"match": "regex",
                  "pattern": re.escape(tagged_i.rendered + END) + ".*" + re.escape(prompts.HALLUCINATION_INSTRUCTION),
                  "response": json.dumps(verdicts)})
    tagged_r = tag_response(answer, "r")
    # Gold doc is first, so its sentences carry ids c0 and c1 when retrieved first.
    cites = [{"r": k, "c": [0] if str(k) in {str(x) for x in topic["cites"]} else []} for k in range(len(tagged_r))]
    rules.append({"match": "regex",
                  "pattern": re.escape(tagged_r.rendered + END) + ".*" + re.escape(prompts.CITATION_INSTRUCTION),
                  "response": json.dumps(cites)})
    return rules


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    corpus, convs, gold, rules = [], [], [], []
    for topic in TOPICS:
        for doc_id, title, text in topic["docs"]:
            corpus.append({"doc_id": doc_id, "title": title, "text": text})
        convs.append({"id": topic["id"], "turns": [{"role": r, "content": c} for r, c in topic["turns"]]})
        gold.append({
            "id": topic["id"],
            "gold_doc_ids": [topic["docs"][0][0]],
            "answerability": "answerable" if topic["answerable"] else "unanswerable",
            "reference_answer": topic["answer"] if topic["answerable"] else None,
            "correct": topic["correct"],
            "target_certainty": topic["target"],
            "citations": {str(k): v for k, v in topic["cites"].items()},
        })
        rules.extend(rules_for(topic))

    def dump(name: str, rows: list[dict]) -> None:
        (OUT / name).write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")

    dump("corpus.jsonl", corpus)
    dump("conversations.jsonl", convs)
    dump("gold.jsonl", gold)
    script = {"strict": True, "rules": rules}
    (OUT / "script.json").write_text(json.dumps(script, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
