"""Export WordNet noun synsets as a convis lexicon (JSON lines).

    pip install nltk && python -m nltk.downloader wordnet
    python scripts/export_wordnet.py > wordnet_nouns.jsonl
"""

import json
import sys

from nltk.corpus import wordnet as wn


def main() -> None:
    for s in wn.all_synsets(pos="n"):
        hypernyms = [h.name() for h in s.hypernyms() + s.instance_hypernyms()]
        row = {
            "id": s.name(),
            "lemmas": [l.name() for l in s.lemmas()],
            "definition": s.definition(),
            "hypernyms": hypernyms,
        }
        sys.stdout.write(json.dumps(row) + "\n")


if __name__ == "__main__":
    main()
