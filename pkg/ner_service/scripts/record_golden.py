"""Record golden /ner fixtures from the configured model.

Run whenever the pinned model changes:

    python3 scripts/record_golden.py > tests/data/golden_spans.json
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ner_service.models import build_model, resolve_overlaps  # noqa: E402

GOLDEN_INPUTS = [
    "Methanol reacts with HCl.",
    "",
    "Adding sodium hydroxide to water precipitates the salt.",
    "CO2 and carbon dioxide are the same species written two ways.",
    "Nothing chemically specific happens in this sentence.",
    "Palladium catalyzes carbonylation reactions that consume formic acid.",
    "Sulfuric acid, toluene, and a trace of ozone were mixed at low temperature.",
]


def main() -> None:
    spec = os.environ.get("NER_MODEL", "lexicon:")
    model = build_model(spec)
    cases = []
    for text in GOLDEN_INPUTS:
        spans = resolve_overlaps(model.predict(text))
        cases.append({"text": text, "spans": [s.to_json() for s in spans]})
    print(json.dumps({"model_id": model.model_id, "cases": cases}, indent=1, ensure_ascii=False))


if __name__ == "__main__":
    main()
