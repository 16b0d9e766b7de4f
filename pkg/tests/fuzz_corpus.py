"""Generator for non-canonical but valid event records, plus an
independent canonicalizer used as the round-trip oracle."""

from __future__ import annotations

import json
import random

from afhe_audit.core_metrics import Decider, LaborRole, Phase

A = Decider.AI_ALONE

OPTIONAL = ("ai_confidence", "ai_decision", "human_decision", "human_role")


def fuzz_record(rnd: random.Random, i: int) -> str:
    """A valid record in some non-canonical rendering."""
    decider = rnd.choice(list(Decider))
    obj = {
        "task_id": rnd.choice([f"task-{i}", f"tâche-{i}", f"t {i}\t"]),
        "timestamp": rnd.randrange(0, 2**41),
        "decider": decider.value,
        "phase": rnd.choice(list(Phase)).value,
    }
    if decider is A or rnd.random() < 0.5:
        obj["ai_decision"] = rnd.choice(["approve", "deny", "class-3", "ünïcode"])
    if decider is not A:
        obj["human_decision"] = rnd.choice(["approve", "deny", "escalate"])
    if rnd.random() < 0.7:
        obj["ai_confidence"] = rnd.choice([rnd.random(), 0, 1, 0.5, round(rnd.random(), 3)])
    if rnd.random() < 0.5:
        obj["reviewed_async"] = rnd.random() < 0.5
    if rnd.random() < 0.4:
        obj["human_role"] = rnd.choice(list(LaborRole)).value
    if rnd.random() < 0.2:
        obj["ai_decision" if decider is not A else "human_decision"] = None
    if rnd.random() < 0.3:
        obj["x_source"] = rnd.choice(["queue-a", 17, [1, 2], {"k": "v"}, None, True])
    items = list(obj.items())
    rnd.shuffle(items)
    indent = rnd.choice([None, None, 1])
    seps = rnd.choice([(",", ":"), (", ", ": ")])
    return json.dumps(dict(items), ensure_ascii=rnd.random() < 0.5, indent=indent, separators=seps).replace("\n", " ")


def oracle_canonical(line: str) -> str:
    obj = json.loads(line)
    for key in OPTIONAL:
        if obj.get(key, 0) is None:
            del obj[key]
    obj.setdefault("reviewed_async", False)
    if "ai_confidence" in obj:
        obj["ai_confidence"] = float(obj["ai_confidence"])
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def corpus(seed: int = 20240601, n: int = 1000) -> list[str]:
    rnd = random.Random(seed)
    return [fuzz_record(rnd, i) for i in range(n)]
