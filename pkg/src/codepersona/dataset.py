"""Focal-method / test-case pairs and their JSONL form."""

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class FocalExample:
    project_id: str
    focal_method: str
    test_case: str
    focal_id: str = ""

    def __post_init__(self):
        if not self.focal_method.strip() or not self.test_case.strip():
            raise ValueError("focal method and test case must be non-empty")


def write_jsonl(path, examples):
    with open(path, "w") as fh:
        for e in examples:
            fh.write(json.dumps({
                "project_id": e.project_id,
                "focal_id": e.focal_id,
                "focal_method": e.focal_method,
                "test_case": e.test_case,
            }) + "\n")


def read_jsonl(path):
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            row = json.loads(line)
            out.append(FocalExample(
                str(row["project_id"]),
                row["focal_method"],
                row["test_case"],
                row.get("focal_id") or f"{row['project_id']}:{i}",
            ))
    return out
