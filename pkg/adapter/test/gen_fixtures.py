"""Regenerate analytic conformance fixtures from the engine's built-in predictor.

Run from the adapter directory: python3 test/gen_fixtures.py
Requires the voxshap package to be installed (pip install -e ..).
"""

import json
from pathlib import Path

import numpy as np

from voxshap.infer import SyntheticPredictor

PRESETS = {
    2: {"slopes": (-0.002, 0.002), "offsets": (0.5, -0.5)},
    3: {"slopes": (-0.004, 0.001, 0.004), "offsets": (0.0, 0.8, 0.0)},
}


def make_case(name, patch_size, num_classes, patch):
    pred = SyntheticPredictor(patch_size=patch_size, **PRESETS[num_classes])
    logits = pred.predict(patch.astype(np.float32))
    flat_logits = np.concatenate([logits[c].ravel(order="F") for c in range(num_classes)])
    return {
        "name": name,
        "patch_size": list(patch_size),
        "num_classes": num_classes,
        "patch": patch.astype(np.float32).ravel(order="F").tolist(),
        "expected_logits": flat_logits.astype(np.float32).tolist(),
    }


def main():
    rng = np.random.default_rng(2024)
    cases = [
        make_case(
            "ramp-3x4x2-c2",
            (3, 4, 2),
            2,
            np.arange(24, dtype=np.float32).reshape(3, 4, 2) * 100 - 1024,
        ),
        make_case(
            "random-4x4x4-c3",
            (4, 4, 4),
            3,
            rng.uniform(-1024, 1000, size=(4, 4, 4)),
        ),
        make_case(
            "random-8x8x8-c3",
            (8, 8, 8),
            3,
            rng.uniform(-1024, 1000, size=(8, 8, 8)),
        ),
    ]
    out = Path(__file__).parent / "fixtures" / "analytic_cases.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(cases) + "\n")
    print(f"wrote {out} ({len(cases)} cases)")


if __name__ == "__main__":
    main()
