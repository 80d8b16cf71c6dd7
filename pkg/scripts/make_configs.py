#!/usr/bin/env python3
"""Regenerate the bundled example configs under configs/."""

import json
from pathlib import Path

CONFIGS = {
    "conv_stack.json": {
        "name": "conv_stack_demo",
        "dtype": "f32",
        "input": {"shape": [2, 6, 6]},
        "layers": [
            {"type": "conv3d", "c_in": 2, "c_out": 4, "kernel": [3, 3, 3],
             "init": {"scheme": "uniform", "seed": 11, "lo": -0.4, "hi": 0.4}},
            {"type": "batchnorm", "channels": 4,
             "init": {"scheme": "uniform", "seed": 12}},
            {"type": "conv3d", "c_in": 4, "c_out": 4, "kernel": [3, 1, 1],
             "padding": 2,
             "init": {"scheme": "uniform", "seed": 13, "lo": -0.3, "hi": 0.3}},
            {"type": "avgpool_t", "window": 4},
        ],
    },
    "toy_costgcn.json": {
        "name": "toy_costgcn",
        "dtype": "f32",
        "input": {"shape": [3, 25]},
        "layers": [
            {"type": "stgcn_block", "v": 25, "partitions": 3, "c_in": 3,
             "c_out": 16, "tc_kernel": 9,
             "init": {"scheme": "uniform", "seed": 21, "lo": -0.25, "hi": 0.25}},
            *[{"type": "stgcn_block", "v": 25, "partitions": 3, "c_in": 16,
               "c_out": 16, "tc_kernel": 9,
               "init": {"scheme": "uniform", "seed": 22 + i, "lo": -0.25, "hi": 0.25}}
              for i in range(3)],
            {"type": "head", "pool_window": 268, "classes": 10,
             "init": {"scheme": "uniform", "seed": 30}},
        ],
    },
    "encoder_one_block.json": {
        "name": "encoder_one_block",
        "dtype": "f32",
        "input": {"shape": [8]},
        "layers": [
            {"type": "co_encoder_block", "mode": "single", "n": 64,
             "d_model": 8, "heads": 2, "ff_dim": 16,
             "init": {"scheme": "uniform", "seed": 41, "lo": -0.3, "hi": 0.3}},
        ],
    },
    "encoder_two_block.json": {
        "name": "encoder_two_block",
        "dtype": "f32",
        "input": {"shape": [8]},
        "layers": [
            {"type": "co_encoder_block", "mode": "retro", "n": 16,
             "d_model": 8, "heads": 2, "ff_dim": 16,
             "init": {"scheme": "uniform", "seed": 51, "lo": -0.3, "hi": 0.3}},
            {"type": "co_encoder_block", "mode": "single", "n": 16,
             "d_model": 8, "heads": 2, "ff_dim": 16,
             "init": {"scheme": "uniform", "seed": 52, "lo": -0.3, "hi": 0.3}},
        ],
    },
}


def main() -> None:
    out_dir = Path(__file__).resolve().parent.parent / "configs"
    out_dir.mkdir(exist_ok=True)
    for name, cfg in CONFIGS.items():
        (out_dir / name).write_text(json.dumps(cfg, indent=2) + "\n")
        print(f"wrote {out_dir / name}")


if __name__ == "__main__":
    main()
