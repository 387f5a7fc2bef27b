#!/usr/bin/env python3
"""Convert a locally available 12x768 decoder checkpoint into the npz source layout.

Reads a transformers-format GPT-2 model (directory or hub cache) and writes a
single .npz whose tensor names follow the published layout the loader expects
(wte.weight / wpe.weight / h.{i}.* / ln_f.*). Fused projection weights stay in
their stored (in, out) orientation; the loader transposes on ingestion.

Usage: python scripts/convert_hf_gpt2.py --model /path/to/gpt2 --out gpt2_backbone.npz
"""

import argparse
import sys

import numpy as np


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="gpt2", help="model directory (or hub name if cached)")
    ap.add_argument("--out", required=True)
    ap.add_argument("--drop-vocab", action="store_true",
                    help="omit the text vocabulary table (saves ~150 MB; the loader ignores it)")
    args = ap.parse_args()

    try:
        from transformers import GPT2Model
    except ImportError:
        print("transformers is required for conversion: pip install transformers", file=sys.stderr)
        return 1

    model = GPT2Model.from_pretrained(args.model)
    tensors = {}
    for name, tensor in model.state_dict().items():
        if name.endswith("attn.bias") or name.endswith("attn.masked_bias"):
            continue  # causal-mask buffers, not parameters
        if args.drop_vocab and name == "wte.weight":
            continue
        tensors[name] = tensor.numpy().astype(np.float32)
    np.savez(args.out, **tensors)
    print(f"wrote {len(tensors)} tensors to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
