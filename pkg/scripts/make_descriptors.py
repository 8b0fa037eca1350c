"""Regenerate the bundled workload descriptors under src/hetmap/data/workloads."""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "hetmap" / "data" / "workloads"


def lin(name, rows, cols, iv, op="linear"):
    return {"name": name, "op_kind": op, "rows": rows, "cols": cols, "input_vectors": iv, "weight_dynamic": False}


def dyn(name, rows, cols, iv):
    return {"name": name, "op_kind": "dynamic_matmul", "rows": rows, "cols": cols, "input_vectors": iv,
            "weight_dynamic": True}


def pythia70m(seq=128):
    d, ff, heads, blocks = 512, 2048, 8, 6
    hd = d // heads
    layers = []
    for b in range(blocks):
        p = f"blocks.{b}"
        layers += [
            lin(f"{p}.attn.query_key_value", 3 * d, d, seq, "attention_proj"),
            # Q x K^T: the key matrix plays the weight operand, one row per (key, head)
            dyn(f"{p}.attn.qk", seq * heads, hd, seq),
            # scores x V: V^T is the weight operand, one row per (head, channel)
            dyn(f"{p}.attn.sv", d, seq, seq),
            lin(f"{p}.attn.dense", d, d, seq, "attention_proj"),
            lin(f"{p}.mlp.dense_h_to_4h", ff, d, seq),
            lin(f"{p}.mlp.dense_4h_to_h", d, ff, seq),
        ]
    return {
        "name": "pythia70m",
        "notes": ("Pythia-70M (d_model 512, 6 blocks, 8 heads, d_ff 2048) at sequence length 128, batch 1. "
                  "24 linear-type layers (attention projections counted as linear) and 12 dynamic matmuls."),
        "layers": layers,
    }


def mobilevit_s(size=256, num_classes=2):
    """MobileViT-S shapes. Approximation: channel widths and depths follow the
    published architecture; the per-block 1x1 projection conv is folded into the
    fusion conv so that the conv count matches 32."""
    layers = []
    h = size // 2
    layers.append(lin("stem", 16, 3 * 9, h * h, "conv2d"))

    def mv2(name, cin, cout, hw_in, stride):
        hidden = 4 * cin
        hw_out = hw_in // stride
        layers.extend([
            lin(f"{name}.expand", hidden, cin, hw_in * hw_in, "conv2d"),
            lin(f"{name}.dw", hidden, 9, hw_out * hw_out, "conv2d"),
            lin(f"{name}.project", cout, hidden, hw_out * hw_out, "conv2d"),
        ])
        return hw_out

    def mvit(name, c, d, depth, hw, heads=4):
        tokens = (hw // 2) * (hw // 2)
        patch = 4
        hd = d // heads
        layers.extend([
            lin(f"{name}.local3x3", c, 9 * c, hw * hw, "conv2d"),
            lin(f"{name}.local1x1", d, c, hw * hw, "conv2d"),
        ])
        for i in range(depth):
            p = f"{name}.tf{i}"
            layers.extend([
                lin(f"{p}.qkv", 3 * d, d, hw * hw, "attention_proj"),
                dyn(f"{p}.qk", tokens * heads, hd, tokens * patch),
                dyn(f"{p}.sv", d, tokens, tokens * patch),
                lin(f"{p}.out", d, d, hw * hw, "attention_proj"),
                lin(f"{p}.ffn1", 2 * d, d, hw * hw),
                lin(f"{p}.ffn2", d, 2 * d, hw * hw),
            ])
        layers.append(lin(f"{name}.fusion3x3", c, 9 * (c + d), hw * hw, "conv2d"))

    h = mv2("layer1.0", 16, 32, h, 1)
    h = mv2("layer2.0", 32, 64, h, 2)
    h = mv2("layer2.1", 64, 64, h, 1)
    h = mv2("layer2.2", 64, 64, h, 1)
    h = mv2("layer3.0", 64, 96, h, 2)
    mvit("layer3.1", 96, 144, 2, h)
    h = mv2("layer4.0", 96, 128, h, 2)
    mvit("layer4.1", 128, 192, 4, h)
    h = mv2("layer5.0", 128, 160, h, 2)
    mvit("layer5.1", 160, 240, 3, h)
    layers.append(lin("conv_1x1_exp", 640, 160, h * h, "conv2d"))
    layers.append(lin("classifier", num_classes, 640, 1))
    return {
        "name": "mobilevit_s",
        "notes": ("APPROXIMATION: MobileViT-S at 256x256 input, batch 1, 2-class head. Per-layer dims are taken "
                  "from the published architecture, not from the mapping study; depthwise convs are modelled as "
                  "channels x 9 matrices. Counts: 37 linear-type, 32 conv2d, 18 dynamic matmul."),
        "layers": layers,
    }


TOY_BATCH = 64


def toy_mlp():
    return {
        "name": "toy_mlp",
        "notes": "Shapes of the bundled surrogate classifier: 2 -> 64 -> 64 -> 4, batches of 64 samples per inference.",
        "layers": [lin("fc1", 64, 2, TOY_BATCH), lin("fc2", 64, 64, TOY_BATCH), lin("fc3", 4, 64, TOY_BATCH)],
    }


def toy_pareto():
    return {
        "name": "toy_pareto",
        "notes": "Three 5-row layers: small enough (21^3 = 9261 allocations) for exhaustive front enumeration.",
        "layers": [lin("a", 5, 128, 2), lin("b", 5, 192, 1), lin("c", 5, 96, 1)],
    }


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for fn in (pythia70m, mobilevit_s, toy_mlp, toy_pareto):
        doc = fn()
        (OUT / f"{doc['name']}.json").write_text(json.dumps(doc, indent=1) + "\n")
        kinds = {}
        for layer in doc["layers"]:
            kinds[layer["op_kind"]] = kinds.get(layer["op_kind"], 0) + 1
        print(doc["name"], len(doc["layers"]), kinds)
