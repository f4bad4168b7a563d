"""Recomputes split-model forward and cut-layer gradients with numpy.

Reads the JSON written by `cargo run --example export_init` on stdin and
prints, per probe sample, p, loss, ||a_c||, ||g|| and the largest absolute
difference from the library's values.
"""

import json
import sys

import numpy as np

ACT = {
    "Relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)),
    "Sigmoid": (lambda z: 1.0 / (1.0 + np.exp(-z)), None),
    "Identity": (lambda z: z, lambda z: np.ones_like(z)),
}


def layers(stack):
    return [
        (np.array(l["weights"]).reshape(l["out_dim"], l["in_dim"]), np.array(l["bias"]), l["activation"])
        for l in stack["layers"]
    ]


def lookup(tables, idx):
    return np.concatenate(
        [np.array(t["data"]).reshape(t["rows"], t["dim"])[i] for t, i in zip(tables["tables"], idx)]
    )


def main():
    d = json.load(sys.stdin)
    srv, cli = d["server"], d["client"]
    trunk, head = layers(srv["trunk"]), layers(cli["head"])
    for s in d["samples"]:
        num = [(v - sc["mean"]) / sc["std"] for v, sc in zip(s["server_numeric"], srv["scalers"])]
        h = np.concatenate([lookup(srv["embeddings"], s["server_categorical"]), num])
        for w, b, act in trunk:
            h = ACT[act][0](w @ h + b)
        a_c = h
        x = np.concatenate([a_c, lookup(cli["embeddings"], s["client"])])
        zs, xs = [], []
        for w, b, act in head:
            xs.append(x)
            z = w @ x + b
            zs.append(z)
            x = ACT[act][0](z)
        p = float(np.clip(x[0], 1e-7, 1 - 1e-7))
        y = s["label"]
        loss = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        delta = np.array([p - y])
        for (w, _, act), z in reversed(list(zip(head, zs))):
            if act != "Sigmoid":
                delta = delta * ACT[act][1](z)
            delta = w.T @ delta
        g = delta[: len(a_c)]
        diff = max(
            np.max(np.abs(a_c - s["a_c"])),
            abs(p - s["p"]),
            abs(loss - s["loss"]),
            np.max(np.abs(g - s["cut_gradient"])),
        )
        print(f"p={p!r} loss={loss!r} |a_c|={np.linalg.norm(a_c)!r} |g|={np.linalg.norm(g)!r} g0={g[0]!r} maxdiff={diff:.3e}")


if __name__ == "__main__":
    main()
