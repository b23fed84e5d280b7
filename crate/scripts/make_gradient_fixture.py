"""Reference straight-through gradients of small LDC networks, computed with
torch autograd, written to crates/core/tests/fixtures/ste_gradients.json.

    python3 scripts/make_gradient_fixture.py
"""

import json
import pathlib

import torch

torch.set_default_dtype(torch.float64)
EPS = 1e-5


class SteSign(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, 1.0, -1.0)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * (x.abs() <= 1).to(g.dtype)


def case(seed, n, dv, df, k, m, hidden, batch):
    gen = torch.Generator().manual_seed(seed)

    def u(*shape, lo=-1.0, hi=1.0):
        return (torch.rand(*shape, generator=gen) * (hi - lo) + lo).requires_grad_()

    p = {
        "w1": u(hidden),
        "b1": u(hidden),
        "w2": u(dv, hidden, lo=-0.5, hi=0.5),
        "b2": u(dv, lo=-0.5, hi=0.5),
        "gamma": u(dv, lo=0.5, hi=1.5),
        "beta": u(dv, lo=-0.3, hi=0.3),
        "feature": u(n, df, lo=-0.9, hi=0.9),
        "class": u(k, df, lo=-0.9, hi=0.9),
    }
    levels = torch.randint(0, m, (batch, n), generator=gen)
    labels = torch.randint(0, k, (batch,), generator=gen)

    x = levels.to(torch.float64) / (m - 1) * 2 - 1
    h = torch.tanh(x[..., None] * p["w1"] + p["b1"])
    z = h @ p["w2"].T + p["b2"]
    flat = z.reshape(-1, dv)
    mean = flat.mean(0)
    var = flat.var(0, unbiased=False)
    a = torch.tanh(p["gamma"] * (z - mean) / torch.sqrt(var + EPS) + p["beta"])
    v = SteSign.apply(a).repeat(1, 1, df // dv)
    pre = (SteSign.apply(p["feature"]) * v).sum(1)
    s = SteSign.apply(pre / n)
    logits = s @ SteSign.apply(p["class"]).T
    loss = torch.nn.functional.cross_entropy(logits, labels)
    loss.backward()

    return {
        "num_features": n,
        "value_dim": dv,
        "feature_dim": df,
        "num_classes": k,
        "num_levels": m,
        "hidden": hidden,
        "levels": levels.flatten().tolist(),
        "labels": labels.tolist(),
        "params": {name: t.detach().flatten().tolist() for name, t in p.items()},
        "loss": loss.item(),
        "grads": {name: t.grad.flatten().tolist() for name, t in p.items()},
    }


def main():
    cases = [
        case(1, n=3, dv=2, df=4, k=2, m=8, hidden=5, batch=6),
        case(2, n=5, dv=4, df=16, k=3, m=16, hidden=20, batch=40),
        case(3, n=12, dv=4, df=32, k=4, m=256, hidden=20, batch=64),
    ]
    out = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/ste_gradients.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(cases, indent=1) + "\n")
    print(f"wrote {len(cases)} cases to {out}")


if __name__ == "__main__":
    main()
