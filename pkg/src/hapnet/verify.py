"""Finite-difference verification suites over every differentiable op and the
composed modules. Shared by the test suite and the `gradcheck` CLI command."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckResult, check_gradients
from .ham import AnchoredAttention, HamBlock, HamConfig
from .model import ModelConfig, build_model
from .pffm import GlobalFilter, global_filter_apply, pffm_fuse
from .tensor import Tensor


def _weighted_sum(x: Tensor, w: np.ndarray) -> Tensor:
    # Weighting the output before reduction makes the check sensitive to
    # every output coordinate, not just their sum.
    return T.tensor_sum(x * Tensor(w))


def check_tensor_ops(seed: int = 0, tol: float = 1e-4) -> list[GradCheckResult]:
    """Every differentiable op, three random shapes each."""
    rng = np.random.default_rng(seed)
    results: list[GradCheckResult] = []

    def run(name, build, arrays):
        results.extend(check_gradients(build, arrays, [name], tol=tol))

    def run2(names, build, arrays):
        results.extend(check_gradients(build, arrays, names, tol=tol))

    for i, shape in enumerate([(3,), (2, 4), (2, 3, 2)]):
        other = rng.standard_normal(shape)
        w = rng.standard_normal(shape)
        run(f"add[{i}]", lambda x, o=Tensor(other), ww=w: _weighted_sum(x + o, ww),
            [rng.standard_normal(shape)])
        run(f"sub[{i}]", lambda x, o=Tensor(other), ww=w: _weighted_sum(x - o, ww),
            [rng.standard_normal(shape)])
        run(f"mul[{i}]", lambda x, o=Tensor(other), ww=w: _weighted_sum(x * o, ww),
            [rng.standard_normal(shape)])
        run(f"neg[{i}]", lambda x, ww=w: _weighted_sum(-x, ww), [rng.standard_normal(shape)])

    for i, (m, k, n) in enumerate([(2, 3, 2), (4, 2, 5), (3, 3, 3)]):
        w = rng.standard_normal((m, n))
        run2([f"matmul_a[{i}]", f"matmul_b[{i}]"],
             lambda a, b, ww=w: _weighted_sum(T.matmul(a, b), ww),
             [rng.standard_normal((m, k)), rng.standard_normal((k, n))])

    for i, shape in enumerate([(6,), (2, 5), (3, 2, 4)]):
        w = rng.standard_normal(shape)
        run(f"relu[{i}]", lambda x, ww=w: _weighted_sum(T.relu(x), ww),
            [rng.standard_normal(shape) + 0.05])  # keep away from the kink
        run(f"gelu[{i}]", lambda x, ww=w: _weighted_sum(T.gelu(x), ww),
            [rng.standard_normal(shape)])
        run(f"sigmoid[{i}]", lambda x, ww=w: _weighted_sum(T.sigmoid(x), ww),
            [rng.standard_normal(shape)])
        ax = len(shape) - 1
        run(f"softmax[{i}]", lambda x, ww=w, a=ax: _weighted_sum(T.softmax(x, axis=a), ww),
            [rng.standard_normal(shape)])
        run(f"layer_norm[{i}]", lambda x, ww=w, a=ax: _weighted_sum(T.layer_norm(x, axis=a), ww),
            [rng.standard_normal(shape)])
        run(f"sum[{i}]", lambda x, a=ax: T.tensor_sum(T.tensor_sum(x, axis=a) * 1.7),
            [rng.standard_normal(shape)])
        run(f"mean[{i}]", lambda x, a=ax: T.tensor_sum(T.tensor_mean(x, axis=a) * 1.3),
            [rng.standard_normal(shape)])

    for i, (shape, s) in enumerate([((7,), 2), ((2, 6), 3), ((3, 5), 2)]):
        out_len = -(-shape[-1] // s)
        w = rng.standard_normal(shape[:-1] + (out_len,))
        run(f"avg_pool[{i}]", lambda x, ww=w, ss=s: _weighted_sum(
            T.avg_pool(x, axis=x.ndim - 1, factor=ss), ww), [rng.standard_normal(shape)])

    for i, shape in enumerate([(2, 6), (3, 4), (2, 2, 3)]):
        w = rng.standard_normal((np.prod(shape),))
        run(f"reshape[{i}]", lambda x, ww=w: _weighted_sum(
            T.reshape(x, (int(np.prod(x.shape)),)), ww), [rng.standard_normal(shape)])
    for i, shape in enumerate([(2, 3), (2, 3, 4), (4, 2)]):
        perm = tuple(reversed(range(len(shape))))
        w = rng.standard_normal(tuple(reversed(shape)))
        run(f"transpose[{i}]", lambda x, ww=w, p=perm: _weighted_sum(T.transpose(x, p), ww),
            [rng.standard_normal(shape)])

    for i, (c, h, wd) in enumerate([(1, 4, 4), (2, 5, 5), (3, 4, 6)]):
        w = rng.standard_normal((c, h, wd))
        run2([f"depthwise_x[{i}]", f"depthwise_k[{i}]"],
             lambda x, k, ww=w: _weighted_sum(T.depthwise_conv2d(x, k), ww),
             [rng.standard_normal((c, h, wd)), rng.standard_normal((c, 3, 3))])

    for i, (ci, co, h, wd) in enumerate([(1, 2, 4, 4), (2, 3, 5, 4), (3, 1, 4, 5)]):
        w = rng.standard_normal((2, co, h, wd))
        run2([f"conv2d_x[{i}]", f"conv2d_w[{i}]", f"conv2d_b[{i}]"],
             lambda x, wt, b, ww=w: _weighted_sum(T.conv2d(x, wt, b), ww),
             [rng.standard_normal((2, ci, h, wd)), rng.standard_normal((co, ci, 3, 3)),
              rng.standard_normal(co)])

    for i, (b, k) in enumerate([(3, 4), (2, 2), (5, 3)]):
        labels = rng.integers(0, k, size=b)
        run(f"cross_entropy[{i}]", lambda x, lab=labels: T.softmax_cross_entropy(x, lab),
            [rng.standard_normal((b, k))])

    for i, (c, h, wd) in enumerate([(2, 4, 4), (1, 3, 5), (2, 5, 4)]):
        w = rng.standard_normal((c, h, wd))
        wh = wd // 2 + 1
        run2([f"global_filter_x[{i}]", f"global_filter_kre[{i}]", f"global_filter_kim[{i}]"],
             lambda x, kr, ki, ww=w: _weighted_sum(global_filter_apply(x, kr, ki), ww),
             [rng.standard_normal((c, h, wd)), rng.standard_normal((c, h, wh)),
              rng.standard_normal((c, h, wh))])

    for i, (n, d) in enumerate([(2, 3), (4, 2), (3, 4)]):
        w = rng.standard_normal((n, d))
        run2([f"concat_a[{i}]", f"concat_b[{i}]"],
             lambda a, b, ww=w: _weighted_sum(T.concat([a, b], axis=0), np.vstack([ww, ww])),
             [rng.standard_normal((n, d)), rng.standard_normal((n, d))])

    return results


def check_ham(seed: int = 0, tol: float = 1e-4) -> list[GradCheckResult]:
    """Composed attention blocks: input gradients and parameter gradients."""
    rng = np.random.default_rng(seed)
    results: list[GradCheckResult] = []

    attn = AnchoredAttention(4, 2, 2, np.random.default_rng(seed + 1))
    x = rng.standard_normal((6, 4))
    w = rng.standard_normal((6, 4))
    results.extend(check_gradients(
        lambda inp: _weighted_sum(attn(inp), w), [x], ["anchored_attention.x"], tol=tol))
    params = dict(attn.named_parameters())
    wq = params["wq.weight"].data.copy()
    results.extend(check_gradients(
        lambda pw: _weighted_sum(_with_param(attn, "wq.weight", pw, lambda: attn(Tensor(x))), w),
        [wq], ["anchored_attention.wq"], tol=tol))

    cfg = HamConfig(heads=2, s_spatial=2, s_spectral=2)
    block = HamBlock(4, 5, 5, cfg, np.random.default_rng(seed + 2))
    xb = rng.standard_normal((2, 4, 5, 5))
    wb = rng.standard_normal((2, 4, 5, 5))
    results.extend(check_gradients(
        lambda inp: _weighted_sum(block(inp), wb), [xb], ["ham_block.x"], tol=tol))
    for pname in ("ffn_in.weight", "norm1.gamma", "local_branch.conv1.kernels",
                  "spectral_branch.proj_in.weight", "global_branch.attn.wv.weight"):
        pdata = dict(block.named_parameters())[pname].data.copy()
        results.extend(check_gradients(
            lambda pw, nm=pname: _weighted_sum(
                _with_param(block, nm, pw, lambda: block(Tensor(xb))), wb),
            [pdata], [f"ham_block.{pname}"], tol=tol))
    return results


def _with_param(module, name, leaf: Tensor, call):
    """Temporarily swap one named parameter for `leaf` (a graph leaf), run,
    restore. Installing the Tensor object itself is what routes gradients to
    the finite-difference harness."""
    parts = name.split(".")
    obj = module
    for p in parts[:-1]:
        obj = obj[int(p)] if p.isdigit() else getattr(obj, p)
    saved = getattr(obj, parts[-1])
    setattr(obj, parts[-1], leaf)
    try:
        return call()
    finally:
        setattr(obj, parts[-1], saved)


def check_pffm(seed: int = 0, tol: float = 1e-4) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    results: list[GradCheckResult] = []
    fh = rng.standard_normal((3, 5, 5))
    fs = rng.standard_normal((3, 5, 5))
    w = rng.standard_normal((3, 5, 5))
    wh = 5 // 2 + 1
    kre = rng.standard_normal((3, 5, wh))
    kim = rng.standard_normal((3, 5, wh))

    def fuse(a, b, kr, ki):
        ff = a * b
        gate = global_filter_apply(ff, kr, ki)
        return _weighted_sum(gate * a + gate * b, w)

    results.extend(check_gradients(
        fuse, [fh, fs, kre, kim],
        ["pffm.f_h", "pffm.f_s", "pffm.k_re", "pffm.k_im"], tol=tol))

    filt = GlobalFilter(2, 4, 4)
    xh = rng.standard_normal((2, 2, 4, 4))
    xs = rng.standard_normal((2, 2, 4, 4))
    wb = rng.standard_normal((2, 2, 4, 4))
    results.extend(check_gradients(
        lambda a, b: _weighted_sum(pffm_fuse(a, b, filt), wb),
        [xh, xs], ["pffm.batched_f_h", "pffm.batched_f_s"], tol=tol))
    return results


def tiny_model_config(classes: int = 3) -> ModelConfig:
    return ModelConfig(
        classes=classes,
        hsi_bands=5,
        sar_bands=2,
        patch_size=7,
        widths=(4, 8, 16),
        hidden=16,
        ham=HamConfig(heads=2, s_spatial=2, s_spectral=2),
    )


def check_model(seed: int = 0, tol: float = 1e-3, max_coords: int = 6) -> list[GradCheckResult]:
    """End-to-end gradients of the tiny full model. Every parameter tensor is
    probed; large tensors at a deterministic random coordinate subset."""
    rng = np.random.default_rng(seed)
    cfg = tiny_model_config()
    model = build_model(cfg, seed=seed + 1)
    hsi = rng.standard_normal((2, cfg.hsi_bands, 7, 7))
    sar = rng.standard_normal((2, cfg.sar_bands, 7, 7))
    labels = rng.integers(0, cfg.classes, size=2)

    results: list[GradCheckResult] = []
    results.extend(check_gradients(
        lambda h, s: T.softmax_cross_entropy(model(h, s), labels),
        [hsi, sar], ["model.hsi_input", "model.sar_input"], tol=tol,
        max_coords=max_coords, rng=np.random.default_rng(seed + 2)))

    for pname, param in model.named_parameters():
        pdata = param.data.copy()
        results.extend(check_gradients(
            lambda pw, nm=pname: T.softmax_cross_entropy(
                _with_param(model, nm, pw, lambda: model(Tensor(hsi), Tensor(sar))), labels),
            [pdata], [f"model.{pname}"], tol=tol,
            max_coords=max_coords, rng=np.random.default_rng(seed + 3)))
    return results


SUITES = {
    "tensor": check_tensor_ops,
    "ham": check_ham,
    "pffm": check_pffm,
    "model": check_model,
}


def run_suite(component: str, seed: int = 0) -> list[GradCheckResult]:
    if component == "all":
        out: list[GradCheckResult] = []
        for fn in SUITES.values():
            out.extend(fn(seed))
        return out
    if component not in SUITES:
        raise KeyError(component)
    return SUITES[component](seed)
