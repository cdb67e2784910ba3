"""Built-in verification suites.

Each suite pits a production code path against an independent reference:
regional attention against a masked dense-attention evaluation, autodiff
against central finite differences, the optimizer against a hand-stepped
update, metrics against closed-form cases. ``run_all`` prints one line per
suite and returns True only if every suite passes, which is what the
``selfcheck`` command exposes as its exit status.
"""

import numpy as np

from . import tensor as T
from .tensor import Tensor
from . import attention as A
from . import network as N
from . import losses as L
from . import metrics as M
from . import optim as O
from . import gradcheck as G


def _rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- suites

def suite_attention_oracle():
    """Regional layer must match dense attention restricted to its lattice."""
    worst = 0.0
    for h, w, r, dil in [(6, 6, 3, 1), (7, 5, 3, 2), (9, 9, 5, 2), (8, 11, 5, 1)]:
        cfg = A.AttentionConfig(16, 4, region_size=r, dilation=dil)
        layer = A.RegionalAttention(cfg, _rng(7), dtype=np.float64)
        x = _rng(8).normal(size=(h * w, 16))
        got = layer(Tensor(x), h, w).data
        ref = A.regional_oracle(layer, x, h, w)
        worst = max(worst, float(np.abs(got - ref).max()))
    assert worst < 1e-10, f"worst deviation {worst:.3e}"
    return f"worst deviation vs dense oracle {worst:.2e}"


def suite_attention_reduction():
    """A window covering the whole map must equal unmasked dense attention."""
    h = w = 5
    cfg = A.AttentionConfig(8, 2, region_size=h, dilation=1)
    layer = A.RegionalAttention(cfg, _rng(3), dtype=np.float64)
    x = _rng(4).normal(size=(h * w, 8))
    got = layer(Tensor(x), h, w).data

    # Same projections, no mask, no bias; the covering lattice clamps onto
    # the full grid so every query attends to every key exactly once.
    idx_map, bmap = layer._index_maps(h, w)
    n = h * w
    allowed = np.zeros((n, n), dtype=bool)
    bias = np.zeros((cfg.num_heads, n, n))
    table = layer.bias_table.data.reshape(cfg.num_heads, -1)
    for q in range(n):
        allowed[q, idx_map[q]] = True
        bias[:, q, idx_map[q]] = table[:, bmap[q]]
    assert allowed.all(), "covering window left some pair masked"
    ref = A.global_attention_oracle(
        x, layer.wq.data, layer.wk.data, layer.wv.data, layer.wo.data,
        cfg.num_heads, allowed, bias)
    dev = float(np.abs(got - ref).max())
    assert dev < 1e-10, f"deviation {dev:.3e}"
    return f"full-coverage window == dense attention ({dev:.2e})"


def suite_op_gradients():
    """Finite-difference checks on the ops the model is built from."""
    rng = _rng(11)
    worst = {}

    def one(name, build, **params):
        ps = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        errs = G.check(lambda: build(ps), ps)
        worst[name] = max(errs.values())

    one("matmul", lambda p: T.tsum(T.matmul(p["a"], p["b"])),
        a=rng.normal(size=(4, 5)), b=rng.normal(size=(5, 3)))
    one("softmax", lambda p: T.tsum(T.square(T.softmax(p["x"], axis=-1))),
        x=rng.normal(size=(3, 6)))
    one("layer_norm",
        lambda p: T.tsum(T.square(T.layer_norm(p["x"], p["g"], p["b"]))),
        x=rng.normal(size=(4, 6)), g=rng.normal(size=(6,)),
        b=rng.normal(size=(6,)))
    one("gelu", lambda p: T.tsum(T.gelu(p["x"])), x=rng.normal(size=(17,)))
    one("sigmoid", lambda p: T.tsum(T.square(T.sigmoid(p["x"]))),
        x=rng.normal(size=(9,)))
    one("conv2d",
        lambda p: T.tsum(T.square(T.conv2d(p["x"], p["w"], 1, 1))),
        x=rng.normal(size=(2, 5, 5)), w=rng.normal(size=(3, 2, 3, 3)))
    one("conv_transpose2d",
        lambda p: T.tsum(T.square(T.conv_transpose2d(p["x"], p["w"], 2))),
        x=rng.normal(size=(2, 3, 3)), w=rng.normal(size=(2, 3, 2, 2)))
    one("gather",
        lambda p: T.tsum(T.square(T.gather(
            p["x"], np.array([[0, 2], [1, 1]]), axis=0))),
        x=rng.normal(size=(3, 4)))
    bad = {k: v for k, v in worst.items() if v > 1e-6}
    assert not bad, f"ops over tolerance: {bad}"
    top = max(worst.values())
    return f"{len(worst)} ops checked, worst rel err {top:.2e}"


def suite_attention_gradients():
    cfg = A.AttentionConfig(8, 2, region_size=3, dilation=2)
    layer = A.RegionalAttention(cfg, _rng(5), dtype=np.float64)
    h, w = 5, 6
    x = Tensor(_rng(6).normal(size=(h * w, 8)), requires_grad=True)
    params = dict(layer.parameters(), x=x)

    def build():
        return T.tsum(T.square(layer(x, h, w)))

    errs = G.check(build, params)
    top = max(errs.values())
    assert top < 1e-6, f"worst rel err {top:.3e}"
    return f"layer + bias table, worst rel err {top:.2e}"


def suite_model_gradients():
    cfg = N.ModelConfig(depth=2, base_channels=4, multipliers=(1, 2),
                        ca_blocks=1, ram_blocks=1, mlp_ratio=2,
                        ca_reduction=2, num_heads=2, region_size=3,
                        dilation=1, zero_head=False)
    model = N.RASM(cfg, seed=1, dtype=np.float64)
    rng = _rng(9)
    i_s = rng.uniform(size=(3, 16, 16))
    i_m = (rng.uniform(size=(1, 16, 16)) > 0.5).astype(np.float64)
    tgt = rng.uniform(size=(3, 16, 16))
    params = model.parameters()

    def build():
        return T.mean(T.square(model(i_s, i_m) + Tensor(-tgt)))

    errs = G.check_sampled(build, params, n_coords=2, rng=_rng(13))
    top = max(errs.values())
    assert top < 1e-6, f"worst rel err {top:.3e}"
    return f"{len(params)} tensors probed end to end, worst rel err {top:.2e}"


def suite_loss_gradients():
    rng = _rng(21)
    pred = Tensor(rng.uniform(size=(3, 32, 32)), requires_grad=True)
    tgt = rng.uniform(size=(3, 32, 32))

    errs = G.check_sampled(
        lambda: L.charbonnier(pred, Tensor(tgt)),
        {"pred": pred}, n_coords=25, rng=_rng(1))
    top_c = max(errs.values())
    assert top_c < 1e-6, f"charbonnier rel err {top_c:.3e}"

    ext = L.FeatureExtractor(seed=0, dtype=np.float64)
    errs = G.check_sampled(
        lambda: L.total_loss(pred, Tensor(tgt), ext)[0],
        {"pred": pred}, n_coords=4, rng=_rng(2))
    top_t = max(errs.values())
    assert top_t < 1e-6, f"total loss rel err {top_t:.3e}"
    return f"charbonnier {top_c:.2e}, total (with features) {top_t:.2e}"


def suite_metrics():
    rng = _rng(31)
    img = rng.uniform(size=(3, 24, 24))

    p = M.psnr(np.full((3, 8, 8), 0.6), np.full((3, 8, 8), 0.5))
    assert abs(p - 20.0) < 1e-9, f"psnr {p}"

    white = np.ones((3, 4, 4))
    lab = M.srgb_to_lab(white)
    assert abs(lab[0].mean() - 100.0) < 0.01, "white point L*"

    s = M.ssim(img, img)
    assert abs(s - 1.0) < 1e-12, f"ssim(x,x) = {s}"

    a = rng.uniform(size=(3, 16, 16))
    b = rng.uniform(size=(3, 16, 16))
    assert M.rmse_lab(a, b) >= M.mae_lab(a, b) - 1e-12, "rmse < mae"
    rt = np.abs(M.lab_to_srgb(M.srgb_to_lab(img)) - img).max()
    assert rt < 1e-6, f"lab round trip {rt:.3e}"
    return "psnr/lab/ssim closed-form cases hold"


def suite_optimizer():
    sched = O.Schedule(total_steps=100, lr_init=4e-4, lr_final=1e-6)
    assert O.lr_at(sched, 0) == 4e-4 and O.lr_at(sched, 100) == 1e-6
    mid = O.lr_at(sched, 50)
    assert abs(mid - (4e-4 + 1e-6) / 2) < 1e-18, f"midpoint {mid}"

    # One AdamW step recomputed by hand: decoupled decay, then the
    # bias-corrected moment update.
    w0 = np.array([0.5, -1.0, 2.0])
    g = np.array([0.1, -0.2, 0.3])
    p = Tensor(w0.copy(), requires_grad=True)
    p.grad = g.copy()
    opt = O.AdamW({"w": p}, weight_decay=0.02)
    opt.step(1e-3)
    m = 0.1 * g
    v = 0.001 * g * g
    ref = w0 - 1e-3 * 0.02 * w0
    ref = ref - 1e-3 * (m / (1 - 0.9)) / (np.sqrt(v / (1 - 0.999)) + 1e-8)
    dev = np.abs(p.data - ref).max()
    assert dev < 1e-15, f"adamw deviation {dev:.3e}"

    q = Tensor(np.zeros(3), requires_grad=True)
    q.grad = np.array([3.0, 0.0, 4.0])
    pre = O.clip_gradients({"q": q}, 1.0)
    assert abs(pre - 5.0) < 1e-12 and abs(np.linalg.norm(q.grad) - 1.0) < 1e-12
    return "schedule endpoints, hand-stepped update, norm clip"


SUITES = [
    ("attention-oracle", suite_attention_oracle),
    ("attention-reduction", suite_attention_reduction),
    ("op-gradients", suite_op_gradients),
    ("attention-gradients", suite_attention_gradients),
    ("model-gradients", suite_model_gradients),
    ("loss-gradients", suite_loss_gradients),
    ("metrics", suite_metrics),
    ("optimizer", suite_optimizer),
]


def run_all(log=print):
    ok = True
    for name, fn in SUITES:
        try:
            detail = fn()
        except Exception as exc:  # noqa: BLE001 - report and keep going
            ok = False
            log(f"FAIL {name}: {exc}")
        else:
            log(f"ok   {name}: {detail}")
    log("selfcheck " + ("PASSED" if ok else "FAILED"))
    return ok
