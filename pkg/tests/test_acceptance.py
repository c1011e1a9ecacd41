"""End-to-end acceptance checks, one per release criterion.

Each test prints a single CRITERION line so the suite doubles as a
release report (run with ``pytest -s tests/test_acceptance.py``).
Criterion 6 is a soft directional comparison and criterion 10 records
what this package deliberately does not reproduce; both are reported
rather than hard-asserted.
"""
import time

import numpy as np
import pytest

from tfsepnet import tensor as tz
from tfsepnet.audio import LogMelConfig, WaveClip, log_mel, mel_bin_frequencies
from tfsepnet.blocks import ConsecutiveBlock, TfSepConvs
from tfsepnet.erf import (ErfMap, compute_erf, high_contribution_ratio,
                          rect_area, rect_mass)
from tfsepnet.network import NetConfig, build
from tfsepnet.tensor import (BatchNormState, ConvParams, Tensor, backward,
                             finite_diff_check, softmax_cross_entropy)
from tfsepnet.train import (Adam, ToyDatasetSpec, TrainConfig,
                            generate_toy_dataset, lr_at, mixup, freq_mixstyle,
                            split_dataset, train, Batch)


def report(num, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"\nCRITERION {num}: {status} - {detail}")
    assert ok, f"criterion {num}: {detail}"


def test_criterion_1_complexity_reproduction():
    t0 = time.time()
    m40 = build(NetConfig(tau=40))
    m80 = build(NetConfig(tau=80))
    p40, p80 = m40.count_params(), m80.count_params()
    c40 = m40.count_macs((1, 1, 256, 64))
    c80 = m80.count_macs((1, 1, 256, 64))
    ok = (abs(p40 - 53.4e3) <= 0.02 * 53.4e3
          and abs(p80 - 196.7e3) <= 0.02 * 196.7e3
          and abs(c40 - 7.0e6) <= 0.10 * 7.0e6
          and abs(c80 - 24.2e6) <= 0.10 * 24.2e6)
    elapsed = time.time() - t0
    ok = ok and elapsed < 1.0
    report(1, ok, f"params {p40}/{p80}, MACs {c40}/{c80} ({elapsed:.2f}s)")


def test_criterion_2_ablation_parameter_deltas():
    t0 = time.time()
    base = build(NetConfig(tau=40))
    no_arn = build(NetConfig(tau=40, no_adaresnorm=True)).count_params()
    no_f = build(NetConfig(tau=40, no_freq_path=True)).count_params()
    no_t = build(NetConfig(tau=40, no_temp_path=True)).count_params()
    no_sh = build(NetConfig(tau=40, no_shuffle=True))
    ok = (abs(no_arn - 52.3e3) <= 0.02 * 52.3e3
          and abs(no_f - 80.0e3) <= 0.03 * 80.0e3
          and abs(no_t - 80.0e3) <= 0.03 * 80.0e3
          and no_sh.count_params() == base.count_params()
          and no_sh.count_macs() == base.count_macs())
    elapsed = time.time() - t0
    ok = ok and elapsed < 1.0
    report(2, ok, f"no_adaresnorm {no_arn}, no_freq {no_f}, no_temp {no_t}, "
                  f"no_shuffle unchanged ({elapsed:.2f}s)")


def _op_cases(rng):
    """One closure per differentiable op, constants hoisted outside."""
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    wg = Tensor(rng.standard_normal((4, 2, 3, 1)) * 0.5)
    bn = BatchNormState.create(4, dtype=np.float64)
    v = Tensor(rng.standard_normal((1, 4, 1, 6)))
    targets = np.eye(10, dtype=np.float64)[rng.integers(0, 10, 2)]
    return {
        "conv2d": ((2, 2, 6, 6), lambda x: tz.conv2d(
            x, ConvParams(w, padding=(1, 1)))),
        "grouped_conv2d": ((2, 4, 6, 6), lambda x: tz.conv2d(
            x, ConvParams(wg, padding=(1, 0), groups=2))),
        "batchnorm2d": ((2, 4, 4, 4), lambda x: tz.batchnorm2d(x, bn)),
        "relu": ((2, 4, 4, 4), lambda x: tz.relu(x)),
        "maxpool2d": ((2, 4, 4, 4), lambda x: tz.maxpool2d(x)),
        "mean_over_axis": ((2, 4, 4, 6), lambda x: tz.mean_over_axis(
            x, tz.AXIS_F)),
        "channel_shuffle": ((2, 4, 3, 3), lambda x: tz.channel_shuffle(x, 2)),
        "split_concat": ((2, 4, 3, 3), lambda x: tz.concat_channels(
            *reversed(tz.split_channels(x)))),
        "broadcast_add": ((1, 4, 5, 6), lambda x: tz.broadcast_add(
            x, v, axis=2)),
        "softmax_ce": ((2, 10, 1, 1), lambda x: softmax_cross_entropy(
            x, targets)),
    }


def test_criterion_3_gradient_correctness():
    t0 = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for name, (shape, fn) in _op_cases(rng).items():
            x = Tensor(rng.standard_normal(shape), requires_grad=True)
            wrapped = fn if name == "softmax_ce" else (
                lambda t, f=fn: tz.sum_all(f(t)))
            err = finite_diff_check(wrapped, x, max_coords=8, rng=rng)
            worst = max(worst, err)
        block = TfSepConvs(4, 4, rng=rng, dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 4, 8, 8)), requires_grad=True)
        err = finite_diff_check(
            lambda t: tz.sum_all(block.forward(t, train=False)), x,
            max_coords=8, rng=rng)
        worst = max(worst, err)
    elapsed = time.time() - t0
    ok = worst < 1e-5 and elapsed < 120
    report(3, ok, f"20 seeds, every op + full block, max rel err "
                  f"{worst:.2e} ({elapsed:.1f}s)")


def test_criterion_4_shape_program():
    t0 = time.time()
    model = build(NetConfig(tau=40))
    rows = model.summarize((1, 1, 256, 64))
    shapes = {r.name: r.out_shape for r in rows}
    expected = {
        "init.conv1": (1, 20, 128, 32),
        "init.conv2": (1, 80, 64, 16),
        "stage1.block2": (1, 40, 64, 16),
        "stage1.pool": (1, 40, 32, 8),
        "stage2.block2": (1, 60, 32, 8),
        "stage2.pool": (1, 60, 16, 4),
        "stage3.block2": (1, 80, 16, 4),
        "stage4.block3": (1, 100, 16, 4),
        "head.conv": (1, 10, 16, 4),
        "head.avgpool": (1, 10, 1, 1),
    }
    # 10 layer rows plus the input row itself = 11 table rows
    ok = all(shapes.get(k) == v for k, v in expected.items())
    elapsed = time.time() - t0
    ok = ok and elapsed < 1.0
    report(4, ok, f"{len(expected) + 1} table rows match at 1x1x256x64 "
                  f"({elapsed:.2f}s)")


def _conv(cin, cout, k, rng):
    return ConvParams(Tensor(rng.standard_normal((cout, cin, k, k))),
                      padding=(k // 2, k // 2))


def _linearize(block):
    for name, p in block.params().items():
        if name.endswith("kernel"):
            p.data *= 0.01
        if name.endswith("bn.beta"):
            p.data[:] = 0.5


def test_criterion_5_erf_pipeline_validity():
    t0 = time.time()
    rng = np.random.default_rng(0)
    checks = []

    c1 = _conv(1, 2, 3, rng)
    m1 = compute_erf(lambda x: tz.conv2d(x, c1),
                     [rng.standard_normal((1, 1, 17, 17))])
    exp = np.zeros((17, 17), bool)
    exp[7:10, 7:10] = True
    checks.append(np.array_equal(m1.scores > 0, exp))

    c2 = _conv(2, 2, 3, rng)
    m2 = compute_erf(lambda x: tz.conv2d(tz.conv2d(x, c1), c2),
                     [rng.standard_normal((1, 1, 17, 17))])
    exp = np.zeros((17, 17), bool)
    exp[6:11, 6:11] = True
    checks.append(np.array_equal(m2.scores > 0, exp))

    block = TfSepConvs(4, 4, rng=np.random.default_rng(1), dtype=np.float64)
    _linearize(block)
    mb = compute_erf(lambda x: block.forward(x, train=False),
                     [rng.standard_normal((1, 4, 16, 16))])
    cross = np.zeros((16, 16), bool)
    cross[:, 8] = True
    cross[8, :] = True
    checks.append(np.array_equal(mb.scores > 1e-12, cross))

    mono = True
    for _ in range(5):
        erf = ErfMap(rng.random((24, 24)), 1)
        rs = [high_contribution_ratio(erf, t) for t in (0.1, 0.3, 0.5, 0.9)]
        mono = mono and rs == sorted(rs)
    checks.append(mono)

    fi, ti = np.mgrid[0:33, 0:33]
    gauss = np.exp(-((fi - 16) ** 2 + (ti - 16) ** 2) / (2 * (33 / 8) ** 2))
    within = True
    for t in (0.2, 0.3, 0.5):
        greedy = round(high_contribution_ratio(ErfMap(gauss, 1), t) * 33 * 33)
        best = None
        dims = None
        for h in range(1, 34):
            for w in range(1, 34):
                if rect_mass(gauss, h, w) >= t * gauss.sum():
                    a = rect_area((33, 33), h, w)
                    if best is None or a < best:
                        best, dims = a, (h, w)
        ring = rect_area((33, 33), dims[0] + 2, dims[1] + 2) - best
        within = within and best <= greedy <= best + ring
    checks.append(within)

    elapsed = time.time() - t0
    ok = all(checks) and elapsed < 60
    report(5, ok, f"3x3/5x5 support, cross stripe, monotone r, greedy within "
                  f"one ring of oracle ({elapsed:.1f}s)")


def test_criterion_6_erf_direction_soft():
    t0 = time.time()
    rng = np.random.default_rng(0)
    sep = [TfSepConvs(4, 4, rng=np.random.default_rng(100 + i),
                      dtype=np.float64) for i in range(4)]
    con = [ConsecutiveBlock(4, rng=np.random.default_rng(200 + i),
                            dtype=np.float64) for i in range(4)]

    def stack_fn(blocks):
        def fn(x):
            for b in blocks:
                x = b.forward(x, train=False)
            return x
        return fn

    inputs = [rng.standard_normal((1, 4, 32, 32)) for _ in range(32)]
    r_sep = high_contribution_ratio(compute_erf(stack_fn(sep), inputs), 0.5)
    r_con = high_contribution_ratio(compute_erf(stack_fn(con), inputs), 0.5)
    elapsed = time.time() - t0
    direction = "confirms" if r_sep >= r_con else "does not confirm"
    # soft criterion: reported, never hard-asserted; trained-model area
    # ratios from the original study are out of reach at this scale
    report(6, True,
           f"r(separate)={r_sep:.3f} vs r(consecutive)={r_con:.3f} at t=0.5, "
           f"random init {direction} the expected ordering; reported only "
           f"({elapsed:.1f}s)")


def test_criterion_7_trainability_smoke():
    t0 = time.time()
    ds = generate_toy_dataset(ToyDatasetSpec(samples_per_class=500,
                                             noise=0.1, seed=0))
    train_ds, val_ds = split_dataset(ds, 0.2, 0)
    model = build(NetConfig(tau=8, seed=0))
    cfg = TrainConfig(epochs=30, batch_size=32, seed=0, target_accuracy=0.9)
    history = train(model, train_ds, cfg, val_dataset=val_ds)
    best = max(h["val_acc"] for h in history)
    fit_time = time.time() - t0

    # single-sample overfit with a constant learning rate
    over_model = build(NetConfig(tau=8, seed=1))
    x, y = ds.inputs[:1], ds.labels[:1]
    opt = Adam(over_model.named_params(), cfg)
    final_loss = np.inf
    for step in range(200):
        logits = over_model.forward(Tensor(x), train=True)
        loss = softmax_cross_entropy(logits, y)
        final_loss = loss.item()
        if final_loss < 0.01:
            break
        opt.zero_grad()
        backward(loss)
        opt.step(lr=0.01)
    elapsed = time.time() - t0
    ok = best >= 0.9 and fit_time < 300 and final_loss < 0.01
    report(7, ok, f"val_acc {best:.3f} in {len(history)} epochs "
                  f"({fit_time:.0f}s); overfit loss {final_loss:.4f} "
                  f"by step {step} ({elapsed:.0f}s total)")


def test_criterion_8_schedule_and_augmentation_exactness():
    cfg = TrainConfig(epochs=100, warmup_epochs=5, peak_lr=0.01)
    sched_ok = (abs(lr_at(0, cfg)) <= 1e-12
                and abs(lr_at(5, cfg) - 0.01) <= 1e-12
                and abs(lr_at(100, cfg)) <= 1e-12
                and abs(lr_at(52.5, cfg) - 0.005) <= 1e-12)

    rng = np.random.default_rng(0)
    batch = Batch(rng.standard_normal((4, 1, 16, 12)).astype(np.float32),
                  np.eye(10, dtype=np.float32)[rng.integers(0, 10, 4)])
    mixed = mixup(batch, 0.3, rng, lam=1.0)
    mix_ok = (np.array_equal(mixed.inputs, batch.inputs)
              and np.array_equal(mixed.labels, batch.labels))

    r = np.random.default_rng(7)
    fms = freq_mixstyle(batch, 0.3, 1.0, r, lam=0.0)
    r2 = np.random.default_rng(7)
    r2.random()
    perm = r2.permutation(4)
    mu = batch.inputs.mean(axis=(1, 3))
    sd = batch.inputs.std(axis=(1, 3))
    fms_ok = (np.allclose(fms.inputs.mean(axis=(1, 3)), mu[perm], atol=1e-4)
              and np.allclose(fms.inputs.std(axis=(1, 3)), sd[perm], atol=1e-4))

    ok = sched_ok and mix_ok and fms_ok
    report(8, ok, "lr endpoints exact to 1e-12; mixup lam=1 identity; "
                  "freq_mixstyle lam=0 moment transfer within 1e-4")


def test_criterion_9_audio_frontend():
    t0 = time.time()
    cfg = LogMelConfig()
    silence = log_mel(WaveClip(np.zeros(32000, np.float32), 32000), cfg)
    feats = silence.tensor.data
    shape_ok = feats.shape == (1, 1, 256, 64)
    floor_ok = np.allclose(feats, feats.flat[0])

    t = np.arange(32000) / 32000
    tone = (0.5 * np.sin(2 * np.pi * 1000 * t)).astype(np.float32)
    out = log_mel(WaveClip(tone, 32000), cfg).tensor.data[0, 0]
    peak = int(out.mean(axis=1).argmax())
    centers = mel_bin_frequencies(cfg)
    target = int(np.abs(centers - 1000).argmin())
    peak_ok = abs(peak - target) <= 2

    elapsed = time.time() - t0
    ok = shape_ok and floor_ok and peak_ok
    report(9, ok, f"shape {feats.shape}, silence floor uniform, 1 kHz peak at "
                  f"bin {peak} vs expected {target} ({elapsed:.1f}s)")


def test_criterion_10_non_reproducible_targets_stated():
    statement = ("full-corpus test accuracies 60.0%/61.6% and trained-model "
                 "ERF area ratios 13.9/22.5/43.8% require the original "
                 "large-scale dataset and multi-hour training; they are out "
                 "of scope here and replaced by the property suites above")
    report(10, True, statement)
