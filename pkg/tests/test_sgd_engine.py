"""Permutation tape, epoch loop, and the exhaustive reverse-step oracle."""

from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from conftest import band_dataset, manual_dataset, one_hot_dataset
from sgdcodec.codec import BitStream, CodecError
from sgdcodec.model import GeneratorSpec, generate_dataset, zero_model
from sgdcodec.numerics import (
    DomainError,
    FixedScalar,
    FixedVector,
    GridSpec,
    PreconditionError,
)
from sgdcodec.sgd_engine import (
    BitTape,
    GOLDEN64,
    MultiplePreimage,
    PreimageNotFound,
    ReplayTape,
    ReverseSearchInfeasible,
    RunConfig,
    ball_candidate_count,
    check_step_smoothness,
    draw_epoch_permutation,
    draw_permutation,
    forward_step,
    gradient_norm_bound,
    replay_epoch_permutation,
    reverse_epoch,
    reverse_radius_raw,
    reverse_step,
    run_epoch,
    run_training,
    splitmix64,
    vector_from_bytes,
    vector_to_bytes,
    write_trace_csv,
    _sqrt_upper,
)

GRID = GridSpec()
GRID6 = GridSpec(scale=6, clip=4)


def band_config(dataset, step_raw, seed=1, **kw):
    return RunConfig(
        generator=dataset.spec,
        batch_size=kw.pop("batch_size", 4),
        step_raw=step_raw,
        eps=kw.pop("eps", Fraction(1, 100)),
        progress_coeff=kw.pop("progress_coeff", Fraction(1)),
        seed=seed,
        max_epochs=kw.pop("max_epochs", 3),
        grid=dataset.grid,
        **kw,
    )


def test_splitmix64_reference_vectors():
    # published sequence for seed 0
    state, out = splitmix64(0)
    assert state == GOLDEN64
    assert out == 0xE220A8397B1DCDAF
    state, out = splitmix64(state)
    assert out == 0x6E789E6AA1B965F4
    state, out = splitmix64(state)
    assert out == 0x06C45D188009454F


def test_bit_tape_is_deterministic_and_epoch_separated():
    a = BitTape(seed=42, epoch=1)
    b = BitTape(seed=42, epoch=1)
    c = BitTape(seed=42, epoch=2)
    va = [a.take(13) for _ in range(20)]
    vb = [b.take(13) for _ in range(20)]
    vc = [c.take(13) for _ in range(20)]
    assert va == vb
    assert va != vc
    assert len(a.consumed) == 260


def test_bit_tape_rejects_negative_width():
    with pytest.raises(DomainError):
        BitTape(0, 0).take(-1)


class ScriptedSource:
    """Bit source answering take() from a fixed list, for exact FY oracles."""

    def __init__(self, values):
        self.values = list(values)
        self.consumed = BitStream()

    def take(self, width):
        v = self.values.pop(0)
        self.consumed.write_uint(v, width)
        return v


def test_fisher_yates_scripted_draws():
    # n=4: i=3 takes 2 bits, i=2 takes 2 bits (rejects 3), i=1 takes 1 bit
    src = ScriptedSource([2, 3, 1, 0])
    order = draw_permutation(4, src)
    # start [0,1,2,3]: swap(3,2) -> [0,1,3,2]; draw 3 rejected, then 1:
    # swap(2,1) -> [0,3,1,2]; swap(1,0) -> [3,0,1,2]
    assert order == (3, 0, 1, 2)
    assert src.values == []


def test_draw_permutation_is_valid_and_replayable():
    for seed in range(5):
        perm = draw_epoch_permutation(50, seed, epoch=3)
        assert sorted(perm.order) == list(range(50))
        again = replay_epoch_permutation(50, 3, perm.source_bits)
        assert again.order == perm.order


def test_replay_must_consume_entire_tape():
    perm = draw_epoch_permutation(16, 9, epoch=1)
    padded = perm.source_bits.copy()
    padded.write_uint(0, 1)
    with pytest.raises(DomainError):
        replay_epoch_permutation(16, 1, padded)


def test_replay_underrun_raises():
    perm = draw_epoch_permutation(16, 9, epoch=1)
    clipped = BitStream()
    stream = perm.source_bits.copy()
    total = len(stream)
    for _ in range(total - 1):
        clipped.write_uint(stream.read_uint(1), 1)
    with pytest.raises(CodecError):
        replay_epoch_permutation(16, 1, clipped)


def test_permutation_uniformity_smoke():
    counts = {}
    for seed in range(4096):
        order = draw_epoch_permutation(3, seed, epoch=1).order
        counts[order] = counts.get(order, 0) + 1
    assert len(counts) == 6
    assert min(counts.values()) > 4096 / 6 * 0.7


def test_run_config_validation():
    gen = GeneratorSpec(family="random-labels", n=16, dim=2, seed=0)
    with pytest.raises(DomainError):
        RunConfig(generator=gen, batch_size=3, step_raw=1, eps=Fraction(1, 4),
                  progress_coeff=Fraction(1), seed=0, max_epochs=1, grid=GRID)
    with pytest.raises(DomainError):
        RunConfig(generator=gen, batch_size=4, step_raw=-1, eps=Fraction(1, 4),
                  progress_coeff=Fraction(1), seed=0, max_epochs=1, grid=GRID)
    with pytest.raises(DomainError):
        RunConfig(generator=gen, batch_size=4, step_raw=1, eps=Fraction(2),
                  progress_coeff=Fraction(1), seed=0, max_epochs=1, grid=GRID)


def test_zero_step_epoch_keeps_model_frozen():
    ds = generate_dataset(GeneratorSpec(family="random-labels", n=16, dim=2, seed=3), GRID)
    cfg = band_config(ds, step_raw=0, eps=Fraction(1, 100), max_epochs=2)
    run = run_training(cfg, ds)
    assert run.epochs_completed == 2
    for tr in run.completed_traces:
        first = tr.checkpoints[0].raws
        assert all(w.raws == first for w in tr.checkpoints)
        assert len(set(tr.full_acc)) == 1


def test_trace_accuracy_identity():
    # n*lambda == |seen|*lambda' + |unseen|*lambda'' at every checkpoint
    ds = generate_dataset(GeneratorSpec(family="two-gaussians", n=24, dim=2, seed=4), GRID)
    cfg = band_config(ds, step_raw=GRID.unit // 8, batch_size=4, max_epochs=2,
                      eps=Fraction(1, 1000))
    run = run_training(cfg, ds)
    assert run.traces, "no epochs ran"
    for tr in run.traces:
        n, b = tr.n, tr.batch_size
        for j in range(2, tr.steps_done + 1):
            seen_count = (j - 1) * b
            lhs = n * tr.full(j)
            rhs = seen_count * tr.seen(j) + (n - seen_count) * tr.unseen(j)
            assert lhs == rhs


def test_termination_happens_before_any_step():
    # zero model is already accurate enough: epoch 1 stops at j=1, no steps
    rows = [((GRID.unit,), 0) for _ in range(8)]
    ds = manual_dataset(GRID, rows)
    cfg = band_config(ds, step_raw=GRID.unit // 4, eps=Fraction(1, 2), batch_size=2)
    run = run_training(cfg, ds)
    assert run.terminated
    tr = run.traces[0]
    assert tr.terminated and tr.terminated_at == 1
    assert tr.steps_done == 0 and not tr.completed
    assert run.epochs_completed == 0


def test_saturation_aborts_epoch():
    grid = GridSpec(scale=4, clip=1)
    # one solidly correct point dominates the mean gradient and drags the
    # weight over the clip edge; the barely wrong point keeps accuracy low
    rows = [((grid.raw_max,), 0), ((1,), 1)]
    ds = manual_dataset(grid, rows)
    cfg = band_config(ds, step_raw=grid.unit - 1, eps=Fraction(1, 100),
                      batch_size=2, max_epochs=3)
    model = zero_model("logistic-linear", 1, grid)
    w = FixedVector((grid.raw_min + 1,), grid)
    trace, _ = run_epoch(model.with_weights(w), ds, cfg, epoch=1)
    assert trace.saturated and not trace.completed


def test_check_step_smoothness_rejects_large_steps():
    rows = [((2 * GRID.unit,), 1), ((GRID.unit,), 0)]
    ds = manual_dataset(GRID, rows)
    cfg = band_config(ds, step_raw=2 * GRID.unit, batch_size=2)
    # L = max|x|^2/4 = 1, step 2 -> product 2 >= 1
    with pytest.raises(PreconditionError):
        check_step_smoothness(cfg, ds)


def test_gradient_norm_bound_logistic():
    rows = [((3, 4), 1), ((0, 1), 0)]
    ds = manual_dataset(GridSpec(scale=0, clip=64), rows)
    cfg = band_config(ds, step_raw=0, batch_size=2)
    assert gradient_norm_bound(cfg, ds) == Fraction(5)


def test_gradient_norm_bound_requires_g_for_hidden():
    ds = generate_dataset(GeneratorSpec(family="random-labels", n=8, dim=2, seed=0), GRID)
    cfg = band_config(ds, step_raw=1, batch_size=4, model_kind="one-hidden-layer",
                      hidden_width=2)
    with pytest.raises(PreconditionError):
        gradient_norm_bound(cfg, ds)
    cfg2 = band_config(ds, step_raw=1, batch_size=4, model_kind="one-hidden-layer",
                       hidden_width=2, g_bound=Fraction(7, 2))
    assert gradient_norm_bound(cfg2, ds) == Fraction(7, 2)


def test_sqrt_upper_is_an_upper_bound():
    for d in (1, 2, 3, 7, 64, 1000):
        u = _sqrt_upper(d)
        assert u * u > d
        assert (u - Fraction(1, 10**5)) ** 2 < d


def test_reverse_radius_monotone_in_g():
    step = FixedScalar(GRID.unit // 4, GRID)
    radii = [reverse_radius_raw(step, Fraction(g), 3) for g in (1, 2, 5, 9)]
    assert radii == sorted(radii)
    assert all(r >= 1 for r in radii)


def test_ball_candidate_count_is_cube():
    assert ball_candidate_count(2, 3) == 49
    assert ball_candidate_count(3, 1) == 27


def test_reverse_step_inverts_forward_on_band():
    # constant-update band: every forward step is well inside the ball
    ds = band_dataset(GRID6, 16, lo_raw=22, hi_raw=29, seed=5)
    cfg = band_config(ds, step_raw=4, batch_size=4)
    g = gradient_norm_bound(cfg, ds)
    template = zero_model("logistic-linear", 1, GRID6)
    batch = ds.subset((0, 3, 7, 11))
    for w_raw in (-60, -10, 0, 17, 63):
        start = FixedVector((w_raw,), GRID6)
        stepped, _ = forward_step(template.with_weights(start), batch, cfg.step)
        back = reverse_step(stepped.weights, batch, cfg, g, template)
        assert back.raws == start.raws


def test_reverse_step_detects_multiple_preimages():
    # wide feature spread at a coarse grid: the rounded update map collides
    ds = band_dataset(GRID6, 8, lo_raw=100, hi_raw=250, seed=3)
    cfg = band_config(ds, step_raw=16, batch_size=4)
    g = gradient_norm_bound(cfg, ds)
    template = zero_model("logistic-linear", 1, GRID6)
    batch = ds.subset((0, 1, 2, 3))
    images = {}
    collision = None
    for w_raw in range(GRID6.raw_min + 8, GRID6.raw_max - 8):
        w = FixedVector((w_raw,), GRID6)
        img = forward_step(template.with_weights(w), batch, cfg.step)[0].weights.raws
        if img in images:
            collision = img
            break
        images[img] = w_raw
    assert collision is not None, "expected a rounding collision on this band"
    with pytest.raises(MultiplePreimage):
        reverse_step(FixedVector(collision, GRID6), batch, cfg, g, template)


def test_reverse_step_not_found_and_infeasible():
    ds = band_dataset(GRID6, 8, lo_raw=22, hi_raw=29, seed=6)
    cfg = band_config(ds, step_raw=4, batch_size=4)
    g = gradient_norm_bound(cfg, ds)
    template = zero_model("logistic-linear", 1, GRID6)
    batch = ds.subset((0, 1, 2, 3))
    # the update is nonnegative on this band, so nothing maps to the top
    # corner of the grid
    lonely = FixedVector((GRID6.raw_max,), GRID6)
    with pytest.raises(PreimageNotFound):
        reverse_step(lonely, batch, cfg, g, template)
    tiny_cap = band_config(ds, step_raw=4, batch_size=4, ball_cap=2)
    with pytest.raises(ReverseSearchInfeasible):
        reverse_step(lonely, batch, tiny_cap, g, template)


def test_reverse_epoch_recovers_checkpoint_chain():
    gen = GeneratorSpec(family="two-gaussians", n=32, dim=1, seed=3,
                        sigma=Fraction(1, 2), center_dist=Fraction(2))
    cfg = RunConfig(generator=gen, batch_size=4, step_raw=8,
                    eps=Fraction(1, 100), progress_coeff=Fraction(1),
                    seed=3, max_epochs=2, grid=GRID6)
    run = run_training(cfg)
    template = zero_model("logistic-linear", 1, GRID6)
    for tr in run.completed_traces:
        chain = reverse_epoch(
            tr.checkpoints[-1], tr.batches, run.dataset, cfg, template
        )
        assert [w.raws for w in chain] == [w.raws for w in tr.checkpoints]


def test_vector_bytes_round_trip():
    v = FixedVector((7, -9, 0, GRID.raw_max), GRID)
    back = vector_from_bytes(vector_to_bytes(v), GRID)
    assert back.raws == v.raws
    with pytest.raises(DomainError):
        vector_from_bytes(vector_to_bytes(v), GRID6)
    with pytest.raises(DomainError):
        vector_from_bytes(b"\x00" * 4, GRID)


def test_write_trace_csv_shape(tmp_path):
    ds = generate_dataset(GeneratorSpec(family="random-labels", n=8, dim=2, seed=1), GRID)
    cfg = band_config(ds, step_raw=GRID.unit // 8, batch_size=4, eps=Fraction(1, 4),
                      max_epochs=2)
    run = run_training(cfg, ds)
    out = tmp_path / "trace.csv"
    write_trace_csv(run.traces, str(out))
    lines = out.read_text().splitlines()
    assert lines[0].startswith("epoch,j,lambda")
    expect = sum(tr.steps_done + 1 for tr in run.traces)
    assert len(lines) == 1 + expect


@settings(max_examples=40)
@given(st.integers(2, 40), st.integers(0, 2**32))
def test_permutation_replay_property(n, seed):
    perm = draw_epoch_permutation(n, seed, epoch=2)
    assert sorted(perm.order) == list(range(n))
    assert replay_epoch_permutation(n, 2, perm.source_bits).order == perm.order
