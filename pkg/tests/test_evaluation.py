import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from csi_llm.backbone import BackboneConfig
from csi_llm.channel_data import (
    ScenarioConfig,
    apply_normalization,
    generate_synthetic_dataset,
    normalize,
    split_dataset,
)
from csi_llm.errors import ConfigError, DegenerateDataError, DimensionError
from csi_llm.evaluation import (
    CsiLlmPredictor,
    FixedStepPredictor,
    NoPredictionPredictor,
    ablation_compare,
    batch_nmse,
    make_predictor,
    nmse,
    no_prediction,
    one_step_eval,
    rollout,
    rollout_eval,
)
from csi_llm.report import EvalResults, emit_report, load_records, summary_table
from csi_llm.training import HParams, train_baseline, train_csi_llm

from conftest import tiny_scenario

STEP = (2, 2, 2, 2)


def rand_step(rng, shape=STEP):
    return rng.standard_normal(shape)


# -------------------------------------------------------------------- nmse


def test_nmse_exact_prediction_clamps_to_floor():
    rng = np.random.default_rng(0)
    a = rand_step(rng)
    lin, db = nmse(a, a)
    assert lin == 0.0 and db == -120.0


def test_nmse_zero_prediction_is_unity():
    rng = np.random.default_rng(1)
    a = rand_step(rng)
    lin, db = nmse(a, np.zeros_like(a))
    assert lin == pytest.approx(1.0) and db == pytest.approx(0.0)


def test_nmse_double_prediction_is_unity():
    rng = np.random.default_rng(2)
    a = rand_step(rng)
    lin, db = nmse(a, 2 * a)
    assert lin == pytest.approx(1.0) and db == pytest.approx(0.0)


def test_nmse_matches_scalar_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, p = rand_step(rng), rand_step(rng)
        err = 0.0
        ref = 0.0
        for x, y in zip(a.ravel(), p.ravel()):  # independent scalar loop
            err += (x - y) ** 2
            ref += x * x
        lin, _ = nmse(a, p)
        assert lin == pytest.approx(err / ref, rel=1e-9)


@given(st.integers(0, 10_000), st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=40, deadline=None)
def test_nmse_scale_invariance(seed, alpha):
    rng = np.random.default_rng(seed)
    a, p = rand_step(rng), rand_step(rng)
    base, _ = nmse(a, p)
    scaled, _ = nmse(alpha * a, alpha * p)
    assert scaled == pytest.approx(base, rel=1e-9)
    neg, _ = nmse(-alpha * a, -alpha * p)
    assert neg == pytest.approx(base, rel=1e-9)


def test_nmse_zero_iff_equal():
    rng = np.random.default_rng(4)
    a = rand_step(rng)
    assert nmse(a, a)[0] == 0.0
    p = a.copy()
    p[0, 0, 0, 0] += 1e-3
    assert nmse(a, p)[0] > 0.0


def test_nmse_rejects_all_zero_reference():
    with pytest.raises(DegenerateDataError):
        nmse(np.zeros(STEP), np.ones(STEP))


def test_nmse_shape_mismatch():
    with pytest.raises(DimensionError):
        nmse(np.zeros(STEP), np.zeros((2, 2, 2, 3)))


def test_nmse_literal_switch_is_sqrt():
    rng = np.random.default_rng(5)
    a, p = rand_step(rng), rand_step(rng)
    squared, _ = nmse(a, p, squared=True)
    literal, _ = nmse(a, p, squared=False)
    assert literal == pytest.approx(np.sqrt(squared), rel=1e-12)


def test_batch_nmse_averages_linear_before_db():
    rng = np.random.default_rng(6)
    actuals = [rand_step(rng) for _ in range(5)]
    preds = [rand_step(rng) for _ in range(5)]
    linears = [nmse(a, p)[0] for a, p in zip(actuals, preds)]
    lin, db = batch_nmse(actuals, preds)
    assert lin == pytest.approx(np.mean(linears), rel=1e-12)
    assert db == pytest.approx(10 * np.log10(np.mean(linears)), rel=1e-9)


# ----------------------------------------------------------- no_prediction


def test_no_prediction_returns_last_step():
    rng = np.random.default_rng(7)
    context = rng.standard_normal((5, *STEP))
    assert np.array_equal(no_prediction(context), context[-1])
    single = rng.standard_normal((1, *STEP))
    assert np.array_equal(no_prediction(single), single[0])


def test_no_prediction_constant_channel_zero_nmse():
    step = np.ones(STEP)
    context = np.stack([step] * 4)
    assert nmse(step, no_prediction(context))[0] == 0.0


def test_no_prediction_empty_context():
    with pytest.raises(DimensionError):
        no_prediction(np.zeros((0, *STEP)))


def test_no_prediction_slow_fading_beats_fast():
    # one-step aging at 30 km/h must be milder than at 120 km/h (5 ms TTI)
    results = {}
    for speed in (30.0, 120.0):
        sc = ScenarioConfig(speed_kmh=speed, tti_s=5e-3, n_tx=4, n_rx=2, n_prb=2, seed=17)
        ds = generate_synthetic_dataset(sc, 400)
        grid, _ = one_step_eval(NoPredictionPredictor(), ds, [4], anchor=16)
        results[speed] = grid[4].nmse_linear
    assert results[30.0] < results[120.0]


# --------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def eval_setup():
    """Briefly trained models at the tiny scenario, plus raw test split."""
    sc = tiny_scenario(seed=23)
    ds = generate_synthetic_dataset(sc, 120)
    tr, va, te = split_dataset(ds, (80, 20, 20))
    trn, stats = normalize(tr, "global_std")
    van = apply_normalization(va, stats)
    cfg = BackboneConfig(n_layers=1, model_dim=32, n_heads=4, max_positions=32, proj_hidden=32)
    hp = HParams(l_m=16, batch_size=20, max_epochs=3, seed=3)
    ck_llm = train_csi_llm((trn, van), cfg, hp)
    ck_f4 = train_baseline((trn, van), "fixed4", cfg, hp)
    ck_p4 = train_baseline((trn, van), "parallel4", cfg, hp)
    return ck_llm, ck_f4, ck_p4, te


# ------------------------------------------------------------ one-step grid


def test_one_step_single_checkpoint_populates_all_lengths(eval_setup):
    ck_llm, _, _, te = eval_setup
    grid, _ = one_step_eval(CsiLlmPredictor(ck_llm), te, [2, 4, 8, 16], anchor=16)
    assert all(grid[l] is not None for l in (2, 4, 8, 16))


def test_one_step_fixed_checkpoint_foreign_cells_absent(eval_setup):
    _, ck_f4, _, te = eval_setup
    predictor = FixedStepPredictor(ck_f4)
    grid, _ = one_step_eval(predictor, te, [2, 4, 8, 16], anchor=16)
    assert grid[4] is not None
    assert grid[2] is None and grid[8] is None and grid[16] is None
    both_absent, _ = one_step_eval(predictor, te, [2, 8], anchor=16)
    assert both_absent[2] is None and both_absent[8] is None


def test_one_step_length_exceeding_context_absent(eval_setup):
    ck_llm, _, _, te = eval_setup
    grid, _ = one_step_eval(CsiLlmPredictor(ck_llm), te, [4, 19, 32], anchor=16)
    assert grid[4] is not None
    assert grid[19] is None and grid[32] is None  # only 16 steps precede the anchor


def test_one_step_records_fields(eval_setup):
    ck_llm, _, _, te = eval_setup
    _, records = one_step_eval(
        CsiLlmPredictor(ck_llm), te, [4], anchor=16, collect_records=True, run_id="t"
    )
    assert len(records) == len(te)
    row = records[0].to_row("t", "csi-llm")
    assert set(row) == {
        "run_id", "scenario", "variant", "context_length", "step", "nmse_linear", "nmse_db",
    }
    assert row["context_length"] == 4 and row["step"] == 16


# ------------------------------------------------------------------ rollout


def test_rollout_produces_ground_truth_matched_records(eval_setup):
    ck_llm, _, _, te = eval_setup
    sample = te.samples[0].csi
    result = rollout(CsiLlmPredictor(ck_llm), sample[:4], 16, ground_truth=sample[4:])
    assert result.horizon == 16 and len(result.records) == 16
    assert result.window_policy == "retain_all"
    assert all(r.nmse_linear is not None for r in result.records)
    # retain_all: effective window grows to 4 + 15 = 19 tokens at the last step
    assert result.records[-1].context_length == 19
    assert [r.target_step for r in result.records] == list(range(4, 20))


def test_rollout_beyond_ground_truth_absent_cells(eval_setup):
    ck_llm, _, _, te = eval_setup
    sample = te.samples[0].csi
    result = rollout(CsiLlmPredictor(ck_llm), sample[:4], 20, ground_truth=sample[4:])
    assert len(result.records) == 20
    assert all(r.nmse_linear is not None for r in result.records[:16])
    assert all(r.nmse_linear is None for r in result.records[16:])


def test_rollout_horizon_one_equals_one_step_bitwise(eval_setup):
    ck_llm, _, _, te = eval_setup
    predictor = CsiLlmPredictor(ck_llm)
    per_step, roll_records = rollout_eval(predictor, te, 4, 1, collect_records=True)
    grid, one_records = one_step_eval(predictor, te, [4], anchor=4, collect_records=True)
    assert per_step[0].nmse_linear == grid[4].nmse_linear
    assert per_step[0].nmse_db == grid[4].nmse_db
    for rr, orr in zip(roll_records, one_records):
        assert np.array_equal(rr.predicted, orr.predicted)
        assert rr.nmse_linear == orr.nmse_linear
        assert rr.target_step == orr.target_step == 4


def test_rollout_causality_under_future_mutation(eval_setup):
    ck_llm, _, _, te = eval_setup
    predictor = CsiLlmPredictor(ck_llm)
    sample = te.samples[0].csi.copy()
    base = rollout(predictor, sample[:4], 8, ground_truth=sample[4:])
    mutated = sample.copy()
    mutated[9] += 5.0  # ground truth beyond the context
    after = rollout(predictor, mutated[:4], 8, ground_truth=mutated[4:])
    for k in range(5):  # predictions for steps 4..8 precede the mutated step 9
        assert np.array_equal(base.records[k].predicted, after.records[k].predicted)


def test_rollout_fixed4_slides_and_parallel4_blocks(eval_setup):
    _, ck_f4, ck_p4, te = eval_setup
    f4 = FixedStepPredictor(ck_f4)
    per_step, _ = rollout_eval(f4, te, 4, 16)
    assert sum(c is not None for c in per_step) == 16

    p4 = FixedStepPredictor(ck_p4)
    per_step, _ = rollout_eval(p4, te, 4, 16)
    assert sum(c is not None for c in per_step) == 16
    with pytest.raises(ConfigError, match="multiple"):
        rollout_eval(p4, te, 4, 6)

    with pytest.raises(DimensionError):
        rollout(f4, te.samples[0].csi[:5], 4)


def test_rollout_no_prediction_holds_last_step(eval_setup):
    _, _, _, te = eval_setup
    result = rollout(NoPredictionPredictor(), te.samples[0].csi[:4], 8)
    for rec in result.records:
        assert np.array_equal(rec.predicted, te.samples[0].csi[3])


def test_variable_length_service_one_checkpoint(eval_setup):
    # a single checkpoint serves every length 1..16 without reconfiguration
    ck_llm, _, _, te = eval_setup
    predictor = CsiLlmPredictor(ck_llm)
    grid, _ = one_step_eval(predictor, te, list(range(1, 17)), anchor=16)
    assert all(grid[l] is not None for l in range(1, 17))


@torch.no_grad()
def test_prefix_prediction_consistency_through_head(eval_setup):
    # appending steps never alters predictions made from shorter prefixes:
    # the all-positions training path at position m-1 equals predict_next on
    # the m-step prefix, within 1e-5 relative
    ck_llm, _, _, te = eval_setup
    model = ck_llm.build_model()
    x = torch.from_numpy(te.samples[0].csi[:16] / float(ck_llm.norm_stats.scale))
    all_positions = model(x)
    scale = float(all_positions.abs().max())
    for m in range(1, 17):
        from_prefix = model.predict_next(x[:m])
        rel = float((all_positions[m - 1] - from_prefix).abs().max()) / scale
        assert rel < 1e-5, f"prefix {m}: rel={rel}"


# ----------------------------------------------------------------- ablation


def test_ablation_compare_and_control(tmp_path):
    from csi_llm.backbone import write_backbone_source

    sc = tiny_scenario(seed=29)
    ds = generate_synthetic_dataset(sc, 60)
    tr, va, te = split_dataset(ds, (40, 10, 10))
    cfg = BackboneConfig(n_layers=1, model_dim=32, n_heads=4, max_positions=32, proj_hidden=32)
    hp = HParams(l_m=8, batch_size=20, max_epochs=2, seed=5)
    source = tmp_path / "src.npz"
    write_backbone_source(source, cfg, seed=1)

    paired = ablation_compare(
        {sc.tag(): (tr, va, te)}, cfg, hp, [2, 4], pretrained_source=source, anchor=8
    )
    assert [s.init_mode for s in paired.sides] == ["pretrained", "random"]
    grids = [side.grids[sc.tag()] for side in paired.sides]
    assert all(g[2] is not None and g[4] is not None for g in grids)
    assert paired.rows and all("nmse_db" in r for r in paired.rows)

    control = ablation_compare(
        {sc.tag(): (tr, va, te)}, cfg, hp, [2, 4],
        init_pair=("random", "random"), anchor=8,
    )
    a, b = control.sides
    for l in (2, 4):
        assert a.grids[sc.tag()][l].nmse_linear == pytest.approx(
            b.grids[sc.tag()][l].nmse_linear, abs=1e-12
        )


# ------------------------------------------------------------------ report


def test_emit_report_round_trip(tmp_path, eval_setup):
    ck_llm, ck_f4, _, te = eval_setup
    tag = te.scenario.tag()
    results = EvalResults(run_id="rep")
    for name, predictor in (("csi-llm", CsiLlmPredictor(ck_llm)),
                            ("fixed4", FixedStepPredictor(ck_f4)),
                            ("no-prediction", NoPredictionPredictor())):
        grid, recs = one_step_eval(predictor, te, [2, 4, 8, 16], anchor=16, collect_records=True)
        results.grids[(tag, name)] = grid
        results.records += [r.to_row("rep", name) for r in recs]
        per_step, roll_recs = rollout_eval(predictor, te, 4, 16, collect_records=True)
        results.rollout_curves[(tag, name)] = per_step
        results.records += [r.to_row("rep", name) for r in roll_recs]

    written = emit_report(results, tmp_path / "out")
    back = load_records(tmp_path / "out" / "records.ndjson")
    assert len(back) == len(results.records)
    for row, orig in zip(back, results.records):
        assert row == {k: orig[k] for k in row}

    text = (tmp_path / "out" / "summary.txt").read_text()
    assert text.count("-") > 3  # fixed4 foreign cells render as '-'
    assert "csi-llm" in text and "no-prediction" in text
    assert written["plots"], "rollout plots expected"
    for p in written["plots"]:
        assert p.exists() and p.stat().st_size > 0


def test_emit_report_empty_rejected(tmp_path):
    with pytest.raises(DegenerateDataError):
        emit_report(EvalResults(run_id="empty"), tmp_path / "o")


def test_summary_table_four_by_four():
    from csi_llm.evaluation import CellStats

    grids = {}
    for tag in ("30kmh", "60kmh", "120kmh", "mix"):
        grids[(tag, "csi-llm")] = {
            l: CellStats(0.1, -10.0, 5) for l in (2, 4, 8, 16)
        }
    text = summary_table(grids)
    assert text.count("-10.0000") == 16  # 4 scenarios x 4 lengths
