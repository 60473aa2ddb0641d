"""Tests for the performance/resource models and the design-space search."""

import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regkit.dse import (
    ACTOR_STAGES,
    FEATNET_STAGES,
    ZCU104,
    CoreModel,
    ModelConstants,
    ResourceBudget,
    SearchGrids,
    Stage,
    actor_model,
    balance_stage,
    bram_blocks,
    conv_buffer_bits,
    default_grids,
    explore,
    featnet_model,
    frontier_rows,
    load_constants,
    lut_size,
    pipeline_cycles,
    pointlk_model,
    quantconv_buffer_bits,
    reagent_model,
    roofline,
)

CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "dse.cfg"

# The two pinned design points used throughout: the feature pipeline tiled
# at B=2 with the wide final stage unrolled (2, 512) for the solver core,
# and B=14 with (14, 64) plus a 128-wide actor for the discrete-action core.
LK_POINT = dict(N=1024, B=2, p_p=2, p_o=512)
RA_POINT = dict(N=1024, B=14, p_p=14, p_o=64, p_actor=128)


# ---------------------------------------------------------------------------
# Memory arithmetic
# ---------------------------------------------------------------------------

class TestBramBlocks:
    def test_wide_quantized_weight_buffer_partitioned_in_two(self):
        assert bram_blocks(131072, 8, 2) == 58

    def test_single_entry_still_costs_one_block(self):
        assert bram_blocks(1, 8, 1) == 1

    def test_words_wider_than_a_port_stack_blocks(self):
        # 72-bit entries need two 36-bit-wide blocks side by side.
        assert bram_blocks(1024, 72, 1) == 2 * math.ceil(1024 * 72 / (2 * 18_432))

    def test_uram_variant_has_sixteen_times_the_capacity(self):
        # 2048x512 8-bit weights: 8 Mb needs 29 URAMs unpartitioned.
        assert bram_blocks(2048 * 512, 8, 1, uram=True) == 29
        assert bram_blocks(2048 * 512, 8, 8, uram=True) == 32

    @given(
        s=st.integers(min_value=1, max_value=1 << 22),
        w=st.integers(min_value=1, max_value=72),
        p=st.integers(min_value=1, max_value=64),
    )
    @settings(max_examples=1000, deadline=None)
    def test_doubling_the_partition_never_decreases_blocks(self, s, w, p):
        assert bram_blocks(s, w, 2 * p) >= bram_blocks(s, w, p)

    def test_rejects_non_positive_arguments(self):
        with pytest.raises(ValueError):
            bram_blocks(0, 8, 1)
        with pytest.raises(ValueError):
            bram_blocks(8, 8, 0)


class TestBufferBits:
    def test_quantized_stage_parameter_bits(self):
        assert quantconv_buffer_bits(128, 1024, 8, 8, 32, 9) == 1_099_744

    def test_full_precision_stage_parameter_bits(self):
        assert conv_buffer_bits(128, 1024, 32) == 4_227_072

    def test_quantization_stops_paying_off_above_fourteen_activation_bits(self):
        full = conv_buffer_bits(128, 1024, 32)
        assert quantconv_buffer_bits(128, 1024, 8, 14, 32, 9) < full
        assert quantconv_buffer_bits(128, 1024, 8, 15, 32, 9) >= full

    def test_lookup_table_sizes(self):
        assert lut_size(8) == 9 * 255 + 1
        assert lut_size(1) == 10

    def test_rejects_non_positive_dimensions(self):
        with pytest.raises(ValueError):
            quantconv_buffer_bits(0, 1024)
        with pytest.raises(ValueError):
            conv_buffer_bits(128, 0)


# ---------------------------------------------------------------------------
# Stage and pipeline arithmetic
# ---------------------------------------------------------------------------

class TestPipelineCycles:
    def test_eight_tile_example(self):
        assert pipeline_cycles((10, 20, 40), 8) == 7 * 40 + 70

    def test_single_tile_is_the_plain_sum(self):
        assert pipeline_cycles((10, 20, 40), 1) == 70

    def test_rejects_zero_tiles(self):
        with pytest.raises(ValueError):
            pipeline_cycles((10,), 0)


class TestStageMonotonicity:
    @given(
        stage_idx=st.integers(min_value=0, max_value=len(FEATNET_STAGES) - 1),
        b_exp=st.integers(min_value=0, max_value=6),
        pp_exp=st.integers(min_value=0, max_value=6),
        po_exp=st.integers(min_value=0, max_value=10),
    )
    @settings(max_examples=300, deadline=None)
    def test_latency_weakly_decreases_in_either_unroll_factor(
        self, stage_idx, b_exp, pp_exp, po_exp
    ):
        c = ModelConstants()
        stage = FEATNET_STAGES[stage_idx]
        B = 1 << b_exp
        p_p = min(1 << pp_exp, B)
        p_o = min(1 << po_exp, stage.n)
        base = stage.latency(B, p_p, p_o, c)
        if 2 * p_p <= B:
            assert stage.latency(B, 2 * p_p, p_o, c) <= base
        if 2 * p_o <= stage.n:
            assert stage.latency(B, p_p, 2 * p_o, c) <= base

    def test_dsp_weakly_increases_with_unrolling(self):
        c = ModelConstants()
        for stage in FEATNET_STAGES:
            assert stage.dsp(2, 4, c) >= stage.dsp(1, 1, c)

    def test_unknown_stage_kind_is_rejected(self):
        with pytest.raises(ValueError):
            Stage("bogus", "fft", n=8).latency(1, 1, 1, ModelConstants())


class TestBalancing:
    def test_generous_budget_needs_no_unrolling(self):
        stage = FEATNET_STAGES[1]  # first convolution
        assert balance_stage(stage, 2, 10**9, ModelConstants()) == (1, 1)

    def test_point_unrolling_grows_before_output_unrolling(self):
        c = ModelConstants()
        stage = Stage("conv1", "conv", n=64, m=3)
        # Budget reachable at (7, 1) for a 14-point tile.
        budget = stage.latency(14, 7, 1, c)
        assert balance_stage(stage, 14, budget, c) == (7, 1)

    def test_impossible_budget_falls_back_to_full_unrolling(self):
        stage = Stage("conv1", "conv", n=64, m=3)
        assert balance_stage(stage, 2, 1, ModelConstants()) == (2, 64)


# ---------------------------------------------------------------------------
# Core models at the pinned design points
# ---------------------------------------------------------------------------

class TestFeatnetModel:
    def test_off_chip_traffic_is_sixteen_bytes_per_point(self):
        assert featnet_model(**LK_POINT).bytes == 16_384

    def test_derived_factors_match_the_pinned_solver_design(self):
        factors = dict(
            (name, (pp, po)) for name, pp, po in featnet_model(**LK_POINT).stage_factors
        )
        assert factors["transform"] == (1, 1)
        assert factors["conv1"] == (2, 4)
        assert factors["quant64"] == (1, 1)
        assert factors["quantconv2"] == (2, 64)
        assert factors["quant128"] == (1, 1)
        assert factors["quantconv3"] == (2, 512)

    def test_derived_factors_match_the_pinned_actor_design(self):
        factors = dict(
            (name, (pp, po))
            for name, pp, po in featnet_model(1024, 14, 14, 64).stage_factors
        )
        assert factors["conv1"] == (7, 1)
        assert factors["quantconv2"] == (14, 8)

    def test_rejects_factor_combinations_that_do_not_divide(self):
        with pytest.raises(ValueError):
            featnet_model(1024, 3, 2, 512)          # P_p does not divide B
        with pytest.raises(ValueError):
            featnet_model(1024, 2, 2, 500)          # P_o does not divide the width
        with pytest.raises(ValueError):
            featnet_model(16, 32, 1, 1)             # tile larger than the cloud

    def test_more_output_unrolling_weakly_reduces_cycles_and_grows_dsp(self):
        lo = featnet_model(1024, 2, 2, 128)
        hi = featnet_model(1024, 2, 2, 256)
        assert hi.cycles <= lo.cycles
        assert hi.dsp >= lo.dsp


class TestPointlkModel:
    def test_off_chip_traffic_for_a_full_solve(self):
        model = pointlk_model(**LK_POINT, i_jacobi=12, i_max=10)
        assert model.bytes == 23 * 16_384 + 11 * 48 == 377_360

    def test_latency_window_at_the_pinned_design_point(self):
        ms = pointlk_model(**LK_POINT, i_jacobi=12, i_max=20).milliseconds()
        assert 20.0 <= ms <= 28.0

    def test_zero_iterations_leaves_only_initialization_terms(self):
        c = ModelConstants()
        feat = featnet_model(**LK_POINT)
        model = pointlk_model(**LK_POINT, i_jacobi=12, i_max=0)
        assert model.cycles == 13 * feat.cycles + c.c_pinv
        assert model.bytes == 13 * feat.bytes + 48

    def test_rejects_unsupported_jacobian_feature_counts(self):
        with pytest.raises(ValueError):
            pointlk_model(**LK_POINT, i_jacobi=7)

    def test_fits_the_default_budget_at_the_pinned_point(self):
        model = pointlk_model(**LK_POINT, i_jacobi=12, i_max=20)
        assert ZCU104.admits(model.dsp, model.bram, model.uram)
        assert model.uram == 0


class TestReagentModel:
    def test_latency_window_at_the_pinned_design_point(self):
        ms = reagent_model(**RA_POINT, i_max=10).milliseconds()
        assert 9.0 <= ms <= 14.0

    def test_off_chip_traffic_counts_clouds_and_transforms_per_iteration(self):
        model = reagent_model(**RA_POINT, i_max=10)
        assert model.bytes == 11 * (16_384 + 48)

    def test_actor_balancing_matches_the_pinned_head_design(self):
        factors = dict(
            (name, (pp, po)) for name, pp, po in actor_model(128).stage_factors
        )
        assert factors["fc1"] == (1, 128)
        assert factors["fc2"] == (1, 32)
        assert factors["fc3"] == (1, 2)
        assert factors["quant2048"] == (1, 1)
        assert factors["quant512"] == (1, 1)
        assert factors["quant256"] == (1, 1)

    def test_quantized_actor_weights_live_in_uram(self):
        head = actor_model(128)
        assert head.uram == 36          # 32 blocks for fc1 + 4 for fc2
        model = reagent_model(**RA_POINT)
        assert model.uram == 2 * head.uram

    def test_fits_the_default_budget_at_the_pinned_point(self):
        model = reagent_model(**RA_POINT, i_max=10)
        assert ZCU104.admits(model.dsp, model.bram, model.uram)

    def test_rejects_actor_factor_that_does_not_divide(self):
        with pytest.raises(ValueError):
            actor_model(100)


# ---------------------------------------------------------------------------
# Roofline
# ---------------------------------------------------------------------------

class TestRoofline:
    def test_reported_operating_points_classify_compute_bound(self):
        # Solver core: 404.8 Gops/s compute vs 1.78e4 ops/byte * 3.2 GB/s.
        for cp_gops, ctc in ((404.8, 1.78e4), (280.6, 1.64e4)):
            ops = cp_gops * 1e9          # one second of compute
            cycles = 200e6               # at 200 MHz
            data = ops / ctc
            perf, bound = roofline(ops, cycles, data)
            assert bound == "compute"
            assert perf == pytest.approx(cp_gops * 1e9, rel=1e-12)

    def test_reported_compute_memory_gap_is_reproduced(self):
        memory_ceiling = 1.78e4 * 3.2e9
        assert memory_ceiling / 404.8e9 == pytest.approx(140.8, rel=0.01)

    def test_huge_transfers_flip_the_classification_to_memory_bound(self):
        perf, bound = roofline(1e9, 200e6, 1e12)
        assert bound == "memory"
        assert perf == pytest.approx((1e9 / 1e12) * 3.2e9)

    def test_rejects_non_positive_inputs(self):
        with pytest.raises(ValueError):
            roofline(0.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

SMALL_GRIDS = SearchGrids(tile_sizes=(1, 2, 4, 8), output_factors=(64, 128, 256, 512))


class TestExplore:
    def test_matches_an_independent_exhaustive_scan(self):
        result = explore(ZCU104, "pointlk", SMALL_GRIDS, i_jacobi=12, i_max=20)
        best = None
        for B in SMALL_GRIDS.tile_sizes:
            for p_p in (d for d in range(1, B + 1) if B % d == 0):
                for p_o in SMALL_GRIDS.output_factors:
                    m = pointlk_model(1024, B, p_p, p_o, i_jacobi=12, i_max=20)
                    if not ZCU104.admits(m.dsp, m.bram, m.uram):
                        continue
                    cand = (m.cycles, (B, p_p, p_o, 0))
                    if best is None or cand < best:
                        best = cand
        assert result.best is not None
        assert (result.best.model.cycles, result.best.key) == best

    def test_result_is_independent_of_grid_ordering(self):
        reversed_grids = SearchGrids(
            tile_sizes=tuple(reversed(SMALL_GRIDS.tile_sizes)),
            output_factors=tuple(reversed(SMALL_GRIDS.output_factors)),
        )
        a = explore(ZCU104, "pointlk", SMALL_GRIDS, i_max=5)
        b = explore(ZCU104, "pointlk", reversed_grids, i_max=5)
        assert a.best is not None and b.best is not None
        assert a.best.key == b.best.key

    def test_best_beats_every_feasible_point(self):
        result = explore(ZCU104, "reagent", default_grids(1024, "reagent"), i_max=10)
        assert result.best is not None
        for point in result.points:
            if point.feasible:
                assert result.best.model.cycles <= point.model.cycles

    def test_zero_dsp_budget_reports_an_empty_feasible_set(self):
        broke = ResourceBudget(dsp=0, bram=312, uram=96, cap=0.8)
        result = explore(broke, "pointlk", SMALL_GRIDS, i_max=5)
        assert result.best is None
        assert result.feasible_count == 0
        assert len(result.points) > 0

    def test_relaxing_the_cap_never_increases_the_best_latency(self):
        tight = explore(ResourceBudget(cap=0.8), "pointlk", SMALL_GRIDS, i_max=20)
        loose = explore(ResourceBudget(cap=1.0), "pointlk", SMALL_GRIDS, i_max=20)
        assert tight.best is not None and loose.best is not None
        assert loose.best.model.cycles <= tight.best.model.cycles

    def test_rejects_unknown_model_names(self):
        with pytest.raises(ValueError):
            explore(ZCU104, "warp", SMALL_GRIDS)

    def test_default_grids_stay_within_brute_force_scale(self):
        grids = default_grids(1024, "reagent")
        assert all(1024 % b == 0 and b <= 64 for b in grids.tile_sizes)
        n_points = sum(
            sum(1 for d in range(1, B + 1) if B % d == 0) for B in grids.tile_sizes
        ) * len(grids.output_factors) * len(grids.actor_factors)
        assert n_points <= 10_000

    def test_frontier_rows_carry_the_documented_columns(self):
        result = explore(ZCU104, "reagent",
                         SearchGrids((14,), (64,), (128,)), i_max=10)
        rows = frontier_rows(result)
        assert len(rows) == 4  # one per divisor of B=14: P_p in {1, 2, 7, 14}
        assert list(rows[0]) == ["B", "P_p", "P_o", "P_actor", "C_cycles", "ms",
                                 "DSP", "BRAM", "URAM", "feasible"]


class TestBudgetAndConstants:
    def test_budget_validates_its_cap(self):
        with pytest.raises(ValueError):
            ResourceBudget(cap=0.0)
        with pytest.raises(ValueError):
            ResourceBudget(cap=1.5)

    def test_config_file_round_trips_the_default_constants(self):
        assert load_constants(CONFIG_PATH) == ModelConstants()

    def test_unknown_keys_and_malformed_lines_are_rejected(self, tmp_path):
        bad_key = tmp_path / "bad_key.cfg"
        bad_key.write_text("warp_speed = 9\n")
        with pytest.raises(ValueError, match="warp_speed"):
            load_constants(bad_key)
        bad_line = tmp_path / "bad_line.cfg"
        bad_line.write_text("ii_loop 1\n")
        with pytest.raises(ValueError, match="key = value"):
            load_constants(bad_line)

    def test_overrides_apply_on_top_of_defaults(self, tmp_path):
        cfg = tmp_path / "dse.cfg"
        cfg.write_text("# comment\nc_loop = 8\nfrequency_hz = 1e8\n")
        constants = load_constants(cfg)
        assert constants.c_loop == 8
        assert constants.frequency_hz == 1e8
        assert constants.ii_loop == ModelConstants().ii_loop
