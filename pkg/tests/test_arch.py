import pytest

from moeplan import (
    InferenceScenario,
    ModelSpec,
    attention_flops,
    expert_flops,
    load_preset,
    memory_footprint,
)
from moeplan.arch import SpecError

from helpers import toy_model


class TestModelSpec:
    def test_head_dim_mismatch_rejected(self):
        with pytest.raises(SpecError, match="head_dim"):
            toy_model(head_dim=5)

    def test_kv_heads_must_divide_q_heads(self):
        with pytest.raises(SpecError, match="n_kv_heads"):
            toy_model(n_q_heads=4, n_kv_heads=3, head_dim=2)

    def test_top_k_bounded_by_experts(self):
        with pytest.raises(SpecError, match="top_k"):
            toy_model(top_k=5)

    def test_counts_must_be_positive(self):
        with pytest.raises(SpecError):
            toy_model(n_layers=0)
        with pytest.raises(SpecError):
            toy_model(n_shared_experts=-1)


class TestAttentionFlops:
    def test_rejects_zero_tokens(self):
        with pytest.raises(SpecError):
            attention_flops(toy_model(), 0, 1)

    def test_hand_counted_toy_value(self):
        # 1 token, kv 1, hidden 8, 2 kv heads of dim 4:
        # Q [1,8]x[8,8]=128, K 128, V 128, O 128 FLOPs; per-head score
        # [1,4]x[4,1] and value [1,1]x[1,4] are 8 FLOPs each, 2 heads -> 32
        assert attention_flops(toy_model(), 1, 1) == 4 * 128 + 32

    def test_gqa_shrinks_kv_projections_only(self):
        full = toy_model()
        gqa = toy_model(n_kv_heads=1)
        # K and V projections halve: 2 * n_tokens * (2*8*4) = 128 fewer
        assert attention_flops(full, 1, 1) - attention_flops(gqa, 1, 1) == 128

    def test_doubling_tokens_with_matching_kv(self):
        m = toy_model()
        d = m.hidden_dim
        kv = m.kv_dim

        def parts(n):
            total = attention_flops(m, n, n)
            proj = 2 * n * (2 * d * d + 2 * d * kv)
            return proj, total - proj

        proj1, sv1 = parts(3)
        proj2, sv2 = parts(6)
        assert proj2 == 2 * proj1
        assert sv2 == 4 * sv1

    def test_exact_integer(self):
        assert isinstance(attention_flops(toy_model(), 10 ** 6, 10 ** 6), int)


class TestExpertFlops:
    def test_hand_counted_toy_value(self):
        # top_k=1, 2 tokens, Dim 8, Dim_exp 16, 4 experts:
        # gate/up/down each [2,8]x[8,16]-sized = 512 FLOPs -> 1536,
        # router [2,8]x[8,4] = 128
        assert expert_flops(toy_model(), 2) == 1536 + 128

    def test_expert_count_changes_only_router_term(self):
        a = expert_flops(toy_model(n_experts=4), 7)
        b = expert_flops(toy_model(n_experts=8), 7)
        assert b - a == 2 * 7 * 8 * 4  # router delta only

    def test_shared_expert_adds_one_mlp(self):
        a = expert_flops(toy_model(), 5)
        b = expert_flops(toy_model(n_shared_experts=1), 5)
        assert b - a == 5 * 3 * 2 * 8 * 16

    def test_rejects_zero_tokens(self):
        with pytest.raises(SpecError):
            expert_flops(toy_model(), 0)


class TestMemoryFootprint:
    def test_zero_output_len_kv_covers_input_only(self):
        m = toy_model()
        mem = memory_footprint(m, InferenceScenario(batch=2, input_len=10, output_len=0))
        assert mem.kv_bytes == 2 * 1 * 2 * 10 * 8 * 2

    def test_batch_scales_kv_and_act_only(self):
        m = toy_model()
        one = memory_footprint(m, InferenceScenario(batch=1, input_len=10, output_len=4))
        two = memory_footprint(m, InferenceScenario(batch=2, input_len=10, output_len=4))
        assert two.kv_bytes == 2 * one.kv_bytes
        assert two.activation_bytes == 2 * one.activation_bytes
        assert two.attn_weight_bytes == one.attn_weight_bytes
        assert two.expert_weight_bytes == one.expert_weight_bytes

    def test_mixtral_expert_weights_dominate(self):
        m = load_preset("mixtral-8x7b")
        mem = memory_footprint(m, InferenceScenario(batch=1, input_len=128, output_len=0))
        share = mem.expert_weight_bytes / (mem.expert_weight_bytes + mem.attn_weight_bytes)
        assert share > 0.85

    def test_act_factor_scales_activations(self):
        m = toy_model()
        sc = InferenceScenario(batch=1, input_len=10, output_len=0)
        assert (
            memory_footprint(m, sc, act_factor=8).activation_bytes
            == 2 * memory_footprint(m, sc, act_factor=4).activation_bytes
        )


class TestMonotonicity:
    @pytest.mark.parametrize("field,grow", [
        ("n_layers", 2), ("hidden_dim", 16), ("expert_inter_dim", 32), ("n_experts", 8),
    ])
    def test_memory_monotone(self, field, grow):
        kwargs = {}
        if field == "hidden_dim":
            kwargs = {"hidden_dim": grow, "head_dim": grow // 2}
        else:
            kwargs = {field: grow}
        small = toy_model()
        big = toy_model(**kwargs)
        sc = InferenceScenario(batch=2, input_len=16, output_len=8)
        ms, mb = memory_footprint(small, sc), memory_footprint(big, sc)
        for attr in ("kv_bytes", "attn_weight_bytes", "expert_weight_bytes", "activation_bytes"):
            assert getattr(mb, attr) >= getattr(ms, attr)

    def test_flops_monotone_in_tokens_and_kv(self):
        m = toy_model()
        assert attention_flops(m, 4, 8) >= attention_flops(m, 4, 4) >= attention_flops(m, 2, 4)
        assert expert_flops(m, 9) >= expert_flops(m, 3)

    def test_calculators_pure(self):
        m = toy_model()
        assert attention_flops(m, 5, 7) == attention_flops(m, 5, 7)
        sc = InferenceScenario(batch=3, input_len=11, output_len=2)
        assert memory_footprint(m, sc) == memory_footprint(m, sc)


PRESET_FIELDS = {
    "mixtral-8x7b": dict(n_layers=32, n_q_heads=32, hidden_dim=4096,
                         n_experts=8, expert_inter_dim=14336),
    "qwen1.5-moe-a2.7b": dict(n_layers=24, n_q_heads=16, hidden_dim=2048,
                              n_experts=60, expert_inter_dim=1408),
    "qwen2-57b-a14b": dict(n_layers=28, n_q_heads=28, hidden_dim=3584,
                           n_experts=64, expert_inter_dim=2560),
}


@pytest.mark.parametrize("name", sorted(PRESET_FIELDS))
def test_preset_configurations(name):
    spec = load_preset(name)
    for field, expected in PRESET_FIELDS[name].items():
        assert getattr(spec, field) == expected, field
    assert spec.dtype_bytes == 2
    assert spec.n_q_heads * spec.head_dim == spec.hidden_dim
