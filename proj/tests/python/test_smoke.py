"""Python smoke tests for the extension module."""

import math

import pytest

try:
    from unlab import _unlab as U
except ImportError:
    import _unlab as U


def test_metrics_match_known_values():
    assert U.rouge_l_recall([1, 2, 3], [1, 2, 3]) == 1.0
    assert U.rouge_l_recall([0, 1, 2, 3], [2, 3, 1, 0]) == 0.5
    assert U.token_f1([1, 2, 3], [1, 2, 4]) == pytest.approx(2.0 / 3.0)
    assert U.attack_success_rate(0.4, 0.5) == pytest.approx(0.25)
    assert U.attack_success_rate(0.0, 0.3) is None


def test_world_generation_counts_and_determinism():
    cfg = U.WorldConfig()
    cfg.n_subjects = 4
    cfg.vocab_size = 512
    cfg.seed = 7
    world = U.generate_world(cfg)
    assert world.n_subjects == 4
    assert world.fact_count == 36
    samples = U.build_samples(world)
    assert len(samples) == 6 * world.fact_count

    voted = U.select_personalized(world, 3, 7)
    assert set(voted) == set(range(4))
    assert voted == U.select_personalized(world, 3, 7)


def test_model_round_trip_and_objectives(tmp_path):
    mc = U.ModelConfig()
    mc.vocab = 64
    mc.width = 32
    mc.depth = 1
    mc.ff_width = 32
    mc.context = 16
    model = U.init_model(mc, 42)
    assert model.param_count > 0

    q, a = [3, 4], [5, 6]
    val = U.nll(model, q, a)
    assert val > 0.0
    assert U.sequence_logprob(model, q, a) == pytest.approx(-2.0 * val)
    assert U.greedy_decode(model, q, 8) == U.greedy_decode(model, q, 8)

    path = str(tmp_path / "ckpt.bin")
    U.save_checkpoint(model, path)
    loaded = U.load_checkpoint(path)
    assert loaded.content_hash == model.content_hash

    model.take_reference_snapshot()
    forget = [(q, a), ([7, 8], [9])]
    assert U.loss_ga(model, forget) > 0.0
    assert U.loss_npo(model, forget, 0.5) == pytest.approx((2.0 / 0.5) * math.log(2.0))
    paired = [(0, forget, [([1, 2], [10])])]
    assert U.boundary_loss(model, paired, 1.5) >= 0.0


def test_small_pipeline_end_to_end(tmp_path):
    cfg = U.RunConfig()
    cfg.world.n_subjects = 4
    cfg.world.vocab_size = 512
    cfg.master_seed = 7
    cfg.out_dir = str(tmp_path / "run")
    result = U.pipeline(cfg)
    assert result["complete"]
    assert result["stages"]["pretrain"] == "ok"
    assert (tmp_path / "run" / "manifest.json").exists()
    assert (tmp_path / "run" / "eval_after.json").exists()
    assert (tmp_path / "run" / "plots" / "asr_heatmap.svg").exists()


def test_prompt_pools_exposed():
    rp = U.default_random_prefix_pool()
    jb = U.default_jailbreak_pool()
    assert len(rp) == 5 and len(jb) == 5
    assert rp[0] == "The is a piece of news. "
