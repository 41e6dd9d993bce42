import csv
import struct

import numpy as np
import pytest
import torch

from hpmr import kspace, losses, training
from hpmr.data import phantom_corpus
from hpmr.errors import CheckpointError, ConfigError, TrainingError
from hpmr.network import DiscriminatorConfig, GeneratorConfig


def tiny_config(**kw):
    """32x32 images and narrow networks so a step takes milliseconds."""
    cfg = training.TrainConfig(
        generator=GeneratorConfig(depth=2, base_widths=[8, 16], input_size=32),
        discriminator=DiscriminatorConfig(first_width=8, widths=[8, 8, 8, 8], input_size=32),
        batch_size=4, epochs=2,
    )
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg.validate()


def corpus(n=8, size=32, first=0):
    return phantom_corpus(range(first, first + n), size)


def jitter(module, scale=0.05, seed=0):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))


def test_first_step_with_identity_generator():
    cfg = tiny_config()
    cfg.generator.use_spatial_attention = cfg.generator.use_channel_attention = False
    state = training.init_state(cfg, dtype=torch.float64)
    x = corpus(2)
    m = kspace.make_mask(32, 32, cfg.mask_rate)
    lr = kspace.degrade(x, m)
    ks_lr = kspace.apply_mask(kspace.fft2(x), m)
    out = training.reconstruct(state.generator, lr)
    assert np.array_equal(out, lr)
    b = training.train_step(state, x)
    assert b.img == pytest.approx(np.mean(np.abs(x - lr)), rel=1e-12)
    ks_re = kspace.apply_mask(kspace.fft2(lr), m)
    assert b.fre == pytest.approx(np.mean(np.abs(ks_lr - ks_re)), rel=1e-12)
    assert b.img > 0 and b.fre > 0
    assert b.total == pytest.approx(b.adv_g + b.fre + 10 * b.img, rel=1e-12)


def test_two_cycles_match_hand_chaining():
    cfg = tiny_config()
    state = training.init_state(cfg, dtype=torch.float64)
    g = state.generator
    jitter(g)
    x = torch.from_numpy(corpus(2))[:, None]
    m = kspace.make_mask(32, 32, 0.5)
    lr, ks_lr = kspace.degrade_with_kspace(x, m)
    with torch.no_grad():
        hr1 = g(lr)
        ks1 = kspace.apply_mask(kspace.fft2(hr1), m)
        hr2 = g(kspace.ifft2(ks1))
        ks2 = kspace.apply_mask(kspace.fft2(hr2), m)
        fre = (losses.mae(ks_lr, ks1) + losses.mae(ks_lr, ks2)) / 2
        img = (losses.mae(x, hr1) + losses.mae(x, hr2)) / 2
        got_hr, got_fre, got_img = training.generator_cycles(g, lr, ks_lr, x, m, cycles=2)
        one_hr, one_fre, _ = training.generator_cycles(g, lr, ks_lr, x, m, cycles=1)
    assert torch.allclose(got_hr, hr2, atol=1e-6)
    assert abs(float(got_fre) - float(fre)) <= 1e-6
    assert abs(float(got_img) - float(img)) <= 1e-6
    assert torch.equal(one_hr, hr1)
    assert not torch.allclose(hr1, hr2)


def _run(cfg, data, steps):
    state = training.init_state(cfg)
    out = []
    for s in range(steps):
        idx = training.batch_indices(len(data), cfg.batch_size, cfg.seed, s)
        out.append(training.train_step(state, data[idx]))
    return out, state


def test_same_seed_is_bit_identical():
    data = corpus(8)
    a, _ = _run(tiny_config(seed=3), data, 5)
    b, _ = _run(tiny_config(seed=3), data, 5)
    assert [x.as_row() for x in a] == [x.as_row() for x in b]
    c, _ = _run(tiny_config(seed=4), data, 5)
    assert [x.as_row() for x in a] != [x.as_row() for x in c]


def test_batch_order_is_a_fresh_permutation_each_epoch():
    first = np.concatenate([training.batch_indices(10, 4, 0, s) for s in range(3)])
    second = np.concatenate([training.batch_indices(10, 4, 0, s) for s in range(3, 6)])
    assert sorted(first) == sorted(second) == list(range(10))
    assert list(first) != list(second)


def test_fit_step_count_and_log(tmp_path):
    cfg = tiny_config(batch_size=8, epochs=2)
    state = training.fit(corpus(16), cfg, out_dir=tmp_path)
    assert state.step == 4
    rows = list(csv.reader(open(tmp_path / "train_log.csv")))
    assert rows[0] == ["step", "adv_g", "adv_d", "fre", "img", "total"]
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2, 3]
    assert (tmp_path / "final.ckpt").exists()


def test_fit_empty_dataset():
    with pytest.raises(ConfigError):
        training.fit(np.zeros((0, 32, 32)), tiny_config())


def test_resume_matches_uninterrupted(tmp_path):
    data = corpus(8)
    cfg = tiny_config(epochs=3)          # 6 steps
    full = training.fit(data, cfg)
    part = training.fit(data, cfg, out_dir=tmp_path / "run", max_steps=3)
    resumed = training.load_checkpoint(tmp_path / "run" / "final.ckpt")
    assert resumed.step == 3
    resumed = training.fit(data, state=resumed, out_dir=tmp_path / "run")
    got = [b.as_row() for b in part.history + resumed.history]
    assert got == [b.as_row() for b in full.history]
    rows = list(csv.reader(open(tmp_path / "run" / "train_log.csv")))
    assert [int(r[0]) for r in rows[1:]] == list(range(6))
    for (name, p), q in zip(full.generator.named_parameters(), resumed.generator.parameters()):
        assert torch.equal(p, q), name


def test_ablation_a_logs_zero_cyclic_terms(tmp_path):
    cfg = training.make_ablation_config(tiny_config(), "a")
    training.fit(corpus(8), cfg, out_dir=tmp_path, max_steps=2)
    rows = list(csv.DictReader(open(tmp_path / "train_log.csv")))
    assert len(rows) == 2
    for r in rows:
        assert float(r["fre"]) == 0.0 and float(r["img"]) == 0.0
        assert float(r["total"]) == float(r["adv_g"])


@pytest.mark.parametrize("variant, pattern", [
    ("a", "-++"), ("b", "+-+"), ("c", "++-"), ("full", "+++"),
])
def test_ablation_pattern(variant, pattern):
    cfg = training.make_ablation_config(tiny_config(), variant)
    flags = (cfg.use_cyclic, cfg.generator.use_spatial_attention, cfg.generator.use_channel_attention)
    assert "".join("+" if f else "-" for f in flags) == pattern
    assert cfg.ablation == variant


def test_ablation_full_only_changes_tag():
    base = tiny_config()
    assert training.make_ablation_config(base, "full").to_dict() == base.to_dict()


def test_unknown_ablation():
    with pytest.raises(ConfigError):
        training.make_ablation_config(tiny_config(), "d")


def test_ablated_networks_drop_parameters():
    full = training.init_state(tiny_config())
    b = training.init_state(training.make_ablation_config(tiny_config(), "b"))
    names = [n for n, _ in b.generator.named_parameters()]
    assert not any("spatial" in n for n in names)
    assert any("channel" in n for n in names)
    assert sum(p.numel() for p in b.generator.parameters()) < \
        sum(p.numel() for p in full.generator.parameters())


def test_cyclic_terms_do_not_reach_discriminator():
    state = training.init_state(tiny_config(), dtype=torch.float64)
    jitter(state.generator)
    x = torch.from_numpy(corpus(2))[:, None]
    m = state.mask
    lr, ks_lr = kspace.degrade_with_kspace(x, m)
    _, fre, img = training.generator_cycles(state.generator, lr, ks_lr, x, m)
    (fre + 10 * img).backward()
    assert all(p.grad is None for p in state.discriminator.parameters())
    assert any(p.grad is not None for p in state.generator.parameters())


def test_generator_step_leaves_discriminator_untouched():
    state = training.init_state(tiny_config())
    training.train_step(state, corpus(4))
    before = [p.detach().clone() for p in state.discriminator.parameters()]
    # only the discriminator's own step moves it: replay G's loss and check no D grads
    assert all(p.requires_grad for p in state.discriminator.parameters())
    state.opt_d.zero_grad(set_to_none=True)
    hr_re = state.generator(torch.from_numpy(corpus(2)).float()[:, None])
    for p in state.discriminator.parameters():
        p.requires_grad_(False)
    losses.adv_loss_g(state.discriminator(hr_re)[0]).backward()
    for p in state.discriminator.parameters():
        p.requires_grad_(True)
    assert all(p.grad is None for p in state.discriminator.parameters())
    assert all(torch.equal(a, b) for a, b in zip(before, state.discriminator.parameters()))


def test_non_finite_loss_raises_with_batch_index():
    state = training.init_state(tiny_config())
    with torch.no_grad():
        state.generator.unets[1].out_conv.bias.fill_(float("nan"))
    with pytest.raises(TrainingError, match="batch indices"):
        training.fit(corpus(8), state=state)


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    state = training.init_state(tiny_config())
    training.train_step(state, corpus(4))
    training.save_checkpoint(state, tmp_path / "a.ckpt")
    loaded = training.load_checkpoint(tmp_path / "a.ckpt")
    training.save_checkpoint(loaded, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert loaded.step == 1
    assert loaded.cfg.to_dict() == state.cfg.to_dict()


def test_fresh_checkpoint_reproduces_first_step(tmp_path):
    state = training.init_state(tiny_config())
    training.save_checkpoint(state, tmp_path / "init.ckpt")
    loaded = training.load_checkpoint(tmp_path / "init.ckpt")
    x = corpus(4)
    assert training.train_step(state, x).as_row() == training.train_step(loaded, x).as_row()


def test_truncated_checkpoint(tmp_path):
    state = training.init_state(tiny_config())
    training.save_checkpoint(state, tmp_path / "a.ckpt")
    blob = (tmp_path / "a.ckpt").read_bytes()
    for cut in (4, 100, len(blob) // 2, len(blob) - 1):
        (tmp_path / "t.ckpt").write_bytes(blob[:cut])
        with pytest.raises(CheckpointError):
            training.load_checkpoint(tmp_path / "t.ckpt")
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    (tmp_path / "f.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="checksum"):
        training.load_checkpoint(tmp_path / "f.ckpt")


def test_checkpoint_version_mismatch(tmp_path):
    state = training.init_state(tiny_config())
    training.save_checkpoint(state, tmp_path / "a.ckpt")
    blob = bytearray((tmp_path / "a.ckpt").read_bytes())
    n = len(training.CHECKPOINT_MAGIC)
    blob[n:n + 2] = struct.pack("<H", 2)
    (tmp_path / "v.ckpt").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        training.load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"NOTACKPT" + bytes(blob[n:]))
    with pytest.raises(CheckpointError):
        training.load_checkpoint(tmp_path / "m.ckpt")


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        training.load_checkpoint(tmp_path / "nope.ckpt")


def test_config_round_trip():
    cfg = training.make_ablation_config(tiny_config(seed=7, mask_rate=0.25), "c")
    text = training.dump_config(cfg)
    assert training.parse_config(text).to_dict() == cfg.to_dict()


def test_config_parse():
    cfg = training.parse_config("""
        # desk run
        epochs = 3
        learning_rate = 2e-4
        ablation = b
        generator.base_widths = 16, 32
        discriminator.use_attention = false
    """)
    assert cfg.epochs == 3 and cfg.learning_rate == 2e-4
    assert cfg.generator.base_widths == [16, 32]
    assert cfg.generator.use_spatial_attention is False      # from the ablation
    assert cfg.discriminator.use_attention is False


@pytest.mark.parametrize("text", ["epochs 3", "nonsense = 1", "generator.nope = 1",
                                  "optimizer.lr = 1", "epochs = many", "ablation = z",
                                  "use_cyclic = maybe", "batch_size = 0"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        training.parse_config(text)


def test_default_config_values():
    cfg = training.TrainConfig()
    assert (cfg.learning_rate, cfg.epochs, cfg.batch_size, cfg.cycles_per_step) == (1e-4, 50, 8, 1)
    assert (cfg.alpha, cfg.beta) == (1.0, 10.0)
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)
