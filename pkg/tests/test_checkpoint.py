import numpy as np
import pytest

from ecctlin.checkpoint import CheckpointError, CheckpointVersionError, load_checkpoint, save_checkpoint
from ecctlin.codes import Code, hamming74
from ecctlin.training import TrainConfig, train
from ecctlin.transformer import DecoderModel, ModelConfig

CODE = hamming74()


def trained(attention="standard", steps=5):
    model = DecoderModel(ModelConfig(7, 3, dim=8, heads=2, blocks=1, attention=attention, seed=3), CODE.pcm)
    cfg = TrainConfig(iterations=10, batch_size=8, seed=3)
    state = train(model, CODE, cfg, until=steps)
    return model, state, cfg


@pytest.mark.parametrize("attention", ["standard", "linear"])
def test_round_trip_forward_is_bit_exact(tmp_path, attention):
    model, state, cfg = trained(attention)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, state, cfg)
    loaded, lstate, lcfg = load_checkpoint(path)
    x = np.random.default_rng(0).normal(size=(16, 10)).astype(np.float32)
    assert np.array_equal(model(x).data, loaded(x).data)
    assert loaded.config == model.config and lcfg == cfg
    assert loaded.pcm == model.pcm
    assert lstate.step == state.step and lstate.lr == state.lr


def test_resave_is_byte_identical(tmp_path):
    model, state, cfg = trained()
    a, b = tmp_path / "a", tmp_path / "b"
    save_checkpoint(a, model, state, cfg)
    save_checkpoint(b, *load_checkpoint(a)[:2], cfg)
    assert a.read_bytes() == b.read_bytes()


def test_resume_from_file_matches_uninterrupted(tmp_path):
    whole, _, cfg = trained(steps=10)
    part, state, _ = trained(steps=4)
    save_checkpoint(tmp_path / "p", part, state, cfg)
    model, state, cfg2 = load_checkpoint(tmp_path / "p")
    train(model, CODE, cfg2, state)
    assert all(np.array_equal(whole.params[k].data, model.params[k].data) for k in whole.params)


def test_model_only(tmp_path):
    model, _, _ = trained()
    save_checkpoint(tmp_path / "m", model)
    _, state, cfg = load_checkpoint(tmp_path / "m")
    assert state is None and cfg is None


def test_version_tag(tmp_path):
    model, state, cfg = trained()
    path = tmp_path / "m"
    save_checkpoint(path, model, state, cfg)
    path.write_bytes(path.read_bytes().replace(b"ecctlin-v1", b"ecctlin-v9", 1))
    with pytest.raises(CheckpointVersionError, match="ecctlin-v9"):
        load_checkpoint(path)


def test_truncated(tmp_path):
    model, state, cfg = trained()
    path = tmp_path / "m"
    save_checkpoint(path, model, state, cfg)
    raw = path.read_bytes()
    for cut in (len(raw) // 3, len(raw) - 5):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_shape_mismatch(tmp_path):
    model, _, _ = trained()
    path = tmp_path / "m"
    save_checkpoint(path, model)
    # claim a larger model than the stored tensors
    path.write_bytes(path.read_bytes().replace(b"dim=8\n", b"dim=16\n", 1))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_code_mismatch_rejected(tmp_path):
    from ecctlin.bench import make_decoder

    model, _, _ = trained()
    save_checkpoint(tmp_path / "m", model)
    with pytest.raises(ValueError, match="different code"):
        make_decoder(str(tmp_path / "m"), Code.regular(26, 3, 6, seed=7))
