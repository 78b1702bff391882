import numpy as np
import pytest

from formhwr.errors import (
    CheckpointCorruptError,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigurationError,
)
from formhwr.formset import Batch
from formhwr.imaging import GrayImage
from formhwr.recognizer import (
    ArchConfig,
    forward,
    forward_batch,
    images_to_tensor,
    init_params,
    load_checkpoint,
    loss_and_grads,
    lr_at,
    save_checkpoint,
    type_onehot,
    valid_columns,
)
from formhwr.recognizer.train import TrainerConfig
from formhwr.rng import SeedStream
from formhwr.typedgen import Alphabet, ContentType

TOY_ALPHABET = Alphabet(("a", "b"))  # 3 classes including blank


def toy_arch(type_input=True, with_bn=True) -> ArchConfig:
    return ArchConfig(
        conv_layers=((2, with_bn),),
        pool_schedule=((2, 2),),
        pool_positions=(0,),
        recurrent_hidden=4,
        recurrent_layers=1,
        num_types=10,
        num_classes=3,
        type_input_enabled=type_input,
    )


def random_image(rng, w=32, h=32) -> GrayImage:
    data = (rng.random_array(h * w).reshape(h, w) * 255).astype(np.uint8)
    return GrayImage(data)


# ---------------------------------------------------------------------------
# Architecture arithmetic
# ---------------------------------------------------------------------------


def test_desk_default_shapes():
    arch = ArchConfig.desk_default()
    assert arch.vertical_factor == 4
    assert arch.horizontal_factor == 2
    assert arch.feature_height == 8
    assert arch.column_feature_dim == 16 * 8 + 10  # 138

    params = init_params(arch, seed=0)
    rng = SeedStream(1).rng()
    img = random_image(rng, w=128)
    logits = forward(params, arch, img, ContentType.DATE)
    assert (logits.T, logits.S) == (64, 70)


def test_paper_scale_shapes():
    arch = ArchConfig.paper_scale()
    assert arch.vertical_factor == 16
    assert arch.horizontal_factor == 4
    assert arch.feature_height == 2
    # 32x256 input -> 64 columns
    assert 256 // arch.horizontal_factor == 64


def test_arch_validations():
    with pytest.raises(ConfigurationError):
        ArchConfig(pool_schedule=((3, 2),))
    with pytest.raises(ConfigurationError):
        ArchConfig(
            conv_layers=((8, False),) * 4,
            pool_schedule=((2, 2), (2, 2), (2, 2)),
            pool_positions=(0, 1, 2),
        )  # three pools but no 2x1
    with pytest.raises(ConfigurationError):
        ArchConfig(pool_positions=(0, 5))


def test_arch_json_roundtrip():
    arch = ArchConfig.paper_scale()
    assert ArchConfig.from_json_dict(arch.to_json_dict()) == arch


# ---------------------------------------------------------------------------
# Type conditioning contracts
# ---------------------------------------------------------------------------


def test_type_ablation_identity():
    arch = toy_arch(type_input=False, with_bn=False)
    params = init_params(arch, 3)
    rng = SeedStream(4).rng()
    img = random_image(rng)
    a = forward(params, arch, img, ContentType.NAME)
    b = forward(params, arch, img, ContentType.PHONE_NUMBER)
    c = forward(params, arch, img, None)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.values, c.values)


def test_typed_arch_requires_type():
    arch = toy_arch(type_input=True, with_bn=False)
    params = init_params(arch, 3)
    rng = SeedStream(4).rng()
    with pytest.raises(ConfigurationError):
        forward(params, arch, random_image(rng), None)


def test_type_changes_output_when_enabled():
    arch = toy_arch(type_input=True, with_bn=False)
    params = init_params(arch, 3)
    rng = SeedStream(4).rng()
    img = random_image(rng)
    a = forward(params, arch, img, ContentType.NAME)
    b = forward(params, arch, img, ContentType.PHONE_NUMBER)
    assert not np.array_equal(a.values, b.values)


# ---------------------------------------------------------------------------
# End-to-end gradient check (finite differences on every trainable tensor)
# ---------------------------------------------------------------------------


def _toy_batch(rng) -> Batch:
    img = random_image(rng, w=32, h=32)
    return Batch(images=[img], widths=[20], labels=[[0, 1]], types=[ContentType.DATE])


def test_end_to_end_gradients_match_finite_differences():
    arch = toy_arch(type_input=True, with_bn=True)
    params = init_params(arch, 7)
    rng = SeedStream(8).rng()
    batch = _toy_batch(rng)

    _, grads, _ = loss_and_grads(params, arch, batch)
    step = 1e-5
    worst = 0.0
    for name in params.trainable_names():
        tensor = params[name]
        fd = np.zeros_like(tensor)
        flat = tensor.ravel()
        fd_flat = fd.ravel()
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + step
            plus, _, _ = loss_and_grads(params, arch, batch)
            flat[idx] = original - step
            minus, _, _ = loss_and_grads(params, arch, batch)
            flat[idx] = original
            fd_flat[idx] = (plus - minus) / (2 * step)
        scale = np.maximum(np.abs(fd), 1.0)
        err = float((np.abs(grads[name] - fd) / scale).max())
        worst = max(worst, err)
        assert err < 1e-4, f"gradient mismatch on {name}: {err}"
    assert worst < 1e-4


def test_padded_columns_have_zero_gradient():
    arch = toy_arch(type_input=True, with_bn=False)
    params = init_params(arch, 11)
    rng = SeedStream(12).rng()
    img = random_image(rng, w=64, h=32)  # 32 columns at factor 2
    batch = Batch(images=[img], widths=[20], labels=[[0]], types=[ContentType.TIME])

    images = images_to_tensor(batch.images)
    types = np.stack([type_onehot(t, arch.num_types) for t in batch.types])
    logits, cache = forward_batch(params, arch, images, types, train=True)
    t_cols = logits.shape[1]
    v = valid_columns(20, arch, t_cols)
    assert v == 10

    # Perturbing masked logit columns must not change the loss: their grad is
    # zero by construction in loss_and_grads.
    from formhwr.ctc import ctc_loss

    loss_full, grad = ctc_loss(logits[0, :v], batch.labels[0])
    dlogits = np.zeros_like(logits)
    dlogits[0, :v] = grad
    assert np.all(dlogits[0, v:] == 0)


def test_duplicated_sample_doubles_contribution():
    arch = toy_arch(type_input=True, with_bn=False)
    params = init_params(arch, 13)
    rng = SeedStream(14).rng()
    img = random_image(rng)
    single = Batch(images=[img], widths=[32], labels=[[1]], types=[ContentType.DATE])
    double = Batch(
        images=[img, img.copy()],
        widths=[32, 32],
        labels=[[1], [1]],
        types=[ContentType.DATE, ContentType.DATE],
    )
    loss1, grads1, _ = loss_and_grads(params, arch, single)
    loss2, grads2, _ = loss_and_grads(params, arch, double)
    assert np.isclose(loss1, loss2)
    for name in grads1:
        assert np.allclose(grads1[name], grads2[name])


def test_recurrent_direction_symmetry():
    """Mirroring the input and swapping direction weights (plus flipping the
    conv kernels horizontally) reverses the column order of pre-projection
    features, with the forward/backward halves exchanged."""
    arch = toy_arch(type_input=True, with_bn=False)
    params = init_params(arch, 21)
    rng = SeedStream(22).rng()
    img = random_image(rng, w=64, h=32)
    types = type_onehot(ContentType.DATE, arch.num_types)[None, :]

    _, cache = forward_batch(params, arch, images_to_tensor([img]), types)
    feats = cache["rnn_out"]

    swapped = params.copy()
    swapped.tensors["conv1_w"] = params["conv1_w"][:, :, :, ::-1].copy()
    for a, b in [("lstm1_fw_wx", "lstm1_bw_wx"), ("lstm1_fw_wh", "lstm1_bw_wh"), ("lstm1_fw_b", "lstm1_bw_b")]:
        swapped.tensors[a] = params[b].copy()
        swapped.tensors[b] = params[a].copy()

    mirrored = GrayImage(img.pixels[:, ::-1].copy())
    _, cache_m = forward_batch(swapped, arch, images_to_tensor([mirrored]), types)
    feats_m = cache_m["rnn_out"]

    hidden = arch.recurrent_hidden
    expected = feats[:, ::-1, :]
    expected = np.concatenate([expected[:, :, hidden:], expected[:, :, :hidden]], axis=2)
    assert np.allclose(feats_m, expected, atol=1e-10)


# ---------------------------------------------------------------------------
# Input validation
# ---------------------------------------------------------------------------


def test_forward_rejects_bad_width():
    arch = toy_arch(with_bn=False)
    params = init_params(arch, 1)
    img = GrayImage.blank(33, 32)  # width not divisible by factor 2
    with pytest.raises(ConfigurationError):
        forward(params, arch, img, ContentType.DATE)


def test_forward_rejects_bad_height():
    arch = toy_arch(with_bn=False)
    params = init_params(arch, 1)
    img = GrayImage.blank(32, 30)
    with pytest.raises(ConfigurationError):
        forward(params, arch, img, ContentType.DATE)


# ---------------------------------------------------------------------------
# LR schedule
# ---------------------------------------------------------------------------


def test_lr_schedule_matches_stated_arithmetic():
    cfg = TrainerConfig(learning_rate=0.001, lr_decay_factor=0.9, lr_decay_every=5000)
    assert lr_at(cfg, 0) == 0.001
    assert lr_at(cfg, 4999) == 0.001
    assert np.isclose(lr_at(cfg, 5000), 0.0009)
    assert np.isclose(lr_at(cfg, 10_000), 0.001 * 0.81)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    arch = toy_arch()
    params = init_params(arch, 99)
    path = tmp_path / "model.json"
    save_checkpoint(params, arch, TOY_ALPHABET, path)
    loaded_params, loaded_arch, loaded_alphabet = load_checkpoint(path)
    assert loaded_arch == arch
    assert loaded_alphabet == TOY_ALPHABET
    for name, tensor in params.tensors.items():
        assert np.array_equal(loaded_params[name], tensor)


def test_checkpoint_truncated_file_is_corrupt(tmp_path):
    arch = toy_arch()
    params = init_params(arch, 99)
    path = tmp_path / "model.json"
    save_checkpoint(params, arch, TOY_ALPHABET, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    import json

    arch = toy_arch()
    params = init_params(arch, 99)
    path = tmp_path / "model.json"
    save_checkpoint(params, arch, TOY_ALPHABET, path)
    doc = json.loads(path.read_text())
    doc["version"] = 999
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch(tmp_path):
    import json

    arch = toy_arch()
    params = init_params(arch, 99)
    path = tmp_path / "model.json"
    save_checkpoint(params, arch, TOY_ALPHABET, path)
    doc = json.loads(path.read_text())
    doc["tensors"]["proj_b"]["values"].append(0.0)
    doc["tensors"]["proj_b"]["shape"] = [4]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(path)


def test_typed_inference_on_disabled_checkpoint_errors(tmp_path):
    from formhwr.recognizer import forced_type_histogram

    arch = toy_arch(type_input=False)
    params = init_params(arch, 5)
    with pytest.raises(ConfigurationError):
        forced_type_histogram(params, arch, [], tmp_path, ContentType.NAME, TOY_ALPHABET)


def test_forced_histogram_empty_manifest(tmp_path):
    from formhwr.recognizer import forced_type_histogram

    arch = toy_arch(type_input=True)
    params = init_params(arch, 5)
    out = forced_type_histogram(params, arch, [], tmp_path, ContentType.NAME, TOY_ALPHABET)
    assert out == {}
