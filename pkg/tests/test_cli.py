import json
import os
from pathlib import Path

import pytest
from click.testing import CliRunner

from formhwr.cli import main
from formhwr.formset import FieldSpec, FormTemplate, Square, emit_dataset, GenConfig, read_manifest
from formhwr.imaging import AffineTransform2D, GrayImage, Rect, apply_affine
from formhwr.recognizer import ArchConfig, init_params, save_checkpoint
from formhwr.typedgen import Alphabet, ContentType, TypeWeights

GOLDEN_DIR = Path(__file__).parent / "data"


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def template_file(tmp_path):
    template = FormTemplate(
        form_id="cli-form",
        page=(640, 480),
        squares=(Square(30, 30, 20), Square(610, 30, 20), Square(30, 450, 20), Square(610, 450, 20)),
        fields=(
            FieldSpec("name_1", ContentType.NAME, Rect(60, 60, 280, 40)),
            FieldSpec("date_1", ContentType.DATE, Rect(360, 60, 180, 40)),
            FieldSpec("free_1", ContentType.FREE_TEXT, Rect(60, 140, 500, 60)),
        ),
    )
    path = tmp_path / "form.json"
    template.save(path)
    return path


def _fixture_checkpoint(path: Path, typed: bool = True) -> None:
    """Deterministically initialized (untrained) desk model."""
    alphabet = Alphabet.default()
    arch = ArchConfig.desk_default(num_classes=alphabet.num_classes, type_input_enabled=typed)
    params = init_params(arch, seed=424242)
    save_checkpoint(params, arch, alphabet, path)


def _fixture_dataset(out_dir: Path, template_path: Path, count: int = 10) -> Path:
    template = FormTemplate.load(template_path)
    cfg = GenConfig(p_affine=0, p_elastic=0, p_morph=0, p_composite=0)
    return emit_dataset(
        count, template, TypeWeights.default(), cfg, root_seed=99, out_dir=out_dir
    )


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def test_generate_writes_dataset_and_summary(runner, template_file, tmp_path):
    out = tmp_path / "ds"
    result = runner.invoke(
        main,
        ["generate", "--count", "12", "--template", str(template_file),
         "--seed", "7", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert (out / "manifest.jsonl").exists()
    assert len(read_manifest(out / "manifest.jsonl")) == 12
    assert "FreeText" in result.output


def test_generate_rerun_is_byte_identical(runner, template_file, tmp_path):
    args = ["generate", "--count", "6", "--template", str(template_file), "--seed", "3"]
    r1 = runner.invoke(main, args + ["--out", str(tmp_path / "a")])
    r2 = runner.invoke(main, args + ["--out", str(tmp_path / "b")])
    assert r1.exit_code == 0 and r2.exit_code == 0
    m_a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
    m_b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
    assert m_a == m_b


def test_generate_missing_template_exits_2(runner, tmp_path):
    result = runner.invoke(
        main,
        ["generate", "--count", "1", "--template", str(tmp_path / "nope.json"),
         "--out", str(tmp_path / "o")],
    )
    assert result.exit_code == 2


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_train_writes_checkpoint_and_log(runner, template_file, tmp_path):
    manifest = _fixture_dataset(tmp_path / "ds", template_file, count=12)
    ckpt = tmp_path / "model.json"
    log = tmp_path / "train.jsonl"
    result = runner.invoke(
        main,
        ["train", "--manifest", str(manifest), "--out", str(ckpt),
         "--iterations", "2", "--batch-size", "4", "--min-width", "64",
         "--seed", "5", "--log", str(log)],
    )
    assert result.exit_code == 0, result.output
    assert ckpt.exists()
    entries = [json.loads(line) for line in log.read_text().splitlines()]
    assert [e["iteration"] for e in entries] == [0, 1]
    assert all("loss" in e and "lr" in e for e in entries)


def test_train_missing_manifest_exits_2(runner, tmp_path):
    result = runner.invoke(
        main, ["train", "--manifest", str(tmp_path / "no.jsonl"), "--out", str(tmp_path / "m.json")]
    )
    assert result.exit_code == 2


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def test_eval_matches_golden_report(runner, template_file, tmp_path):
    """Byte-for-byte comparison against a reviewed golden report.

    Regenerate the goldens (after reviewing the diff) with:
    FORMHWR_REGEN_GOLDEN=1 pytest tests/test_cli.py -k golden
    """
    manifest = _fixture_dataset(tmp_path / "ds", template_file, count=10)
    ckpt = tmp_path / "model.json"
    _fixture_checkpoint(ckpt)
    prefix = tmp_path / "report"
    result = runner.invoke(
        main,
        ["eval", "--checkpoint", str(ckpt), "--manifest", str(manifest),
         "--report-out", str(prefix)],
    )
    assert result.exit_code == 0, result.output
    got_json = (tmp_path / "report.json").read_bytes()
    got_text = (tmp_path / "report.txt").read_bytes()
    golden_json = GOLDEN_DIR / "golden_report.json"
    golden_text = GOLDEN_DIR / "golden_report.txt"
    if os.environ.get("FORMHWR_REGEN_GOLDEN"):
        GOLDEN_DIR.mkdir(exist_ok=True)
        golden_json.write_bytes(got_json)
        golden_text.write_bytes(got_text)
    assert got_json == golden_json.read_bytes()
    assert got_text == golden_text.read_bytes()


def test_eval_empty_manifest_is_ok(runner, tmp_path):
    ckpt = tmp_path / "model.json"
    _fixture_checkpoint(ckpt)
    manifest = tmp_path / "empty.jsonl"
    manifest.write_text("")
    result = runner.invoke(
        main,
        ["eval", "--checkpoint", str(ckpt), "--manifest", str(manifest),
         "--report-out", str(tmp_path / "rep")],
    )
    assert result.exit_code == 0, result.output
    data = json.loads((tmp_path / "rep.json").read_text())
    assert data["overall"]["count"] == 0
    assert data["overall"]["cer"] is None


def test_eval_corrupt_checkpoint_exits_2(runner, template_file, tmp_path):
    manifest = _fixture_dataset(tmp_path / "ds", template_file, count=2)
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    result = runner.invoke(
        main,
        ["eval", "--checkpoint", str(bad), "--manifest", str(manifest),
         "--report-out", str(tmp_path / "rep")],
    )
    assert result.exit_code == 2


# ---------------------------------------------------------------------------
# align
# ---------------------------------------------------------------------------


def _render_scan(template_path: Path, tx: float, ty: float) -> GrayImage:
    from formhwr.formset import render_template_page

    template = FormTemplate.load(template_path)
    page = render_template_page(template)
    return apply_affine(page, AffineTransform2D.translation(tx, ty))


def test_align_identity_scan(runner, template_file, tmp_path):
    from formhwr.formset import render_template_page

    template = FormTemplate.load(template_file)
    scan = render_template_page(template)
    scan_path = tmp_path / "scan.png"
    scan.save_png(scan_path)
    boxes = [{"x": 60, "y": 60, "w": 280, "h": 40}]
    boxes_path = tmp_path / "boxes.json"
    boxes_path.write_text(json.dumps(boxes))
    out_path = tmp_path / "typed.json"
    result = runner.invoke(
        main,
        ["align", "--template", str(template_file), "--scan", str(scan_path),
         "--boxes", str(boxes_path), "--out", str(out_path)],
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out_path.read_text())
    assert doc["residual_px"] < 0.5
    assert doc["boxes"][0]["type"] == "Name"
    assert doc["boxes"][0]["overlap"] == pytest.approx(1.0)


def test_align_translated_scan_and_crops(runner, template_file, tmp_path):
    scan = _render_scan(template_file, 25, 15)
    scan_path = tmp_path / "scan.png"
    scan.save_png(scan_path)
    boxes = [
        {"x": 85, "y": 75, "w": 280, "h": 40},   # name_1 shifted by (25, 15)
        {"x": 385, "y": 75, "w": 180, "h": 40},  # date_1 shifted
    ]
    boxes_path = tmp_path / "boxes.json"
    boxes_path.write_text(json.dumps(boxes))
    out_path = tmp_path / "typed.json"
    crops = tmp_path / "crops"
    result = runner.invoke(
        main,
        ["align", "--template", str(template_file), "--scan", str(scan_path),
         "--boxes", str(boxes_path), "--out", str(out_path), "--crops-dir", str(crops)],
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out_path.read_text())
    assert doc["residual_px"] < 0.5
    assert abs(doc["transform"]["tx"] - 25) < 0.5
    assert abs(doc["transform"]["ty"] - 15) < 0.5
    types = [b["type"] for b in doc["boxes"]]
    assert types == ["Name", "Date"]
    assert all(b["overlap"] > 0.95 for b in doc["boxes"])
    assert (crops / "box_000.png").exists()


def test_align_mismatched_form_exits_4(runner, template_file, tmp_path):
    other = FormTemplate(
        form_id="other",
        page=(640, 480),
        squares=(Square(100, 200, 20), Square(500, 100, 20), Square(320, 400, 20)),
        fields=(FieldSpec("x", ContentType.TIME, Rect(10, 10, 50, 20)),),
    )
    from formhwr.formset import render_template_page

    scan = render_template_page(other)
    scan_path = tmp_path / "scan.png"
    scan.save_png(scan_path)
    boxes_path = tmp_path / "boxes.json"
    boxes_path.write_text("[]")
    result = runner.invoke(
        main,
        ["align", "--template", str(template_file), "--scan", str(scan_path),
         "--boxes", str(boxes_path), "--out", str(tmp_path / "o.json")],
    )
    assert result.exit_code == 4


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def test_diagnose_writes_histogram_and_plot(runner, template_file, tmp_path):
    manifest = _fixture_dataset(tmp_path / "ds", template_file, count=4)
    ckpt = tmp_path / "model.json"
    _fixture_checkpoint(ckpt, typed=True)
    out = tmp_path / "hist.json"
    plot = tmp_path / "hist.svg"
    result = runner.invoke(
        main,
        ["diagnose", "--checkpoint", str(ckpt), "--manifest", str(manifest),
         "--forced-type", "PhoneNumber", "--out", str(out), "--plot", str(plot)],
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["forced_type"] == "PhoneNumber"
    assert "digit_fraction" in doc
    assert plot.read_text().startswith("<svg")


def test_diagnose_type_disabled_checkpoint_exits_2(runner, template_file, tmp_path):
    manifest = _fixture_dataset(tmp_path / "ds", template_file, count=2)
    ckpt = tmp_path / "untyped.json"
    _fixture_checkpoint(ckpt, typed=False)
    result = runner.invoke(
        main,
        ["diagnose", "--checkpoint", str(ckpt), "--manifest", str(manifest),
         "--forced-type", "Name", "--out", str(tmp_path / "h.json")],
    )
    assert result.exit_code == 2


def test_diagnose_empty_manifest_gives_empty_histogram(runner, tmp_path):
    ckpt = tmp_path / "model.json"
    _fixture_checkpoint(ckpt, typed=True)
    manifest = tmp_path / "empty.jsonl"
    manifest.write_text("")
    out = tmp_path / "hist.json"
    result = runner.invoke(
        main,
        ["diagnose", "--checkpoint", str(ckpt), "--manifest", str(manifest),
         "--forced-type", "Name", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(out.read_text())["histogram"] == {}


def test_all_commands_have_help(runner):
    for cmd in ["generate", "train", "eval", "align", "diagnose"]:
        result = runner.invoke(main, [cmd, "--help"])
        assert result.exit_code == 0
