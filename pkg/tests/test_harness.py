import logging

import numpy as np
import pytest
from PIL import Image

from miea.channel import NOISELESS
from miea.defense import DefenseMode
from miea.harness import (
    CSV_HEADER,
    ConfigError,
    RunConfig,
    dataset_for,
    emit_image_grid,
    emit_table_csv,
    load_config,
    load_dataset,
    parse_config_text,
    read_table_csv,
    run_ablation,
    run_grid,
    tile_origin,
)


def tiny(tmp_path, **kw):
    base = dict(
        corpus_size=60, image_size=16, splits=(0.5, 0.3, 0.2), eval_count=6,
        codec_epochs=1, codec_batch_size=8, wb_iterations=5, inv_epochs=1, inv_batch_size=4,
        out_dir=str(tmp_path), seed=3,
    )
    base.update(kw)
    return RunConfig(**base)


# -- configuration -----------------------------------------------------------


def test_config_text_parsing():
    text = "# comment\nseed = 5  # trailing\n\nmain_snrs_db = 0, 10\ndefense = permute\n"
    assert parse_config_text(text) == {"seed": "5", "main_snrs_db": "0, 10", "defense": "permute"}
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("no equals sign")


def test_config_file_round_trip(tmp_path):
    cfg = RunConfig(seed=9, eaves_snrs_db=[0.0, NOISELESS], defense=DefenseMode.FULL, splits=(0.5, 0.25, 0.25))
    path = tmp_path / "run.conf"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


def test_config_defaults_are_the_desk_grid():
    cfg = RunConfig()
    assert cfg.main_snrs_db == [0.0, 10.0, 20.0] and cfg.eaves_snrs_db == [0.0, 10.0, 20.0]
    assert cfg.image_size == 64 and cfg.corpus_size >= 1000 and cfg.eval_count == 64
    assert cfg.defense is DefenseMode.OFF


@pytest.mark.parametrize(
    "values",
    [{"nonsense": "1"}, {"seed": "abc"}, {"defense": "sometimes"}, {"main_snrs_db": "0, x"}],
)
def test_config_bad_values(values):
    with pytest.raises(ConfigError):
        RunConfig().updated(values)


@pytest.mark.parametrize(
    "kw",
    [
        {"main_snrs_db": []},
        {"eaves_snrs_db": [0.0, 0.0]},
        {"main_snrs_db": [NOISELESS]},
        {"splits": (0.6, 0.3, 0.3)},
        {"splits": (0.6, 0.4, 0.0)},
        {"eval_count": 0},
        {"image_size": 30},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw).validate()


# -- dataset ingestion -------------------------------------------------------


@pytest.fixture
def image_dir(tmp_path, rng):
    root = tmp_path / "imgs"
    (root / "sub").mkdir(parents=True)
    for i in range(100):
        w, h = (40, 30) if i % 2 else (24, 36)
        pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        folder = root / "sub" if i % 3 == 0 else root
        Image.fromarray(pixels).save(folder / f"img_{i:03d}.png")
    return root


def test_load_dataset_split_sizes_and_range(image_dir):
    data = load_dataset(image_dir, 16, (0.6, 0.2, 0.2), rng_seed=1)
    assert data.sizes() == (60, 20, 20)
    for part in (data.codec_train, data.attack_train, data.eval):
        assert part.shape[1:] == (16, 16, 3)
        assert part.min() >= 0.0 and part.max() <= 1.0


def test_load_dataset_split_hygiene_and_determinism(image_dir):
    a = load_dataset(image_dir, 16, (0.6, 0.2, 0.2), rng_seed=1)
    b = load_dataset(image_dir, 16, (0.6, 0.2, 0.2), rng_seed=1)
    c = load_dataset(image_dir, 16, (0.6, 0.2, 0.2), rng_seed=2)
    assert a.ids == b.ids
    assert a.ids != c.ids
    seen = [i for ids in a.ids.values() for i in ids]
    assert len(seen) == len(set(seen)) == 100
    np.testing.assert_array_equal(a.eval, b.eval)


def test_load_dataset_center_crops_without_resizing(tmp_path):
    root = tmp_path / "one"
    root.mkdir()
    img = np.zeros((16, 24, 3), np.uint8)
    img[:, 4:20] = 200
    for i in range(10):
        Image.fromarray(img).save(root / f"{i}.png")
    data = load_dataset(root, 16, (0.4, 0.3, 0.3), rng_seed=0)
    np.testing.assert_array_equal(data.eval[0], np.full((16, 16, 3), 200 / 255, np.float32))


def test_load_dataset_skips_unreadable_files(image_dir, caplog):
    (image_dir / "broken.png").write_bytes(b"not an image")
    with caplog.at_level(logging.WARNING):
        data = load_dataset(image_dir, 16, (0.6, 0.2, 0.2), rng_seed=1)
    assert sum(data.sizes()) == 100
    assert "broken.png" in caplog.text


def test_load_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing", 16, (0.6, 0.2, 0.2), 0)
    (tmp_path / "bad.png").write_bytes(b"junk")
    with pytest.raises(ValueError):
        load_dataset(tmp_path, 16, (0.6, 0.2, 0.2), 0)


def test_synthetic_dataset_is_8bit_and_disjoint(tmp_path):
    data = dataset_for(tiny(tmp_path))
    assert data.sizes() == (30, 18, 12)
    np.testing.assert_array_equal(np.round(data.eval * 255) / 255, data.eval)
    seen = [i for ids in data.ids.values() for i in ids]
    assert len(seen) == len(set(seen))


# -- grid runs ---------------------------------------------------------------


@pytest.fixture(scope="module")
def grids(tmp_path_factory):
    out = tmp_path_factory.mktemp("grid")
    cfg = tiny(out)
    data = dataset_for(cfg)
    off = run_grid(cfg, data=data)
    full = run_grid(cfg.updated({"defense": "full"}), data=data)
    return cfg, data, off, full


def test_default_grid_has_nine_cells_with_equal_counts(grids):
    cfg, _, off, _ = grids
    assert len(off.cells) == 9
    for m in cfg.main_snrs_db:
        for e in cfg.eaves_snrs_db:
            assert off.cell(m, e).n == cfg.eval_count


def test_bob_is_unchanged_by_the_defense(grids):
    _, _, off, full = grids
    for key, cell in off.cells.items():
        assert full.cells[key].bob == cell.bob
    for a, b in zip(off.sheets, full.sheets):
        np.testing.assert_array_equal(a.bob, b.bob)


def test_grid_is_reproducible(grids):
    cfg, data, off, _ = grids
    again = run_grid(cfg, data=data)
    assert again.cells == off.cells


def test_missing_checkpoint_without_training(tmp_path):
    cfg = tiny(tmp_path, train_on_demand=False)
    with pytest.raises(FileNotFoundError, match="checkpoint"):
        run_grid(cfg)


def test_eval_count_larger_than_split(tmp_path):
    with pytest.raises(ConfigError):
        run_grid(tiny(tmp_path, eval_count=500))


def test_ablation_returns_both_modes(tmp_path):
    cfg = tiny(tmp_path, main_snrs_db=[10.0], eaves_snrs_db=[10.0])
    perm, sub = run_ablation(cfg)
    assert (perm.mode, sub.mode) == (DefenseMode.PERMUTE_ONLY, DefenseMode.SUBSTITUTE_ONLY)
    assert len(perm.cells) == len(sub.cells) == 1


# -- CSV -----------------------------------------------------------------------


def test_csv_rows_and_order(grids, tmp_path):
    _, _, off, _ = grids
    path = emit_table_csv(off, tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + 27
    rows = [line.split(",") for line in lines[1:]]
    keys = [(float(r[0]), float(r[1])) for r in rows[::3]]
    assert keys == sorted(keys)
    assert [tuple(r[2:4]) for r in rows[:3]] == [("bob", "none"), ("eve", "white_box"), ("eve", "black_box")]


def test_csv_parse_back_and_byte_identical(grids, tmp_path):
    _, _, off, _ = grids
    a = emit_table_csv(off, tmp_path / "a.csv")
    b = emit_table_csv(off, tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    table = read_table_csv(a)
    for (m, e), cell in off.cells.items():
        for attack in ("none", "white_box", "black_box"):
            psnr_db, ssim, n = table[(m, e, attack)]
            rec = cell.record(attack)
            assert psnr_db == pytest.approx(rec.psnr_db, abs=5e-5)
            assert ssim == pytest.approx(rec.ssim, abs=5e-5)
            assert n == cell.n


def test_csv_unwritable_path(grids, tmp_path):
    _, _, off, _ = grids
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_table_csv(off, blocker / "t.csv")


# -- image sheets ------------------------------------------------------------


def test_one_sheet_per_main_snr(grids):
    cfg, _, off, _ = grids
    assert [s.main_snr_db for s in off.sheets] == cfg.main_snrs_db


def test_sheet_geometry_and_lossless_decode_back(grids, tmp_path):
    cfg, _, off, _ = grids
    sheet = off.sheets[1]
    assert sheet.columns == 2 + 2 * len(cfg.eaves_snrs_db)
    path = emit_image_grid(sheet, tmp_path / "sheet.png")
    decoded = np.asarray(Image.open(path).convert("RGB"))
    size = cfg.image_size
    for col, (label, tiles) in enumerate(sheet.column_tiles()):
        for row in range(sheet.rows):
            x, y = tile_origin(sheet, row, col)
            expected = np.round(np.clip(tiles[row], 0, 1) * 255).astype(np.uint8)
            np.testing.assert_array_equal(decoded[y : y + size, x : x + size], expected)
    bottom_right = tile_origin(sheet, sheet.rows - 1, sheet.columns - 1)
    assert decoded.shape[1] >= bottom_right[0] + size
    assert decoded.shape[0] >= bottom_right[1] + size


def test_sheet_white_box_left_of_black_box(grids):
    _, _, off, _ = grids
    labels = [label for label, _ in off.sheets[0].column_tiles()]
    assert labels[:2] == ["original", "bob 0"]
    assert labels[2::2] == ["wb 0", "wb 10", "wb 20"]
    assert labels[3::2] == ["bb 0", "bb 10", "bb 20"]
