"""Experiment orchestration over the (main SNR, eavesdropper SNR) grid.

One codec is trained per main-channel SNR. For every grid cell Bob's quality
is measured through the main channel, and Eve runs both inversion attacks on
her own noisy copy of the same transmissions. With a defense mode enabled,
transmissions are protected pairwise with freshly drawn schemes; the scheme
indices travel sealed and Bob opens them before undoing the transform.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import checkpoint
from .attack import (
    AttackDataset,
    InverseNetConfig,
    InversionConfig,
    black_box_invert_batch,
    train_inverse_network,
    white_box_invert_batch,
)
from .channel import NOISELESS, ChannelSpec, apply_channel, channel_noise, format_snr, parse_snr
from .codec import (
    CodecConfig,
    SymbolFrame,
    TrainedCodec,
    decode_features,
    encode_features,
    features_to_symbols,
    normalize_power,
    symbols_to_features,
    train_codec,
)
from .corpus import synthetic_faces
from .defense import (
    DefenseMode,
    SchemeSets,
    SharedKey,
    apply_selections,
    generate_scheme_sets,
    open_value_pair,
    protect_stream,
    recover_stream,
    resolve,
    restrict,
    seal_value_pair,
)
from .metrics import QualityRecord, aggregate, evaluate
from .seeding import derive_seed

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff", ".webp"}
CSV_HEADER = ["main_snr_db", "eaves_snr_db", "role", "attack", "psnr_db", "ssim", "n"]
ROLES = (("bob", "none"), ("eve", "white_box"), ("eve", "black_box"))


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (a usage error for the CLI)."""


# --------------------------------------------------------------------------
# Configuration


def _snr_list(value) -> list:
    if isinstance(value, str):
        value = [v for v in value.replace(" ", "").split(",") if v]
    return [v if v is NOISELESS else parse_snr(v) for v in value]


def _float_tuple(value) -> tuple:
    if isinstance(value, str):
        value = value.replace(" ", "").split(",")
    return tuple(float(v) for v in value)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    t = str(value).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass
class RunConfig:
    """Everything a grid run needs. Defaults are the desk-scale setup.

    ``dataset`` is an image directory or ``"synthetic"``. The ``codec_*``,
    ``wb_*`` and ``inv_*`` groups configure codec training, the white-box
    inversion and Eve's inverse network.
    """

    dataset: str = "synthetic"
    corpus_size: int = 1000
    corpus_seed: int = 0
    image_size: int = 64
    splits: tuple = (0.6, 0.3, 0.1)
    eval_count: int = 64
    main_snrs_db: list = field(default_factory=lambda: [0.0, 10.0, 20.0])
    eaves_snrs_db: list = field(default_factory=lambda: [0.0, 10.0, 20.0])
    defense: DefenseMode = DefenseMode.OFF
    seed: int = 0
    out_dir: Optional[str] = None
    checkpoint_dir: Optional[str] = None
    train_on_demand: bool = True

    codec_width: int = 32
    codec_epochs: int = 60
    codec_batch_size: int = 32
    codec_lr: float = 1e-3
    codec_lam: float = 0.01
    codec_beta: float = 1.0

    wb_iterations: int = 2000
    wb_lr: float = 1e-2
    wb_lam: float = 1.0
    wb_beta: float = 1.0

    inv_hidden: int = 64
    inv_epochs: int = 20
    inv_batch_size: int = 16
    inv_lr: float = 1e-3
    inv_query_repeats: int = 4

    scheme_set_size: int = 256
    sheet_rows: int = 4

    _PARSERS = {
        "splits": _float_tuple,
        "main_snrs_db": _snr_list,
        "eaves_snrs_db": _snr_list,
        "defense": DefenseMode.parse,
        "train_on_demand": _bool,
    }

    def __post_init__(self):
        self.main_snrs_db = _snr_list(self.main_snrs_db)
        self.eaves_snrs_db = _snr_list(self.eaves_snrs_db)
        self.splits = _float_tuple(self.splits)
        if not isinstance(self.defense, DefenseMode):
            self.defense = DefenseMode.parse(self.defense)

    def validate(self) -> "RunConfig":
        if not self.main_snrs_db or not self.eaves_snrs_db:
            raise ConfigError("SNR lists must be non-empty")
        for name in ("main_snrs_db", "eaves_snrs_db"):
            values = getattr(self, name)
            if len(set(map(format_snr, values))) != len(values):
                raise ConfigError(f"{name} has duplicates")
        if NOISELESS in self.main_snrs_db:
            raise ConfigError("codecs need a finite training SNR")
        if len(self.splits) != 3 or min(self.splits) <= 0 or sum(self.splits) > 1 + 1e-9:
            raise ConfigError(f"splits must be three positive fractions summing to <= 1, got {self.splits}")
        if self.eval_count < 1:
            raise ConfigError("eval_count must be >= 1")
        if self.image_size % 4:
            raise ConfigError("image_size must be a multiple of 4")
        if self.inv_query_repeats < 1:
            raise ConfigError("inv_query_repeats must be >= 1")
        return self

    def updated(self, values: dict) -> "RunConfig":
        """Copy with string or typed overrides applied; unknown keys are errors."""
        known = {f.name: f for f in fields(self)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if raw is None:
                kwargs[key] = None
                continue
            parser = self._PARSERS.get(key)
            try:
                if parser is not None:
                    kwargs[key] = parser(raw)
                elif isinstance(raw, str):
                    current = getattr(self, key)
                    typ = type(current) if current is not None else str
                    kwargs[key] = typ(raw) if typ in (int, float, str) else raw
                else:
                    kwargs[key] = raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        return replace(self, **kwargs)

    def to_text(self) -> str:
        """Render as a config file that ``load_config`` reads back."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name in ("main_snrs_db", "eaves_snrs_db"):
                v = ", ".join(format_snr(s) for s in v)
            elif isinstance(v, tuple):
                v = ", ".join(f"{x:g}" for x in v)
            elif isinstance(v, DefenseMode):
                v = v.value
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def codec_config(self, snr) -> CodecConfig:
        return CodecConfig(
            image_shape=(self.image_size, self.image_size, 3),
            train_snr_db=float(snr),
            width=self.codec_width,
            lam=self.codec_lam,
            beta=self.codec_beta,
            batch_size=self.codec_batch_size,
            learning_rate=self.codec_lr,
            epochs=self.codec_epochs,
        )

    def inversion_config(self) -> InversionConfig:
        return InversionConfig(self.wb_iterations, self.wb_lr, self.wb_lam, self.wb_beta)

    def inverse_net_config(self, codec: TrainedCodec) -> InverseNetConfig:
        return InverseNetConfig(
            codec.feature_shape, codec.config.image_shape, self.inv_hidden,
            self.inv_lr, self.inv_epochs, self.inv_batch_size,
        )


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    return (base or RunConfig()).updated(parse_config_text(Path(path).read_text()))


# --------------------------------------------------------------------------
# Data


@dataclass
class DatasetSplits:
    codec_train: np.ndarray
    attack_train: np.ndarray
    eval: np.ndarray
    ids: dict

    def sizes(self) -> tuple:
        return len(self.codec_train), len(self.attack_train), len(self.eval)


def _load_image(path: Path, size: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        side = min(w, h)
        left, top = (w - side) // 2, (h - side) // 2
        im = im.crop((left, top, left + side, top + side))
        if side != size:
            im = im.resize((size, size), Image.Resampling.LANCZOS)
        return np.asarray(im, dtype=np.float32) / 255.0


def _split(images: np.ndarray, ids: list, splits, rng_seed: int) -> DatasetSplits:
    n = len(images)
    if n == 0:
        raise ValueError("no usable images")
    counts = [int(math.floor(f * n + 1e-9)) for f in splits]
    if min(counts) < 1:
        raise ValueError(f"{n} images are too few for splits {tuple(splits)}")
    order = np.random.default_rng(rng_seed).permutation(n)
    parts, names, start = [], {}, 0
    for key, count in zip(("codec_train", "attack_train", "eval"), counts):
        idx = order[start : start + count]
        parts.append(images[idx])
        names[key] = [ids[i] for i in idx]
        start += count
    return DatasetSplits(*parts, ids=names)


def load_dataset(path, image_size: int, splits, rng_seed: int) -> DatasetSplits:
    """Read a directory of images, square-crop, resize, scale to [0, 1] and split.

    Unreadable files are skipped with a warning.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    files = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    images, ids = [], []
    for p in files:
        try:
            images.append(_load_image(p, image_size))
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        ids.append(str(p.relative_to(root)))
    if not images:
        raise ValueError(f"no decodable images under {root}")
    return _split(np.stack(images), ids, splits, rng_seed)


def dataset_for(cfg: RunConfig) -> DatasetSplits:
    if cfg.dataset == "synthetic":
        faces = synthetic_faces(cfg.corpus_size, cfg.image_size, cfg.corpus_seed)
        faces = np.round(faces * 255.0).astype(np.float32) / 255.0  # same values as the PNG corpus
        ids = [f"face_{i:05d}.png" for i in range(len(faces))]
        return _split(faces, ids, cfg.splits, cfg.seed)
    return load_dataset(cfg.dataset, cfg.image_size, cfg.splits, cfg.seed)


# --------------------------------------------------------------------------
# Codecs


def train_codecs(cfg: RunConfig, data: Optional[DatasetSplits] = None) -> dict:
    """Train one codec per main SNR, overwriting cached checkpoints.

    Returns ``{label: (codec, report)}``.
    """
    cfg.validate()
    data = data if data is not None else dataset_for(cfg)
    validation = data.eval[: cfg.eval_count]
    return {
        format_snr(snr): obtain_codec(cfg, snr, data.codec_train, None, validation, force=True)
        for snr in cfg.main_snrs_db
    }


def codec_path(cfg: RunConfig, snr) -> Path:
    base = cfg.checkpoint_dir or os.path.join(cfg.out_dir or ".", "checkpoints")
    return Path(base) / f"codec_mc{format_snr(snr)}_seed{cfg.seed}.ckpt"


def obtain_codec(cfg: RunConfig, snr, train_images, explicit: Optional[dict] = None, validation=None, force: bool = False):
    """Return ``(codec, report_or_None)`` for a main SNR, training if needed."""
    want = cfg.codec_config(snr)
    if explicit and format_snr(snr) in explicit:
        codec = checkpoint.load_codec(explicit[format_snr(snr)])
        if codec.config.image_shape != want.image_shape:
            raise ConfigError(f"checkpoint image shape {codec.config.image_shape} != run image size")
        return codec, None
    path = codec_path(cfg, snr)
    if path.exists() and not force:
        codec = checkpoint.load_codec(path)
        if codec.config.to_dict() == want.to_dict() and codec.seed == derive_seed(cfg.seed, "codec", format_snr(snr)):
            return codec, None
        log.info("checkpoint %s does not match the run config; retraining", path)
    if not cfg.train_on_demand and not force:
        raise FileNotFoundError(f"no codec checkpoint for main SNR {format_snr(snr)} dB at {path}")
    log.info("training codec for main SNR %s dB on %d images", format_snr(snr), len(train_images))
    codec, report = train_codec(train_images, want, derive_seed(cfg.seed, "codec", format_snr(snr)), validation)
    checkpoint.save_codec(codec, path)
    return codec, report


# --------------------------------------------------------------------------
# Transmission pipeline


def _frames(features: np.ndarray) -> list:
    return [features_to_symbols(f, normalize=False) for f in features]


def _features(frames) -> np.ndarray:
    return np.stack([symbols_to_features(y) for y in list(frames)])


@dataclass
class Transmission:
    """What Alice puts on the air for a batch of source images."""

    clean: np.ndarray        # (n, h, w, c) unit-power features, source order
    sent: np.ndarray         # (n_slots, h, w, c) as transmitted; n_slots is n rounded up to even
    sealed: list             # one sealed value tuple per pair (empty when the defense is off)
    mode: DefenseMode


def transmit(codec: TrainedCodec, images, mode: DefenseMode, sets, key: Optional[SharedKey], seed_base) -> Transmission:
    feats = np.stack([normalize_power(f) for f in encode_features(codec, images)])
    if mode is DefenseMode.OFF:
        return Transmission(feats, feats, [], mode)
    seeds = [derive_seed(*seed_base, "scheme", k) for k in range((len(feats) + 1) // 2)]
    stream = protect_stream(feats, sets, mode, seeds, partner_seed=derive_seed(*seed_base, "partner"))
    sealed = [seal_value_pair(sel.value, key) for sel in stream.selections]
    return Transmission(feats, stream.frames, sealed, mode)


def bob_receive(codec: TrainedCodec, tx: Transmission, snr, sets, key, noise_seed_base) -> np.ndarray:
    """Main channel plus Bob's receiver; returns decoded images in source order.

    The noise realization for slot ``k`` is drawn per source frame and, under
    a defense, routed through the same schemes as the frame it rides with.
    Given equal seeds this makes Bob's output independent of the defense.
    """
    n = len(tx.clean)
    n_symbols = tx.clean[0].size // 2
    noise = np.stack([
        symbols_to_features(SymbolFrame(
            channel_noise(n_symbols, ChannelSpec(snr, seed=derive_seed(*noise_seed_base, k))), codec.feature_shape))
        for k in range(len(tx.sent))
    ])
    selections = []
    if tx.mode is not DefenseMode.OFF:
        selections = [restrict(resolve(sets, open_value_pair(c, key)), tx.mode) for c in tx.sealed]
        noise = apply_selections(noise, selections)
    received = _features(
        apply_channel(y, ChannelSpec(snr), noise=features_to_symbols(nz, normalize=False).symbols)
        for y, nz in zip(_frames(tx.sent), noise)
    )
    if selections:
        received = recover_stream(received, selections, n)
    return decode_features(codec, received[:n])


def eve_receive(tx: Transmission, snr, seed_base, count: Optional[int] = None) -> list:
    """Eve's noisy copies of the first ``count`` transmitted slots."""
    count = len(tx.clean) if count is None else count
    return [
        apply_channel(y, ChannelSpec(snr, seed=derive_seed(*seed_base, k)))
        for k, y in enumerate(_frames(tx.sent[:count]))
    ]


# --------------------------------------------------------------------------
# Grid


@dataclass
class GridCell:
    bob: QualityRecord
    white_box: QualityRecord
    black_box: QualityRecord
    n: int

    def record(self, attack: str) -> QualityRecord:
        return {"none": self.bob, "white_box": self.white_box, "black_box": self.black_box}[attack]


@dataclass
class ImageGridSheet:
    """Tiles for one main SNR: rows are sample images; columns are the original,
    Bob's image, then (white box, black box) for each eavesdropper SNR."""

    main_snr_db: float
    eaves_snrs_db: list
    original: np.ndarray
    bob: np.ndarray
    white_box: dict = field(default_factory=dict)   # eaves snr label -> (rows, H, W, C)
    black_box: dict = field(default_factory=dict)

    @property
    def rows(self) -> int:
        return len(self.original)

    @property
    def columns(self) -> int:
        return 2 + 2 * len(self.eaves_snrs_db)

    def column_tiles(self) -> list:
        cols = [("original", self.original), (f"bob {format_snr(self.main_snr_db)}", self.bob)]
        for e in self.eaves_snrs_db:
            label = format_snr(e)
            cols.append((f"wb {label}", self.white_box[label]))
            cols.append((f"bb {label}", self.black_box[label]))
        return cols


@dataclass
class GridResult:
    mode: DefenseMode
    main_snrs_db: list
    eaves_snrs_db: list
    cells: dict = field(default_factory=dict)       # (main label, eaves label) -> GridCell
    sheets: list = field(default_factory=list)
    training: dict = field(default_factory=dict)    # main label -> TrainingReport
    scheme_sets: Optional[SchemeSets] = None

    def cell(self, main, eaves) -> GridCell:
        return self.cells[(format_snr(main), format_snr(eaves))]

    def mean(self, attack: str, metric: str) -> float:
        return float(np.mean([getattr(c.record(attack), metric) for c in self.cells.values()]))


def _quality(ref, rec) -> QualityRecord:
    return aggregate([evaluate(a, b) for a, b in zip(ref, rec)])


def _attack_training_set(codec, cfg, images, mode, sets, key, main, eaves) -> AttackDataset:
    """Eve's query pairs: each image is sent ``inv_query_repeats`` times, each
    time with fresh channel noise (and fresh schemes under a defense)."""
    images = np.concatenate([images] * cfg.inv_query_repeats)
    base = (cfg.seed, "eve-queries", format_snr(main))
    tx = transmit(codec, images, mode, sets, key, base)
    heard = eve_receive(tx, eaves, (cfg.seed, "eve-query-noise", format_snr(main), format_snr(eaves)))
    return AttackDataset(images, heard)


def run_grid(cfg: RunConfig, checkpoints: Optional[dict] = None, data: Optional[DatasetSplits] = None) -> GridResult:
    """Evaluate Bob and both attacks on every (main, eaves) pair of ``cfg``."""
    cfg.validate()
    data = data if data is not None else dataset_for(cfg)
    if len(data.eval) < cfg.eval_count:
        raise ConfigError(f"eval split has {len(data.eval)} images, eval_count is {cfg.eval_count}")
    x_eval = data.eval[: cfg.eval_count]
    mode = cfg.defense
    result = GridResult(mode, list(cfg.main_snrs_db), list(cfg.eaves_snrs_db))
    sets = key = None
    h = cfg.image_size // 4
    if mode is not DefenseMode.OFF:
        sets = generate_scheme_sets(h, cfg.scheme_set_size, cfg.scheme_set_size, derive_seed(cfg.seed, "scheme-sets"))
        key = SharedKey.generate()
        result.scheme_sets = sets
    n_rows = min(cfg.sheet_rows, len(x_eval))

    for main in cfg.main_snrs_db:
        m_label = format_snr(main)
        codec, report = obtain_codec(cfg, main, data.codec_train, checkpoints, x_eval)
        if report is not None:
            result.training[m_label] = report
        tx = transmit(codec, x_eval, mode, sets, key, (cfg.seed, "eval"))
        bob_images = bob_receive(codec, tx, main, sets, key, (cfg.seed, "main-noise", m_label))
        bob = _quality(x_eval, bob_images)
        sheet = ImageGridSheet(main, list(cfg.eaves_snrs_db), x_eval[:n_rows], bob_images[:n_rows])
        log.info("MC %s dB [%s]: bob %.2f dB / %.3f", m_label, mode.value, bob.psnr_db, bob.ssim)

        for eaves in cfg.eaves_snrs_db:
            e_label = format_snr(eaves)
            heard = eve_receive(tx, eaves, (cfg.seed, "eve-noise", m_label, e_label))
            wb = white_box_invert_batch(codec, heard, cfg.inversion_config()).images
            train_set = _attack_training_set(codec, cfg, data.attack_train, mode, sets, key, main, eaves)
            net = train_inverse_network(train_set, cfg.inverse_net_config(codec), derive_seed(cfg.seed, "inverse", m_label, e_label))
            bb = black_box_invert_batch(net, heard)
            cell = GridCell(bob, _quality(x_eval, wb), _quality(x_eval, bb), len(x_eval))
            result.cells[(m_label, e_label)] = cell
            sheet.white_box[e_label] = wb[:n_rows]
            sheet.black_box[e_label] = bb[:n_rows]
            log.info(
                "MC %s / EC %s [%s]: white box %.2f dB / %.3f, black box %.2f dB / %.3f",
                m_label, e_label, mode.value, cell.white_box.psnr_db, cell.white_box.ssim,
                cell.black_box.psnr_db, cell.black_box.ssim,
            )
        result.sheets.append(sheet)
    return result


def run_ablation(cfg: RunConfig, checkpoints: Optional[dict] = None, data: Optional[DatasetSplits] = None) -> tuple:
    """Permutation-only and substitution-only grids, in that order."""
    data = data if data is not None else dataset_for(cfg)
    return tuple(
        run_grid(replace(cfg, defense=mode), checkpoints, data)
        for mode in (DefenseMode.PERMUTE_ONLY, DefenseMode.SUBSTITUTE_ONLY)
    )


# --------------------------------------------------------------------------
# Output


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def table_rows(result: GridResult) -> list:
    def key(snr):
        return math.inf if snr is NOISELESS else float(snr)

    rows = []
    for main in sorted(result.main_snrs_db, key=key):
        for eaves in sorted(result.eaves_snrs_db, key=key):
            cell = result.cell(main, eaves)
            for role, attack in ROLES:
                r = cell.record(attack)
                rows.append([format_snr(main), format_snr(eaves), role, attack, _fmt(r.psnr_db), _fmt(r.ssim), str(cell.n)])
    return rows


def emit_table_csv(result: GridResult, path) -> Path:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(table_rows(result))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_table_csv(path) -> dict:
    """Parse an emitted table back into ``{(main, eaves, attack): (psnr, ssim, n)}``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            out[(row["main_snr_db"], row["eaves_snr_db"], row["attack"])] = (
                float(row["psnr_db"]), float(row["ssim"]), int(row["n"])
            )
    return out


TILE_PAD = 2
LABEL_HEIGHT = 12


def tile_origin(sheet: ImageGridSheet, row: int, col: int) -> tuple:
    """Top-left pixel ``(x, y)`` of a tile in the rendered sheet."""
    h, w = sheet.original.shape[1:3]
    return TILE_PAD + col * (w + TILE_PAD), LABEL_HEIGHT + TILE_PAD + row * (h + TILE_PAD)


def render_sheet(sheet: ImageGridSheet) -> Image.Image:
    h, w = sheet.original.shape[1:3]
    width = TILE_PAD + sheet.columns * (w + TILE_PAD)
    height = LABEL_HEIGHT + TILE_PAD + sheet.rows * (h + TILE_PAD)
    canvas = Image.new("RGB", (width, height), (255, 255, 255))
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for col, (label, tiles) in enumerate(sheet.column_tiles()):
        x0, _ = tile_origin(sheet, 0, col)
        draw.text((x0, 1), label, fill=(0, 0, 0), font=font)
        for row in range(sheet.rows):
            tile = np.round(np.clip(tiles[row], 0, 1) * 255).astype(np.uint8)
            canvas.paste(Image.fromarray(tile), tile_origin(sheet, row, col))
    return canvas


def emit_image_grid(sheet: ImageGridSheet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    render_sheet(sheet).save(path, format="PNG")
    return path


def emit_result(result: GridResult, out_dir, stem: str) -> list:
    """Write the CSV table and one PNG sheet per main SNR; returns the paths."""
    out_dir = Path(out_dir)
    paths = [emit_table_csv(result, out_dir / f"{stem}.csv")]
    for sheet in result.sheets:
        paths.append(emit_image_grid(sheet, out_dir / f"{stem}_mc{format_snr(sheet.main_snr_db)}.png"))
    return paths
