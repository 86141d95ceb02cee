"""Command-line entry point: generate / train / eval / infer / visualize / ablate.

Every run writes a manifest (command, config snapshot, seed, version, output
paths); reruns with identical manifests reproduce identical outputs modulo
timestamps. Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from . import __version__
from .datagen.corpus import DocumentRecord, read_dataset, write_dataset
from .datagen.llm import HttpLLMClient, LLMClientConfig
from .datagen.qa import VerifyStats, gen_qa_deterministic, llm_generate_qa, verify_and_ground
from .datagen.render import TableStyle, random_table_spec, render_document
from .errors import DataError, LayoutError, NumericalError, UsageError
from .geometry import PixelPolygon
from .metrics import MetricsReport, evaluate_predictions
from .model import Model, ModelConfig, load_checkpoint
from .train import TrainConfig, train_loop
from .vocab import Vocabulary, dequantize_polygon

DEFAULT_THRESHOLDS = (1e-3, 1e-2, 1e-1)

DEFAULT_CONFIG = {
    "charset": None,  # None = printable ASCII
    "model": {
        "image_size": [256, 256],
        "channels": 1,
        "patch": 32,
        "dim": 128,
        "encoder_layers": 2,
        "decoder_layers": 2,
        "heads": 4,
        "max_len": 256,
        "mlp_ratio": 4,
    },
    "train": {
        "lam": 0.001,
        "lr": 3e-4,
        "warmup_frac": 0.10,
        "steps": 1000,
        "batch_size": 8,
        "seed": 0,
        "grounding_mode": "see_first",
        "mix_ratio": "1:1",
        "see_supervision": "auxiliary_and_downstream",
        "tasks": ["vqa"],
        "max_len": 256,
        "clip_norm": 1.0,
        "checkpoint_every": 0,
    },
    "generate": {
        "count": 32,
        "seed": 0,
        "canvas": [256, 256],
        "questions_per_doc": 6,
        "aux_fraction": 0.0,
        "warp_mag": 0.0,
        "min_rows": 3,
        "max_rows": 6,
        "font_scale": 1,
        "pad": 3,
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {path} is not valid JSON: {exc}") from exc
        config = _deep_merge(config, user)
    return config


def _apply_overrides(config: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        config["train"]["seed"] = args.seed
        config["generate"]["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        config["train"]["lam"] = args.lam
    if getattr(args, "grounding_mode", None) is not None:
        config["train"]["grounding_mode"] = args.grounding_mode
    if getattr(args, "see_supervision", None) is not None:
        config["train"]["see_supervision"] = args.see_supervision
    if getattr(args, "steps", None) is not None:
        config["train"]["steps"] = args.steps
    if getattr(args, "batch_size", None) is not None:
        config["train"]["batch_size"] = args.batch_size
    if getattr(args, "lr", None) is not None:
        config["train"]["lr"] = args.lr
    if getattr(args, "tasks", None) is not None:
        config["train"]["tasks"] = [t.strip() for t in args.tasks.split(",") if t.strip()]
    if getattr(args, "count", None) is not None:
        config["generate"]["count"] = args.count
    if getattr(args, "aux_fraction", None) is not None:
        config["generate"]["aux_fraction"] = args.aux_fraction
    if getattr(args, "warp", None) is not None:
        config["generate"]["warp_mag"] = args.warp
    if getattr(args, "questions", None) is not None:
        config["generate"]["questions_per_doc"] = args.questions
    return config


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int, outputs: list[str]):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "outputs": outputs,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _vocab_from_config(config: dict) -> Vocabulary:
    return Vocabulary(config.get("charset"))


def _model_config(config: dict, vocab: Vocabulary) -> ModelConfig:
    m = config["model"]
    return ModelConfig(
        image_size=tuple(m["image_size"]),
        channels=m["channels"],
        patch=m["patch"],
        dim=m["dim"],
        encoder_layers=m["encoder_layers"],
        decoder_layers=m["decoder_layers"],
        heads=m["heads"],
        vocab_size=vocab.size,
        max_len=m["max_len"],
        mlp_ratio=m["mlp_ratio"],
    )


def _train_config(config: dict) -> TrainConfig:
    t = config["train"]
    return TrainConfig(
        lam=t["lam"],
        lr=t["lr"],
        warmup_frac=t["warmup_frac"],
        steps=t["steps"],
        batch_size=t["batch_size"],
        seed=t["seed"],
        grounding_mode=t["grounding_mode"],
        mix_ratio=t["mix_ratio"],
        see_supervision=t["see_supervision"],
        tasks=tuple(t["tasks"]),
        max_len=t["max_len"],
        clip_norm=t["clip_norm"],
        checkpoint_every=t["checkpoint_every"],
    )


# --- generate ---


def generate_corpus(config: dict, llm_client=None, llm_config=None):
    """Render documents and attach QA, either deterministic or LLM+verified."""
    g = config["generate"]
    seed = int(g["seed"])
    count = int(g["count"])
    canvas = tuple(g["canvas"])
    style = TableStyle(font_scale=int(g["font_scale"]), pad=int(g["pad"]),
                       warp_mag=float(g["warp_mag"]))
    records = []
    totals = VerifyStats()
    n_aux = round(count * float(g["aux_fraction"]))
    for i in range(count):
        seq = np.random.SeedSequence([seed, i])
        spec_rng = np.random.default_rng(seq)
        spec = random_table_spec(
            spec_rng, canvas=canvas, min_rows=int(g["min_rows"]),
            max_rows=int(g["max_rows"]), style=style,
        )
        render_seed = int(seq.generate_state(1)[0])
        record = render_document(spec, seed=render_seed, canvas=canvas)
        record.doc_id = f"doc_{i:05d}"
        record.source = "auxiliary" if i < n_aux else "downstream"
        if llm_client is not None:
            candidates = llm_generate_qa(record.html, llm_client, llm_config)
            record.qas, stats = verify_and_ground(candidates, record)
            totals.retained += stats.retained
            totals.mismatched += stats.mismatched
            totals.out_of_range += stats.out_of_range
            totals.unlocated += stats.unlocated
        else:
            record.qas = gen_qa_deterministic(
                record, seed=render_seed + 1, count=int(g["questions_per_doc"])
            )
        records.append(record)
    return records, totals


def cmd_generate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    llm_client = None
    llm_config = None
    if args.llm_config:
        llm_config = LLMClientConfig(**json.loads(Path(args.llm_config).read_text()))
        llm_client = HttpLLMClient(llm_config)
    records, verify_totals = generate_corpus(config, llm_client, llm_config)
    write_dataset(records, out_dir)
    by_type: dict[str, int] = {}
    for record in records:
        for qa in record.qas:
            by_type[qa.qtype] = by_type.get(qa.qtype, 0) + 1
    stats = {
        "documents": len(records),
        "questions": sum(len(r.qas) for r in records),
        "by_type": by_type,
    }
    if llm_client is not None:
        stats["verification"] = verify_totals.as_dict()
    (out_dir / "stats.json").write_text(
        json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(out_dir, "generate", config, config["generate"]["seed"],
                    ["records.jsonl", "images/", "stats.json"])
    print(f"wrote {stats['documents']} documents / {stats['questions']} questions to {out_dir}")
    return 0


# --- train ---


def cmd_train(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    records = read_dataset(args.corpus)
    if not records:
        raise DataError(f"corpus at {args.corpus} is empty")
    out_dir = Path(args.out)
    train_config = _train_config(config)
    if args.resume:
        model, start_step, extras = load_checkpoint(args.resume)
    else:
        vocab = _vocab_from_config(config)
        model = Model(_model_config(config, vocab), vocab)
        start_step, extras = 0, None
    result = train_loop(train_config, model, records, out_dir=out_dir,
                        start_step=start_step, resume_extras=extras)
    _write_manifest(out_dir, "train", config, train_config.seed,
                    ["checkpoint.npz", "metrics.jsonl"])
    final = result.metrics[-1] if result.metrics else {}
    print(f"trained {result.steps_run} steps; final lm loss "
          f"{final.get('lm_loss', float('nan')):.4f}; checkpoint {result.checkpoint_path}")
    return 0


# --- eval ---


def predict_records(model: Model, records) -> dict:
    """Greedy per-question predictions: (doc_id, qa_index) -> (answer, polygon)."""
    predictions = {}
    for record in records:
        width, height = record.image_size
        memory = model.encode_image(record.image.astype(np.float32) / 255.0)
        for index, qa in enumerate(record.qas):
            prompt = [model.vocab.vqa_id] + model.vocab.tokenize(qa.question)
            result = model.greedy_generate(memory, prompt)
            answer = model.vocab.detokenize(result.token_ids)
            polygon = None
            if result.see_hiddens:
                quant = model.grounding.decode_polygon(result.see_hiddens[0])
                polygon = dequantize_polygon(quant, width, height)
            predictions[(record.doc_id, index)] = (answer, polygon)
    return predictions


def _parse_thresholds(text: str | None):
    if not text:
        return DEFAULT_THRESHOLDS
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"bad thresholds {text!r}: {exc}") from exc
    if not values:
        raise UsageError("thresholds list is empty")
    return values


def cmd_eval(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    records = read_dataset(args.corpus)
    model, _, _ = load_checkpoint(args.checkpoint)
    thresholds = _parse_thresholds(args.thresholds)
    predictions = predict_records(model, records)
    report = evaluate_predictions(records, predictions, thresholds)
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        _dump_predictions(out_dir / "predictions.jsonl", records, predictions)
        _write_manifest(out_dir, "eval", config, config["train"]["seed"],
                        ["report.json", "predictions.jsonl"])
    if args.json:
        print(json.dumps(report.to_dict(), sort_keys=True))
    else:
        print(report.summary())
    return 0


def _dump_predictions(path: Path, records, predictions) -> None:
    lines = []
    for record in records:
        for index in range(len(record.qas)):
            answer, polygon = predictions.get((record.doc_id, index), ("", None))
            lines.append(json.dumps({
                "doc_id": record.doc_id,
                "qa_index": index,
                "answer": answer,
                "polygon": None if polygon is None else [[x, y] for x, y in polygon.points],
            }))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_predictions(path) -> dict:
    predictions = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            polygon = data.get("polygon")
            predictions[(data["doc_id"], data["qa_index"])] = (
                data.get("answer", ""),
                None if polygon is None else PixelPolygon(tuple((x, y) for x, y in polygon)),
            )
    return predictions


# --- infer ---


def prepare_image(image: Image.Image, config: ModelConfig):
    """Grayscale, aspect-preserving resize, centered pad. Returns the float
    array plus the (scale, ox, oy) transform back to source pixels."""
    gray = image.convert("L")
    target_h, target_w = config.image_size
    scale = min(target_w / gray.width, target_h / gray.height)
    new_w = max(1, round(gray.width * scale))
    new_h = max(1, round(gray.height * scale))
    resized = gray.resize((new_w, new_h), Image.BILINEAR)
    canvas = Image.new("L", (target_w, target_h), color=255)
    ox = (target_w - new_w) // 2
    oy = (target_h - new_h) // 2
    canvas.paste(resized, (ox, oy))
    return np.asarray(canvas, dtype=np.float32) / 255.0, (scale, ox, oy)


def cmd_infer(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    try:
        image = Image.open(args.image)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {args.image}: {exc}") from exc
    array, (scale, ox, oy) = prepare_image(image, model.config)
    memory = model.encode_image(array)
    prompt = [model.vocab.vqa_id] + model.vocab.tokenize(args.question)
    result = model.greedy_generate(memory, prompt)
    answer = model.vocab.detokenize(result.token_ids)
    payload = {"answer": answer, "truncated": result.truncated}
    if result.see_hiddens:
        height, width = model.config.image_size
        quant = model.grounding.decode_polygon(result.see_hiddens[0])
        poly_model = dequantize_polygon(quant, width, height)
        poly_source = [((x - ox) / scale, (y - oy) / scale) for x, y in poly_model.points]
        payload["polygon_model_px"] = [[x, y] for x, y in poly_model.points]
        payload["polygon_image_px"] = [[x, y] for x, y in poly_source]
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"answer: {payload['answer']}")
        if "polygon_image_px" in payload:
            pts = ", ".join(f"({x:.1f}, {y:.1f})" for x, y in payload["polygon_image_px"])
            print(f"polygon: {pts}")
    return 0


# --- visualize ---

_PALETTE = (
    (220, 60, 60), (60, 60, 220), (230, 150, 30), (170, 60, 200),
    (40, 170, 190), (120, 90, 40), (230, 90, 150), (90, 130, 230),
)
_GOLD_COLOR = (0, 190, 70)  # gold polygons draw in green


def _draw_polygon(draw: ImageDraw.ImageDraw, polygon: PixelPolygon, color) -> None:
    points = [tuple(p) for p in polygon.points]
    draw.polygon(points, outline=color)


def cmd_visualize(args) -> int:
    records = read_dataset(args.corpus)
    predictions = load_predictions(args.predictions) if args.predictions else {}
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out_dir} is not writable: {exc}") from exc
    written = []
    for record in records:
        overlay = Image.fromarray(record.image, mode="L").convert("RGB")
        draw = ImageDraw.Draw(overlay)
        for index, qa in enumerate(record.qas):
            if qa.grounded and qa.polygon is not None:
                _draw_polygon(draw, qa.polygon, _GOLD_COLOR)
            answer, polygon = predictions.get((record.doc_id, index), (None, None))
            if polygon is not None:
                _draw_polygon(draw, polygon, _PALETTE[index % len(_PALETTE)])
        out_file = out_dir / f"{record.doc_id}.png"
        overlay.save(out_file)
        written.append(out_file.name)
    print(f"wrote {len(written)} overlay image(s) to {out_dir}")
    return 0


# --- ablate ---

ABLATION_SYSTEMS = {
    "T1": {"auxiliary": False, "grounding_mode": "none",
           "see_supervision": "auxiliary_and_downstream"},
    "T2": {"auxiliary": True, "grounding_mode": "none",
           "see_supervision": "auxiliary_and_downstream"},
    "T3": {"auxiliary": True, "grounding_mode": "see_first",
           "see_supervision": "auxiliary_only"},
    "T4": {"auxiliary": True, "grounding_mode": "see_first",
           "see_supervision": "auxiliary_and_downstream"},
}


def run_ablation(config: dict, records, out_dir: Path) -> list[dict]:
    downstream = [r for r in records if r.source != "auxiliary"]
    auxiliary = [r for r in records if r.source == "auxiliary"]
    if not downstream:
        raise DataError("ablation needs downstream documents")
    if not auxiliary:
        raise DataError("ablation needs auxiliary-tagged documents (generate "
                        "with --aux-fraction > 0)")
    thresholds = DEFAULT_THRESHOLDS
    rows = []
    for name, setting in ABLATION_SYSTEMS.items():
        run_config = copy.deepcopy(config)
        run_config["train"]["grounding_mode"] = setting["grounding_mode"]
        run_config["train"]["see_supervision"] = setting["see_supervision"]
        train_config = _train_config(run_config)
        vocab = _vocab_from_config(run_config)
        model = Model(_model_config(run_config, vocab), vocab)
        subset = downstream if not setting["auxiliary"] else records
        train_loop(train_config, model, subset, out_dir=out_dir / name)
        predictions = predict_records(model, downstream)
        report = evaluate_predictions(downstream, predictions, thresholds)
        rows.append({
            "system": name,
            "uses_auxiliary": setting["auxiliary"],
            "grounding_mode": setting["grounding_mode"],
            "see_supervision": setting["see_supervision"],
            "metrics": report.to_dict(),
        })
    return rows


def cmd_ablate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    records = read_dataset(args.corpus)
    out_dir = Path(args.out)
    rows = run_ablation(config, records, out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablate.json").write_text(
        json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(out_dir, "ablate", config, config["train"]["seed"], ["ablate.json"])
    header = f"{'system':<8}{'mode':<12}{'supervision':<28}{'EM':>8}{'F1':>8}{'TED':>8}{'ANLS':>8}"
    print(header)
    for row in rows:
        m = row["metrics"]
        print(f"{row['system']:<8}{row['grounding_mode']:<12}"
              f"{row['see_supervision']:<28}{m['exact_match']:>8.3f}"
              f"{m['f1']:>8.3f}{m['ted_acc']:>8.3f}{m['anls']:>8.3f}")
    return 0


# --- parser / main ---


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="docsee", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("generate", help="render documents and QA into a corpus")
    common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--aux-fraction", dest="aux_fraction", type=float, default=None)
    p.add_argument("--warp", type=float, default=None, help="perspective warp magnitude px")
    p.add_argument("--questions", type=int, default=None, help="questions per document")
    p.add_argument("--llm-config", dest="llm_config", default=None,
                   help="JSON file with candidate-endpoint settings")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--grounding-mode", dest="grounding_mode",
                   choices=["none", "see_first", "see_last"], default=None)
    p.add_argument("--see-supervision", dest="see_supervision",
                   choices=["auxiliary_only", "auxiliary_and_downstream"], default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--tasks", default=None, help="comma list from ocr,read,vqa")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--thresholds", default=None, help="CSV IoU thresholds")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="answer one question about one image")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--question", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("visualize", help="write polygon overlay images")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predictions", default=None, help="predictions.jsonl from eval")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("ablate", help="run the T1..T4 comparison")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, LayoutError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
