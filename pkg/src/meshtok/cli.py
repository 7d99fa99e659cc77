"""Single entry point wiring the pipeline: tokenize, detokenize, train,
sample, complete, eval, ppl.

Settings merge as defaults < --config JSON file < explicit flags, and every
output directory receives the fully materialized config as config.json.
Training logs are one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import torch

from . import codec, dataset, metrics, sampling, shards
from .canonical import GridSpec, canonicalize, dequantize, normalize, quantize
from .errors import MeshtokError, NonFiniteLossError
from .geometry_io import parse_obj, write_obj
from .model import (
    CoordinateLM,
    ModelConfig,
    TrainConfig,
    Trainer,
    load_checkpoint,
    perplexity,
    save_checkpoint,
)


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """defaults < config file < explicit flags; returns the materialized dict."""
    merged = dict(parser_defaults)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_conf = json.load(fh)
        unknown = set(file_conf) - set(parser_defaults)
        if unknown:
            raise MeshtokError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_conf)
    for key, default in parser_defaults.items():
        value = getattr(args, key)
        if value != default:  # flag explicitly given
            merged[key] = value
    return merged


def _write_config(out_dir: Path, command: str, conf: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, **{k: v for k, v in conf.items() if k != "config"}}
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)


def _collect_objs(directory: str) -> list[str]:
    root = Path(directory)
    if not root.is_dir():
        raise MeshtokError(f"not a directory: {directory}")
    return sorted(str(p) for p in root.glob("*.obj"))


def _shard_paths(spec: str) -> list[str]:
    path = Path(spec)
    if path.is_dir():
        found = sorted(str(p) for p in path.glob("*.mxtk"))
        if not found:
            raise MeshtokError(f"no .mxtk shards in {spec}")
        return found
    if not path.exists():
        raise MeshtokError(f"no such shard: {spec}")
    return [str(path)]


def cmd_tokenize(args, defaults) -> int:
    conf = _merge_config(args, defaults)
    out_dir = Path(conf["output"])
    result = dataset.tokenize_corpus(
        _collect_objs(conf["input"]),
        out_dir,
        grid=GridSpec(conf["grid"]),
        max_faces=conf["max_faces"],
        augment_copies=conf["augment"],
        seed=conf["seed"],
        mode=conf["mode"],
        component_order=conf["component_order"],
        val_fraction=conf["val_fraction"],
        shard_size=conf["shard_size"],
    )
    _write_config(out_dir, "tokenize", conf)
    for failure in result.failures:
        print(f"skipped: {failure}", file=sys.stderr)
    print(
        json.dumps(
            {
                "shards": [p.name for p in result.shard_paths],
                "packed": result.n_packed,
                "rejected": result.n_rejected,
                "failed": len(result.failures),
            }
        )
    )
    return 0


def cmd_detokenize(args, defaults) -> int:
    conf = _merge_config(args, defaults)
    reader = shards.ShardReader(conf["shard"])
    seq = reader[conf["index"]]
    vocab = reader.vocabulary
    if conf["permissive"]:
        qmesh, info = codec.decode_partial(seq, vocab, strict=False, component_order=conf["component_order"])
        if info.tokens_discarded:
            print(f"discarded {info.tokens_discarded} trailing tokens", file=sys.stderr)
    else:
        qmesh = codec.decode(seq, vocab, strict=True, component_order=conf["component_order"])
    mesh = dequantize(qmesh)
    with open(conf["output"], "wb") as fh:
        fh.write(write_obj(mesh))
    print(json.dumps({"faces": qmesh.n_faces, "output": conf["output"]}))
    return 0


def _load_sequences(data_spec: str):
    sequences, vocab, mode = shards.read_all(_shard_paths(data_spec))
    if not sequences:
        raise MeshtokError("no sequences in the given shards")
    return sequences, vocab, mode


def cmd_train(args, defaults) -> int:
    conf = _merge_config(args, defaults)
    if conf["preset"] == "overfit":
        for key, value in (("peak_lr", 1e-3), ("target_nll", 0.028)):
            if conf[key] == defaults[key]:
                conf[key] = value
    sequences, vocab, _ = _load_sequences(conf["data"])

    class_ids = None
    n_classes = 0
    if conf["classes"]:
        with open(conf["classes"], "r", encoding="utf-8") as fh:
            class_ids = json.load(fh)
        if len(class_ids) != len(sequences):
            raise MeshtokError(f"{len(class_ids)} class ids for {len(sequences)} sequences")
        n_classes = max(class_ids) + 1

    longest = max(len(s) for s in sequences)
    prefix = conf["prefix_length"] if n_classes > 0 else 0
    if conf["context"] < longest + prefix:
        raise MeshtokError(f"context {conf['context']} too small for sequences of {longest} tokens")

    model_config = ModelConfig(
        vocab_size=vocab.size,
        d_model=conf["d_model"],
        d_ffn=conf["d_ffn"],
        n_layers=conf["layers"],
        n_heads=conf["heads"],
        context_length=conf["context"],
        prefix_length=conf["prefix_length"],
        n_classes=n_classes,
        dropout=conf["dropout"],
        seed=conf["seed"],
    )
    train_config = TrainConfig(
        total_steps=conf["steps"],
        batch_size=conf["batch_size"],
        peak_lr=conf["peak_lr"],
        final_lr=conf["final_lr"],
        weight_decay=conf["weight_decay"],
        grad_clip=conf["grad_clip"],
        seed=conf["seed"],
        target_nll=conf["target_nll"],
    )

    start_step = 0
    if conf["resume"]:
        model, start_step, _ = load_checkpoint(conf["resume"])
        if model.config.vocab_size != vocab.size:
            raise MeshtokError("checkpoint vocabulary does not match the data shards")
    else:
        model = CoordinateLM(model_config)

    out_dir = Path(conf["out"])
    _write_config(out_dir, "train", conf)
    trainer = Trainer(model, train_config, vocab, step=start_step)
    log_path = out_dir / "train_log.jsonl"
    value = float("nan")

    with open(log_path, "a", encoding="utf-8") as log:
        while trainer.step < train_config.total_steps:
            idx = trainer.draw_batch(len(sequences))
            batch = [sequences[i] for i in idx]
            ids = None if class_ids is None else [class_ids[i] for i in idx]
            tokens_in_batch = sum(len(s) for s in batch)
            tic = time.perf_counter()
            try:
                value = trainer.train_step(batch, class_ids=ids)
            except NonFiniteLossError as exc:
                print(f"aborted: {exc}", file=sys.stderr)
                return 1
            took = time.perf_counter() - tic
            record = {
                "step": trainer.step,
                "loss": value,
                "lr": trainer.optimizer.param_groups[0]["lr"],
                "tokens_per_s": tokens_in_batch / took if took > 0 else None,
            }
            log.write(json.dumps(record) + "\n")
            if trainer.step % conf["log_every"] == 0 or trainer.step == train_config.total_steps:
                print(json.dumps(record))
            if train_config.target_nll is not None and value < train_config.target_nll:
                print(json.dumps({"early_stop": trainer.step, "loss": value}))
                break

    ckpt = out_dir / "ckpt.mxck"
    save_checkpoint(ckpt, model, step=trainer.step, extra={"final_loss": value})
    print(json.dumps({"checkpoint": str(ckpt), "step": trainer.step, "final_loss": value}))
    return 0


def _sampled_mesh_to_obj(seq, vocab, component_order: str):
    qmesh = codec.decode(seq, vocab, strict=True, component_order=component_order)
    return write_obj(dequantize(qmesh)), qmesh.n_faces


def cmd_sample(args, defaults) -> int:
    conf = _merge_config(args, defaults)
    model, _, _ = load_checkpoint(conf["ckpt"])
    vocab = codec.Vocabulary(model.config.vocab_size - 7)
    out_dir = Path(conf["out"])
    _write_config(out_dir, "sample", conf)
    results = []
    for i in range(conf["num"]):
        res = sampling.sample(
            model,
            vocab,
            top_k=conf["top_k"],
            top_p=conf["top_p"],
            max_tokens=conf["max_tokens"],
            seed=conf["seed"],
            stream=i,
            constrained=conf["constrained"],
            class_id=conf["class_id"],
        )
        record = {"index": i, "n_tokens": res.n_tokens, "truncated": res.truncated}
        with open(out_dir / f"sample_{i:04d}.tokens.json", "w", encoding="utf-8") as fh:
            json.dump(res.sequence.tokens.tolist(), fh)
        report = codec.validate(res.sequence, vocab)
        record["valid"] = report.valid
        if report.valid:
            payload, n_faces = _sampled_mesh_to_obj(res.sequence, vocab, conf["component_order"])
            obj_path = out_dir / f"sample_{i:04d}.obj"
            with open(obj_path, "wb") as fh:
                fh.write(payload)
            record.update({"obj": obj_path.name, "faces": n_faces})
        else:
            record.update({"obj": None, "violation": report.first_violation})
        results.append(record)
    with open(out_dir / "results.jsonl", "w", encoding="utf-8") as fh:
        for record in results:
            fh.write(json.dumps(record) + "\n")
    print(json.dumps({"samples": len(results), "valid": sum(r["valid"] for r in results)}))
    return 0


def cmd_complete(args, defaults) -> int:
    conf = _merge_config(args, defaults)
    model, _, _ = load_checkpoint(conf["ckpt"])
    vocab = codec.Vocabulary(model.config.vocab_size - 7)
    with open(conf["input"], "rb") as fh:
        mesh = parse_obj(fh.read(), source_id=Path(conf["input"]).stem)
    norm, _ = normalize(mesh)
    qmesh = canonicalize(quantize(norm, GridSpec(vocab.grid_resolution)))
    full = codec.encode(qmesh, vocab, component_order=conf["component_order"], max_faces=10**9)
    prompt = sampling.prompt_from_sequence(full, vocab, conf["prefix_ratio"])

    out_dir = Path(conf["out"])
    _write_config(out_dir, "complete", conf)
    results = []
    for i in range(conf["num"]):
        res = sampling.complete(
            model,
            vocab,
            prompt,
            top_k=conf["top_k"],
            top_p=conf["top_p"],
            max_tokens=conf["max_tokens"],
            seed=conf["seed"],
            stream=i,
            constrained=conf["constrained"],
            class_id=conf["class_id"],
        )
        record = {"index": i, "n_tokens": res.n_tokens, "truncated": res.truncated,
                  "prompt_tokens": len(prompt)}
        with open(out_dir / f"complete_{i:04d}.tokens.json", "w", encoding="utf-8") as fh:
            json.dump(res.sequence.tokens.tolist(), fh)
        report = codec.validate(res.sequence, vocab)
        record["valid"] = report.valid
        if report.valid:
            payload, n_faces = _sampled_mesh_to_obj(res.sequence, vocab, conf["component_order"])
            obj_path = out_dir / f"complete_{i:04d}.obj"
            with open(obj_path, "wb") as fh:
                fh.write(payload)
            record.update({"obj": obj_path.name, "faces": n_faces})
        else:
            record.update({"obj": None, "violation": report.first_violation})
        results.append(record)
    with open(out_dir / "results.jsonl", "w", encoding="utf-8") as fh:
        for record in results:
            fh.write(json.dumps(record) + "\n")
    print(json.dumps({"completions": len(results), "valid": sum(r["valid"] for r in results)}))
    return 0


def cmd_eval(args, defaults) -> int:
    conf = _merge_config(args, defaults)
    def load_set(directory):
        meshes = []
        skipped = []
        for path in _collect_objs(directory):
            try:
                with open(path, "rb") as fh:
                    meshes.append(parse_obj(fh.read(), source_id=Path(path).stem))
            except MeshtokError as exc:
                skipped.append(f"{path}: {exc}")
        return meshes, skipped

    gen_meshes, gen_skipped = load_set(conf["gen"])
    ref_meshes, ref_skipped = load_set(conf["ref"])
    report = metrics.evaluate(
        gen_meshes,
        ref_meshes,
        n_points=conf["points"],
        seed=conf["seed"],
        jsd_grid=conf["jsd_grid"],
        matrix_path=conf["matrix"],
    )
    report.excluded_gen = gen_skipped + report.excluded_gen
    report.excluded_ref = ref_skipped + report.excluded_ref
    text = report.to_json()
    if conf["out"]:
        out_path = Path(conf["out"])
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_ppl(args, defaults) -> int:
    conf = _merge_config(args, defaults)
    model, _, _ = load_checkpoint(conf["ckpt"])
    vocab = codec.Vocabulary(model.config.vocab_size - 7)
    sequences, data_vocab, _ = _load_sequences(conf["data"])
    if data_vocab.size != vocab.size:
        raise MeshtokError("checkpoint vocabulary does not match the data shards")
    value = perplexity(model, sequences, vocab, batch_size=conf["batch_size"])
    total_tokens = int(sum(len(s) for s in sequences))
    print(json.dumps({"ppl": value, "sequences": len(sequences), "tokens": total_tokens}))
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat JSON config file; flags override")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshtok", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="OBJ directory -> token shards + manifest")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--max-faces", dest="max_faces", type=int, default=800)
    p.add_argument("--augment", type=int, default=0, help="augmented copies per mesh")
    p.add_argument("--mode", choices=codec.GRAMMAR_MODES, default=codec.TRIANGLE)
    p.add_argument("--component-order", dest="component_order", choices=codec.COMPONENT_ORDERS, default="xyz")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.0)
    p.add_argument("--shard-size", dest="shard_size", type=int, default=4096)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("detokenize", help="shard sequence -> OBJ")
    _add_common(p)
    p.add_argument("--shard", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--permissive", action="store_true")
    p.add_argument("--component-order", dest="component_order", choices=codec.COMPONENT_ORDERS, default="xyz")
    p.set_defaults(func=cmd_detokenize)

    p = sub.add_parser("train", help="train the next-coordinate model on shards")
    _add_common(p)
    p.add_argument("--data", required=True, help="shard file or directory of shards")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["desk", "overfit"], default="desk")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-model", dest="d_model", type=int, default=256)
    p.add_argument("--d-ffn", dest="d_ffn", type=int, default=1024)
    p.add_argument("--context", type=int, default=1024)
    p.add_argument("--prefix-length", dest="prefix_length", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--peak-lr", dest="peak_lr", type=float, default=1e-4)
    p.add_argument("--final-lr", dest="final_lr", type=float, default=1e-6)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=0.1)
    p.add_argument("--grad-clip", dest="grad_clip", type=float, default=1.0)
    p.add_argument("--target-nll", dest="target_nll", type=float, default=None)
    p.add_argument("--classes", default=None, help="JSON list of per-sequence class ids")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--log-every", dest="log_every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw sequences from a checkpoint and write OBJs")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--num", type=int, default=1)
    p.add_argument("--top-k", dest="top_k", type=int, default=50)
    p.add_argument("--top-p", dest="top_p", type=float, default=0.95)
    p.add_argument("--max-tokens", dest="max_tokens", type=int, default=None)
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--class-id", dest="class_id", type=int, default=None)
    p.add_argument("--component-order", dest="component_order", choices=codec.COMPONENT_ORDERS, default="xyz")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("complete", help="complete a mesh from a face-prefix prompt")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--prefix-ratio", dest="prefix_ratio", type=float, default=0.5)
    p.add_argument("--num", type=int, default=1)
    p.add_argument("--top-k", dest="top_k", type=int, default=50)
    p.add_argument("--top-p", dest="top_p", type=float, default=0.95)
    p.add_argument("--max-tokens", dest="max_tokens", type=int, default=None)
    p.add_argument("--constrained", action="store_true")
    p.add_argument("--class-id", dest="class_id", type=int, default=None)
    p.add_argument("--component-order", dest="component_order", choices=codec.COMPONENT_ORDERS, default="xyz")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", help="COV/MMD/1-NNA/JSD of generated vs reference OBJ sets")
    _add_common(p)
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--jsd-grid", dest="jsd_grid", type=int, default=28)
    p.add_argument("--matrix", default=None, help="optional path for the f32 distance-matrix dump")
    p.add_argument("--out", default=None, help="optional path for the report JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ppl", help="perplexity of a checkpoint over shards")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    p.set_defaults(func=cmd_ppl)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("MESHTOK_NUM_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = {
        key: parser_action.default
        for parser_action in _subparser_actions(parser, args.command)
        for key in [parser_action.dest]
        if key not in ("help", "func", "command")
    }
    try:
        return args.func(args, defaults)
    except MeshtokError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1
    except ValueError as exc:
        print(json.dumps({"error": "invalid-argument", "message": str(exc)}), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(json.dumps({"error": "not-found", "message": str(exc)}), file=sys.stderr)
        return 1


def _subparser_actions(parser: argparse.ArgumentParser, command: str):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sub in action.choices.items():
                if name == command:
                    yield from sub._actions


if __name__ == "__main__":
    sys.exit(main())
