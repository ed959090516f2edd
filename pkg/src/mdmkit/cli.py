"""Command-line surface: train, decode, sweep, eval.

    mdm train  --config run.cfg [--set key=value]...
    mdm decode --config run.cfg --input in.jsonl --output out.jsonl
    mdm sweep  --config run.cfg --input test.jsonl --csv sweep.csv
    mdm eval   --candidates out.jsonl [--candidates out2.jsonl ...]
               --references test.jsonl [--sources test.jsonl] [--out report.json]

Exit codes: 0 success, 1 usage or configuration error, 2 runtime
failure. Every command is deterministic given its config and seeds
(the remote verifier excepted). `MDM_EMBED_ENDPOINT` overrides the
configured remote endpoint.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from typing import Sequence

import numpy as np

from .config import dump_config, load_config
from .corpus import (
    PairExample,
    Vocab,
    build_vocab,
    detokenize,
    gen_synthetic_task,
    layout,
    read_jsonl,
    read_vocab,
    tokenize,
    write_vocab,
)
from .denoiser import ArchConfig, TinyDenoiser, load_checkpoint, save_checkpoint
from .errors import FormatError, MdmError, SchemaError
from .metrics import aggregate_runs, bleu, exact_match, rouge_l_corpus, sari
from .sampler import DecodeConfig, ancestral_decode, greedy_topk_decode
from .svdd import SvddConfig, svdd_decode
from .training import TrainConfig, train
from .verifier import (
    Embedder,
    HashedEmbedder,
    RemoteEmbedder,
    WordVecEmbedder,
    cosine_reward,
    load_wordvec_table,
)

__all__ = ["main", "cmd_train", "cmd_decode", "cmd_sweep", "cmd_eval"]


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_pairs(cfg: dict) -> list[PairExample]:
    if cfg["data.task"] == "jsonl":
        return read_jsonl(cfg["data.jsonl"])
    rng = np.random.default_rng(cfg["data.seed"])
    return gen_synthetic_task(
        cfg["data.task"], cfg["data.size"], rng, max_len=cfg["data.max_len"]
    )


def _max_target_len(cfg: dict, pairs: Sequence[PairExample]) -> int:
    configured = cfg["data.max_target_len"]
    if configured > 0:
        return configured
    return max(len(p.target) for p in pairs)


def _build_embedder(cfg: dict) -> Embedder | None:
    kind = cfg["verifier.kind"]
    if kind == "none":
        return None
    if kind == "hashed":
        return HashedEmbedder(dim=cfg["verifier.dim"], seed=cfg["verifier.seed"])
    if kind == "wordvec":
        return WordVecEmbedder(load_wordvec_table(cfg["verifier.table"]))
    if kind == "remote":
        endpoint = os.environ.get("MDM_EMBED_ENDPOINT", "") or cfg["verifier.endpoint"]
        if not endpoint:
            raise SchemaError(
                "verifier.kind = remote needs verifier.endpoint or MDM_EMBED_ENDPOINT"
            )
        return RemoteEmbedder(
            endpoint=endpoint,
            retries=cfg["verifier.retries"],
            backoff=cfg["verifier.backoff"],
            timeout=cfg["verifier.timeout"],
        )
    raise SchemaError(f"unknown verifier.kind {kind!r}")


def cmd_train(cfg: dict) -> int:
    pairs = _load_pairs(cfg)
    vocab = build_vocab(pairs)
    max_target = _max_target_len(cfg, pairs)
    layouts = [layout(p, vocab, max_target_len=max_target) for p in pairs]
    max_len = max(s.tokens.shape[0] for s in layouts)
    arch = ArchConfig(
        vocab_size=vocab.size,
        max_len=max_len,
        embed_dim=cfg["model.embed_dim"],
        n_layers=cfg["model.n_layers"],
        n_heads=cfg["model.n_heads"],
        ff_dim=cfg["model.ff_dim"],
    )
    train_cfg = TrainConfig(
        steps=cfg["train.steps"],
        batch_size=cfg["train.batch_size"],
        peak_lr=cfg["train.peak_lr"],
        warmup_steps=cfg["train.warmup_steps"],
        weight_decay=cfg["train.weight_decay"],
        ema_decay=cfg["train.ema_decay"],
        cfg_dropout_prob=cfg["train.cfg_dropout_prob"],
        epsilon_min=cfg["train.epsilon_min"],
        seed=cfg["train.seed"],
        grad_clip=cfg["train.grad_clip"],
        log_every=cfg["train.log_every"],
    )
    out_dir = cfg["run.out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    result = train(
        layouts, arch, vocab, train_cfg, log_path=os.path.join(out_dir, "train_log.csv")
    )
    write_vocab(vocab, os.path.join(out_dir, "vocab.txt"))
    save_checkpoint(os.path.join(out_dir, "model.ckpt"), arch, result.params)
    save_checkpoint(os.path.join(out_dir, "model_ema.ckpt"), arch, result.ema_params)
    _atomic_write_text(
        os.path.join(out_dir, "meta.json"),
        json.dumps({"max_target_len": max_target, "task": cfg["data.task"]}, sort_keys=True)
        + "\n",
    )
    _atomic_write_text(os.path.join(out_dir, "config.resolved"), dump_config(cfg))
    final = result.records[-1]
    print(
        f"trained {train_cfg.steps} steps; final loss {final.loss:.6f}; "
        f"artifacts in {out_dir}"
    )
    return 0


def _resolve_checkpoint(cfg: dict) -> tuple[str, str]:
    ckpt = cfg["run.checkpoint"]
    if not ckpt:
        name = "model_ema.ckpt" if cfg["decode.use_ema"] else "model.ckpt"
        ckpt = os.path.join(cfg["run.out_dir"], name)
    vocab_path = cfg["run.vocab"] or os.path.join(os.path.dirname(ckpt), "vocab.txt")
    return ckpt, vocab_path


def _decode_target_len(cfg: dict, ckpt_path: str) -> int:
    if cfg["data.max_target_len"] > 0:
        return cfg["data.max_target_len"]
    meta_path = os.path.join(os.path.dirname(ckpt_path), "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            return int(json.load(fh)["max_target_len"])
    raise SchemaError(
        "cannot determine target length: set data.max_target_len or keep the "
        "checkpoint next to its meta.json"
    )


def _read_sources(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                raise FormatError(f"{path}: line {lineno}: blank line")
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if "source" not in row:
                raise FormatError(f"{path}: line {lineno}: missing 'source' field")
            rows.append(row)
    return rows


def _condition_tokens(source: str, vocab: Vocab) -> np.ndarray:
    ids = tokenize(source.split(), vocab)
    return np.concatenate([ids, np.asarray([vocab.sep_id], dtype=np.int64)])


def _decode_one(
    denoiser: TinyDenoiser,
    condition: np.ndarray,
    decode_cfg: DecodeConfig,
    svdd_cfg: SvddConfig,
    embedder: Embedder | None,
    rng: np.random.Generator,
) -> np.ndarray:
    if svdd_cfg.M > 1:
        assert embedder is not None  # enforced by config cross-validation
        return svdd_decode(denoiser, condition, decode_cfg, svdd_cfg, embedder, rng)
    if decode_cfg.mode == "greedy_topk":
        return greedy_topk_decode(denoiser, condition, decode_cfg)
    return ancestral_decode(denoiser, condition, decode_cfg, rng)


def cmd_decode(cfg: dict, input_path: str, output_path: str) -> int:
    ckpt_path, vocab_path = _resolve_checkpoint(cfg)
    arch, params = load_checkpoint(ckpt_path)
    vocab = read_vocab(vocab_path)
    denoiser = TinyDenoiser(arch, params, vocab)
    target_len = _decode_target_len(cfg, ckpt_path)
    decode_cfg = DecodeConfig(
        T=cfg["decode.steps"],
        target_len=target_len,
        gamma=cfg["decode.gamma"],
        seed=cfg["decode.seed"],
        mode=cfg["decode.mode"],
    )
    svdd_cfg = SvddConfig(
        M=cfg["svdd.m"],
        selection=cfg["svdd.selection"],
        alpha=cfg["svdd.alpha"] if cfg["svdd.selection"] == "soft" else None,
        value_fill=cfg["svdd.value_fill"],
    )
    embedder = _build_embedder(cfg)
    rows = _read_sources(input_path)
    out_lines = []
    for i, row in enumerate(rows):
        condition = _condition_tokens(row["source"], vocab)
        if condition.shape[0] + target_len > arch.max_len:
            raise MdmError(
                f"{input_path}: line {i + 1}: source too long for the checkpoint "
                f"({condition.shape[0]} + {target_len} > {arch.max_len})"
            )
        rng = np.random.default_rng([decode_cfg.seed, i])
        target = _decode_one(denoiser, condition, decode_cfg, svdd_cfg, embedder, rng)
        output = detokenize(target, vocab)
        record: dict = {"source": row["source"], "output": output}
        if embedder is not None:
            vecs = embedder.embed([output, row["source"]])
            record["reward"] = cosine_reward(vecs[0], vecs[1])
        out_lines.append(json.dumps(record, sort_keys=True))
    _atomic_write_text(output_path, "".join(line + "\n" for line in out_lines))
    print(f"decoded {len(rows)} inputs -> {output_path}")
    return 0


_SWEEP_COLUMNS = [
    "steps", "gamma", "m", "seed", "n_examples",
    "bleu", "rouge_l", "exact_match", "reward_mean", "status",
]


def _read_sweep_rows(csv_path: str) -> list[dict]:
    if not os.path.exists(csv_path):
        return []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _write_sweep_rows(csv_path: str, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_SWEEP_COLUMNS)
    writer.writeheader()
    writer.writerows(rows)
    _atomic_write_text(csv_path, buf.getvalue())


def cmd_sweep(cfg: dict, input_path: str, csv_path: str) -> int:
    ckpt_path, vocab_path = _resolve_checkpoint(cfg)
    arch, params = load_checkpoint(ckpt_path)
    vocab = read_vocab(vocab_path)
    denoiser = TinyDenoiser(arch, params, vocab)
    target_len = _decode_target_len(cfg, ckpt_path)
    embedder = _build_embedder(cfg)
    rows = _read_sources(input_path)
    for i, row in enumerate(rows):
        if "target" not in row:
            raise FormatError(f"{input_path}: line {i + 1}: missing 'target' field")

    done_rows = _read_sweep_rows(csv_path)
    done_keys = {(r["steps"], r["gamma"], r["m"], r["seed"]) for r in done_rows}
    references = [[row["target"].split()] for row in rows]
    sweep_m = cfg["sweep.m"]
    if any(m > 1 for m in sweep_m) and embedder is None:
        raise SchemaError("sweep.m includes M > 1 but no verifier is configured")

    total = 0
    skipped = 0
    for steps in cfg["sweep.steps"]:
        for gamma in cfg["sweep.gamma"]:
            for m in sweep_m:
                for seed in cfg["sweep.seeds"]:
                    total += 1
                    key = (str(steps), repr(float(gamma)), str(m), str(seed))
                    if key in done_keys:
                        skipped += 1
                        continue
                    record = dict.fromkeys(_SWEEP_COLUMNS, "")
                    record.update(
                        steps=str(steps), gamma=repr(float(gamma)),
                        m=str(m), seed=str(seed), n_examples=str(len(rows)),
                    )
                    try:
                        decode_cfg = DecodeConfig(
                            T=steps, target_len=target_len, gamma=gamma,
                            seed=seed, mode=cfg["decode.mode"],
                        )
                        svdd_cfg = SvddConfig(
                            M=m,
                            selection=cfg["svdd.selection"],
                            alpha=cfg["svdd.alpha"]
                            if cfg["svdd.selection"] == "soft"
                            else None,
                            value_fill=cfg["svdd.value_fill"],
                        )
                        outputs = []
                        rewards = []
                        for i, row in enumerate(rows):
                            condition = _condition_tokens(row["source"], vocab)
                            rng = np.random.default_rng([seed, i])
                            target = _decode_one(
                                denoiser, condition, decode_cfg, svdd_cfg, embedder, rng
                            )
                            output = detokenize(target, vocab)
                            outputs.append(output.split())
                            if embedder is not None:
                                vecs = embedder.embed([output, row["source"]])
                                rewards.append(cosine_reward(vecs[0], vecs[1]))
                        record.update(
                            bleu=repr(bleu(outputs, references)),
                            rouge_l=repr(rouge_l_corpus(outputs, references)),
                            exact_match=repr(exact_match(outputs, references)),
                            reward_mean=repr(float(np.mean(rewards))) if rewards else "",
                            status="ok",
                        )
                    except MdmError as exc:
                        record["status"] = f"error: {exc}"
                    done_rows.append(record)
                    done_keys.add(key)
                    _write_sweep_rows(csv_path, done_rows)
    print(f"sweep: {total} cells ({skipped} already present) -> {csv_path}")
    return 0


def _read_field_tokens(path: str, field: str) -> list[list[str]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                raise FormatError(f"{path}: line {lineno}: blank line")
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if field not in row:
                raise FormatError(f"{path}: line {lineno}: missing {field!r} field")
            out.append(str(row[field]).split())
    return out


def cmd_eval(
    candidate_paths: Sequence[str],
    references_path: str,
    sources_path: str | None,
    out_path: str | None,
) -> int:
    references_flat = _read_field_tokens(references_path, "target")
    references = [[r] for r in references_flat]
    sources = _read_field_tokens(sources_path, "source") if sources_path else None
    per_run: dict[str, list[float]] = {
        "bleu": [], "rouge_l": [], "exact_match": [],
    }
    if sources is not None:
        per_run["sari"] = []
    for path in candidate_paths:
        candidates = _read_field_tokens(path, "output")
        if len(candidates) != len(references):
            raise FormatError(
                f"{path}: {len(candidates)} candidates vs "
                f"{len(references)} references"
            )
        per_run["bleu"].append(bleu(candidates, references))
        per_run["rouge_l"].append(rouge_l_corpus(candidates, references))
        per_run["exact_match"].append(exact_match(candidates, references))
        if sources is not None:
            if len(sources) != len(candidates):
                raise FormatError(
                    f"{sources_path}: {len(sources)} sources vs "
                    f"{len(candidates)} candidates"
                )
            per_run["sari"].append(sari(sources, candidates, references))
    report = aggregate_runs(per_run)
    print("scores computed on whitespace tokens of the decoded text")
    print(report.format_table())
    payload = json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    if out_path:
        _atomic_write_text(out_path, payload)
        print(f"report written to {out_path}")
    else:
        print(payload, end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdm",
        description="Masked diffusion language modeling toolkit (desk scale).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="path to a key=value config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )

    p_train = sub.add_parser("train", help="train a denoiser")
    add_config(p_train)

    p_decode = sub.add_parser("decode", help="decode a JSONL of sources")
    add_config(p_decode)
    p_decode.add_argument("--input", required=True)
    p_decode.add_argument("--output", required=True)

    p_sweep = sub.add_parser("sweep", help="factorial decode+eval grid")
    add_config(p_sweep)
    p_sweep.add_argument("--input", required=True)
    p_sweep.add_argument("--csv", required=True)

    p_eval = sub.add_parser("eval", help="score candidate files against references")
    p_eval.add_argument(
        "--candidates", action="append", required=True,
        help="decode output JSONL; repeat for multiple runs",
    )
    p_eval.add_argument("--references", required=True)
    p_eval.add_argument("--sources", default=None)
    p_eval.add_argument("--out", default=None, help="write the JSON report here")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "eval":
            return cmd_eval(args.candidates, args.references, args.sources, args.out)
        cfg = load_config(args.config, args.set)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "decode":
            return cmd_decode(cfg, args.input, args.output)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.input, args.csv)
        raise AssertionError(f"unhandled command {args.command}")
    except (SchemaError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MdmError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
