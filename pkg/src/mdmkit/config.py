"""Flat key-value run configuration with a closed schema.

The on-disk format is one `section.key = value` assignment per line;
blank lines and lines starting with `#` are ignored. Every key must
appear in the schema below (unknown keys are rejected by name, typos
included) and values are parsed to the declared type. Command-line
`--set section.key=value` overrides are applied on top of the file
before type checking, so a dumped effective config re-loads to
identical behavior.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .errors import SchemaError

__all__ = ["SCHEMA", "parse_config_text", "load_config", "dump_config", "apply_sets"]


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_list(item):
    def parse(raw: str) -> tuple:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(item(p) for p in parts)

    return parse


_CHOICES = {
    "data.task": ("lexicon_swap", "drop_modifiers", "case_style", "jsonl"),
    "decode.mode": ("ancestral", "greedy_topk"),
    "svdd.selection": ("argmax", "soft"),
    "svdd.value_fill": ("argmax_fill", "sample_fill"),
    "verifier.kind": ("none", "hashed", "wordvec", "remote"),
}

# key -> (parser, default). The default is already typed.
SCHEMA: dict = {
    "data.task": (str, "lexicon_swap"),
    "data.jsonl": (str, ""),
    "data.size": (int, 2000),
    "data.max_len": (int, 12),
    "data.seed": (int, 0),
    "data.max_target_len": (int, 0),  # 0 = derive from the corpus
    "model.embed_dim": (int, 64),
    "model.n_layers": (int, 2),
    "model.n_heads": (int, 4),
    "model.ff_dim": (int, 128),
    "train.steps": (int, 2000),
    "train.batch_size": (int, 32),
    "train.peak_lr": (float, 3e-3),
    "train.warmup_steps": (int, 100),
    "train.weight_decay": (float, 0.01),
    "train.ema_decay": (float, 0.999),
    "train.cfg_dropout_prob": (float, 0.1),
    "train.epsilon_min": (float, 1e-5),
    "train.seed": (int, 0),
    "train.grad_clip": (float, 1.0),
    "train.log_every": (int, 50),
    "decode.mode": (str, "ancestral"),
    "decode.steps": (int, 16),
    "decode.gamma": (float, 1.4),
    "decode.seed": (int, 0),
    "decode.use_ema": (_parse_bool, True),
    "svdd.m": (int, 1),
    "svdd.selection": (str, "argmax"),
    "svdd.alpha": (float, 0.0),  # 0 = unset; required > 0 for soft selection
    "svdd.value_fill": (str, "argmax_fill"),
    "verifier.kind": (str, "none"),
    "verifier.dim": (int, 16),
    "verifier.seed": (int, 0),
    "verifier.table": (str, ""),
    "verifier.endpoint": (str, ""),
    "verifier.retries": (int, 3),
    "verifier.backoff": (float, 0.25),
    "verifier.timeout": (float, 10.0),
    "run.out_dir": (str, "runs/default"),
    "run.checkpoint": (str, ""),
    "run.vocab": (str, ""),
    "sweep.steps": (_parse_list(int), (16,)),
    "sweep.gamma": (_parse_list(float), (1.4,)),
    "sweep.m": (_parse_list(int), (1,)),
    "sweep.seeds": (_parse_list(int), (0,)),
    "sweep.jobs": (int, 1),
}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Raw `key = value` pairs from config text; no typing yet."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise SchemaError(f"{origin}: line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise SchemaError(f"{origin}: line {lineno}: empty key")
        if key in raw:
            raise SchemaError(f"{origin}: line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def apply_sets(raw: dict[str, str], sets: Sequence[str]) -> dict[str, str]:
    """Overlay `key=value` override strings onto raw pairs (last wins)."""
    out = dict(raw)
    for item in sets:
        if "=" not in item:
            raise SchemaError(f"--set needs key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


def _typed(raw: Mapping[str, str]) -> dict:
    unknown = sorted(k for k in raw if k not in SCHEMA)
    if unknown:
        raise SchemaError(f"unknown config keys: {', '.join(unknown)}")
    cfg: dict = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = parser(raw[key])
            except ValueError as exc:
                raise SchemaError(f"{key}: cannot parse {raw[key]!r}: {exc}") from exc
        else:
            cfg[key] = default
    for key, choices in _CHOICES.items():
        if cfg[key] not in choices:
            raise SchemaError(
                f"{key}: must be one of {', '.join(choices)}, got {cfg[key]!r}"
            )
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: dict) -> None:
    problems = []
    if cfg["data.task"] == "jsonl" and not cfg["data.jsonl"]:
        problems.append("data.task = jsonl requires data.jsonl")
    if cfg["svdd.m"] > 1 and cfg["verifier.kind"] == "none":
        problems.append("svdd.m > 1 requires a verifier (verifier.kind != none)")
    if cfg["svdd.m"] > 1 and cfg["decode.mode"] != "ancestral":
        problems.append("svdd.m > 1 requires decode.mode = ancestral")
    if cfg["svdd.selection"] == "soft" and not cfg["svdd.alpha"] > 0:
        problems.append("svdd.selection = soft requires svdd.alpha > 0")
    if cfg["svdd.selection"] == "argmax" and cfg["svdd.alpha"] != 0.0:
        problems.append("svdd.alpha is only meaningful with svdd.selection = soft")
    if cfg["verifier.kind"] == "wordvec" and not cfg["verifier.table"]:
        problems.append("verifier.kind = wordvec requires verifier.table")
    for key in ("sweep.steps", "sweep.gamma", "sweep.m", "sweep.seeds"):
        if len(cfg[key]) == 0:
            problems.append(f"{key} must list at least one value")
    if problems:
        raise SchemaError("; ".join(problems))


def load_config(path: str | None, sets: Sequence[str] = ()) -> dict:
    """Typed config from an optional file plus --set overrides."""
    raw: dict[str, str] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            raw = parse_config_text(fh.read(), origin=path)
    raw = apply_sets(raw, sets)
    return _typed(raw)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: Mapping) -> str:
    """Render a typed config back to the file format (round-trips exactly)."""
    lines = [f"{key} = {_format_value(cfg[key])}" for key in SCHEMA]
    return "\n".join(lines) + "\n"
