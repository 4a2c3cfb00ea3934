"""Flat key-value configuration files with repeated ``[stage]`` blocks.

Syntax::

    # comment
    hidden_dim = 64
    [stage]
    split = distant
    loss = ssr-pu
    epochs = 3

Keys before the first ``[stage]`` are top-level; each ``[stage]`` opens a
new stage dictionary. Values parse as bool / int / float when they look
like one, else stay strings.
"""

from __future__ import annotations

from .errors import ConfigError


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> dict:
    top: dict = {}
    stages: list[dict] = []
    current = top
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[stage]":
                raise ConfigError(f"line {line_no}: only [stage] blocks are supported, got {line!r}")
            current = {}
            stages.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        current[key.strip()] = parse_value(value)
    if stages:
        top["stages"] = stages
    return top


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def dump_config(data: dict) -> str:
    """Inverse of parse_config_text for manifest round-trips."""
    lines = []
    for key in sorted(k for k in data if k != "stages"):
        lines.append(f"{key} = {data[key]}")
    for stage in data.get("stages", []):
        lines.append("[stage]")
        for key in sorted(stage):
            lines.append(f"{key} = {stage[key]}")
    return "\n".join(lines) + "\n"
