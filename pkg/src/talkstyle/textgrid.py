"""Reader/writer for the long (text) Praat TextGrid format, interval tiers only."""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field


class TextGridError(ValueError):
    pass


class MissingTierError(TextGridError):
    pass


class NumericFieldError(TextGridError):
    pass


@dataclass
class Interval:
    xmin: float
    xmax: float
    text: str


@dataclass
class IntervalTier:
    name: str
    xmin: float
    xmax: float
    intervals: list[Interval] = field(default_factory=list)


_FIELD = re.compile(r'^\s*(\w+)\s*=\s*(.*?)\s*$')


def _number(raw: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise NumericFieldError(f"{where}: cannot parse number {raw!r}") from None


def _string(raw: str) -> str:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == '"' and raw[-1] == '"':
        return raw[1:-1].replace('""', '"')
    return raw


def read_textgrid(path: str | os.PathLike) -> dict[str, IntervalTier]:
    """Parse a long-form TextGrid into ``{tier name: tier}``."""
    with open(path, encoding="utf-8-sig") as fh:
        lines = fh.read().splitlines()
    if not lines or "ooTextFile" not in lines[0]:
        raise TextGridError(f"{path}: not a long-form TextGrid")
    tiers: dict[str, IntervalTier] = {}
    tier: IntervalTier | None = None
    cur: dict | None = None
    for lineno, line in enumerate(lines, 1):
        where = f"{path}:{lineno}"
        stripped = line.strip()
        if stripped.startswith("item [") and stripped.endswith("]:"):
            tier, cur = None, None
            continue
        if stripped.startswith("intervals [") and tier is not None:
            cur = {}
            continue
        m = _FIELD.match(line)
        if not m:
            continue
        key, val = m.group(1), m.group(2)
        if key == "class" and _string(val) == "IntervalTier":
            tier = IntervalTier("", 0.0, 0.0)
            cur = None
        elif tier is None:
            continue
        elif cur is None:
            if key == "name":
                tier.name = _string(val)
                tiers[tier.name] = tier
            elif key == "xmin":
                tier.xmin = _number(val, where)
            elif key == "xmax":
                tier.xmax = _number(val, where)
        else:
            if key in ("xmin", "xmax"):
                cur[key] = _number(val, where)
            elif key == "text":
                if "xmin" not in cur or "xmax" not in cur:
                    raise TextGridError(f"{where}: interval text before bounds")
                tier.intervals.append(Interval(cur["xmin"], cur["xmax"], _string(val)))
                cur = None
    return tiers


def write_textgrid(path: str | os.PathLike, tiers: list[IntervalTier]) -> None:
    xmin = min(t.xmin for t in tiers)
    xmax = max(t.xmax for t in tiers)
    out = ['File type = "ooTextFile"', 'Object class = "TextGrid"', "",
           f"xmin = {xmin!r}", f"xmax = {xmax!r}", "tiers? <exists> ",
           f"size = {len(tiers)}", "item []:"]
    for i, tier in enumerate(tiers, 1):
        out += [f"    item [{i}]:", '        class = "IntervalTier" ',
                f'        name = "{tier.name}" ', f"        xmin = {tier.xmin!r} ",
                f"        xmax = {tier.xmax!r} ",
                f"        intervals: size = {len(tier.intervals)} "]
        for j, iv in enumerate(tier.intervals, 1):
            text = iv.text.replace('"', '""')
            out += [f"        intervals [{j}]:", f"            xmin = {iv.xmin!r} ",
                    f"            xmax = {iv.xmax!r} ", f'            text = "{text}" ']
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
