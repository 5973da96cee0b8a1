"""Extended-XYZ trajectories with energies and forces, and plain point clouds."""
import re
import shlex

import numpy as np

from .injector import Configuration

_KV = re.compile(r"^([A-Za-z_][\w-]*)=(.*)$")
PROPERTIES = "Properties=species:S:1:pos:R:3:forces:R:3"


class XYZParseError(ValueError):
    pass


def _fmt(x):
    return f"{x:.10g}"


def parse_comment(line):
    """Parse ``key=value`` tokens of an extended-XYZ comment line."""
    out = {}
    try:
        tokens = shlex.split(line)
    except ValueError as exc:
        raise XYZParseError(f"bad comment line: {line!r}") from exc
    for tok in tokens:
        m = _KV.match(tok)
        if m:
            out[m.group(1).lower()] = m.group(2)
    return out


def read_xyz(path):
    """Read every frame of an extended-XYZ file into ``Configuration`` objects."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    frames, pos = [], 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        try:
            n = int(lines[pos].strip())
        except ValueError as exc:
            raise XYZParseError(f"line {pos + 1}: expected atom count, got {lines[pos]!r}") from exc
        if pos + 2 + n > len(lines):
            raise XYZParseError(f"line {pos + 1}: truncated frame")
        meta = parse_comment(lines[pos + 1])
        if "energy" not in meta:
            raise XYZParseError(f"line {pos + 2}: comment line has no energy= key")
        symbols, data = [], []
        for k in range(n):
            parts = lines[pos + 2 + k].split()
            if len(parts) != 7:
                raise XYZParseError(f"line {pos + 3 + k}: expected 'symbol x y z fx fy fz'")
            symbols.append(parts[0])
            try:
                data.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise XYZParseError(f"line {pos + 3 + k}: non-numeric field") from exc
        data = np.array(data).reshape(n, 6)
        try:
            energy = float(meta["energy"])
        except ValueError as exc:
            raise XYZParseError(f"line {pos + 2}: bad energy value") from exc
        frames.append(Configuration(data[:, :3], energy, data[:, 3:], symbols))
        pos += 2 + n
    return frames


def format_xyz(frames):
    out = []
    for cfg in frames:
        out.append(str(cfg.n_atoms))
        out.append(f"{PROPERTIES} energy={_fmt(cfg.energy)}")
        for s, r, f in zip(cfg.symbols, cfg.positions, cfg.forces):
            out.append(" ".join([s, *map(_fmt, r), *map(_fmt, f)]))
    return "\n".join(out) + "\n"


def write_xyz(path, frames):
    with open(path, "w") as fh:
        fh.write(format_xyz(frames))


def read_point_cloud(path):
    """Read ``element x y z`` lines; blank lines or ``#`` lines separate groups.

    Returns a list of ``(symbols, positions)`` tuples, one per group.  Files
    that look like extended XYZ (leading atom count) are read as such, one
    group per frame.
    """
    with open(path) as fh:
        text = fh.read()
    first = next((ln for ln in text.splitlines() if ln.strip()), "")
    if first.strip().isdigit():
        return [(cfg.symbols, cfg.positions) for cfg in read_xyz(path)]
    groups, symbols, coords = [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            if symbols:
                groups.append((symbols, np.array(coords)))
                symbols, coords = [], []
            continue
        parts = s.split()
        if len(parts) != 4:
            raise XYZParseError(f"line {lineno}: expected 'element x y z'")
        try:
            coords.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise XYZParseError(f"line {lineno}: non-numeric coordinate") from exc
        symbols.append(parts[0])
    if symbols:
        groups.append((symbols, np.array(coords)))
    return groups
