"""Independent reference implementations the test suite checks against.

Everything here is deliberately naive: direct loops for the array ops, a
closed-form sum for parameter counts, a from-scratch DOT reader. None of it
imports from the package's compute paths, so agreement is meaningful.
"""

from __future__ import annotations

import re

import numpy as np


# ---------------------------------------------------------------------------
# array op references (loop versions)

def conv2d_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  stride: int = 1, pad: int = 0) -> np.ndarray:
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, out_h, out_w), dtype=x.dtype)
    for ni in range(n):
        for co in range(cout):
            for oy in range(out_h):
                for ox in range(out_w):
                    patch = xp[ni, :, oy * stride:oy * stride + kh,
                               ox * stride:ox * stride + kw]
                    out[ni, co, oy, ox] = np.sum(patch * w[co]) + b[co]
    return out


def maxpool2_oracle(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for oy in range(h // 2):
        for ox in range(w // 2):
            out[:, :, oy, ox] = x[:, :, 2 * oy:2 * oy + 2,
                                  2 * ox:2 * ox + 2].max(axis=(2, 3))
    return out


def upsample2_oracle(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w), dtype=x.dtype)
    for oy in range(2 * h):
        for ox in range(2 * w):
            out[:, :, oy, ox] = x[:, :, oy // 2, ox // 2]
    return out


def batchnorm_oracle(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                     eps: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(x)
    for c in range(x.shape[1]):
        vals = x[:, c]
        mean = vals.mean()
        var = ((vals - mean) ** 2).mean()  # biased
        out[:, c] = gamma[c] * (vals - mean) / np.sqrt(var + eps) + beta[c]
    return out


# ---------------------------------------------------------------------------
# closed-form parameter counts

def bn_params(channels: int) -> int:
    return 2 * channels


def conv_params(cin: int, cout: int, k: int) -> int:
    return cin * cout * k * k + cout


def stem_params(in_channels: int, width: int) -> int:
    return conv_params(in_channels, width, 7) + bn_params(width)


def block_params(m: int, n: int, unet_index: int) -> int:
    cin = m + n * unet_index
    total = bn_params(cin) + conv_params(cin, 4 * m, 1)
    total += bn_params(4 * m) + conv_params(4 * m, n, 3)
    total += bn_params(cin + n) + conv_params(cin + n, m, 1)
    return total


def head_params(m: int, keypoints: int) -> int:
    return bn_params(m) + conv_params(m, keypoints, 1)


def cu_param_count(u: int, m: int, n: int, depth: int, keypoints: int,
                   in_channels: int, coupling: bool, supervisions: int) -> int:
    positions = 2 * depth + 1
    total = stem_params(in_channels, m)
    for i in range(u):
        total += positions * block_params(m, n, i if coupling else 0)
    total += supervisions * head_params(m, keypoints)
    return total


def dense_param_count(layers: int, growth: int, width: int, depth: int,
                      keypoints: int, in_channels: int) -> int:
    positions = 2 * depth + 1
    per_position = 0
    for j in range(layers):
        cin = width + j * growth
        per_position += bn_params(cin) + conv_params(cin, 4 * growth, 1)
        per_position += bn_params(4 * growth) + conv_params(4 * growth, growth, 3)
    per_position += (bn_params(width + layers * growth)
                     + conv_params(width + layers * growth, width, 1))
    return (stem_params(in_channels, width) + positions * per_position
            + head_params(width, keypoints))


def coupling_edge_count(u: int, depth: int) -> int:
    return (2 * depth + 1) * u * (u - 1) // 2


# ---------------------------------------------------------------------------
# minimal DOT reader

_QUOTED = r'"(?:[^"\\]|\\.)*"'
_EDGE_RE = re.compile(rf'({_QUOTED})\s*->\s*({_QUOTED})\s*(\[.*\])?')
_NODE_RE = re.compile(rf'({_QUOTED})\s*(\[.*\])?')
_PLAIN_RE = re.compile(r'\w+\s*=\s*\w+')
_DEFAULT_RE = re.compile(r'(node|edge|graph)\s*(\[.*\])')
_ATTR_RE = re.compile(rf'\s*(\w+)\s*=\s*({_QUOTED}|[\w.]+)\s*(,|$)')


class DotError(ValueError):
    pass


def _unquote(s: str) -> str:
    return s[1:-1].replace('\\"', '"')


def _parse_attrs(block: str | None, where: str) -> dict:
    if block is None:
        return {}
    inner = block[1:-1].strip()
    attrs: dict = {}
    pos = 0
    while pos < len(inner):
        m = _ATTR_RE.match(inner, pos)
        if not m:
            raise DotError(f"malformed attribute list at {where}: {inner[pos:]!r}")
        value = m.group(2)
        attrs[m.group(1)] = _unquote(value) if value.startswith('"') else value
        pos = m.end()
        if m.group(3) != "," and pos != len(inner):
            raise DotError(f"missing comma in attribute list at {where}")
    return attrs


def parse_dot(text: str) -> tuple[str, dict, list]:
    """Parse the subset of DOT the package emits.

    Returns (graph name, {node: attrs}, [(src, dst, attrs)]). Raises DotError
    on anything structurally off: unterminated statements, unquoted names,
    edges to undeclared nodes, bad attribute lists.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DotError("empty document")
    m = re.fullmatch(r'digraph\s+(\w+)\s*\{', lines[0].strip())
    if not m:
        raise DotError(f"bad header: {lines[0]!r}")
    name = m.group(1)
    if lines[-1].strip() != "}":
        raise DotError(f"missing closing brace, got {lines[-1]!r}")

    nodes: dict = {}
    edges: list = []
    for raw in lines[1:-1]:
        stmt = raw.strip()
        if not stmt.endswith(";"):
            raise DotError(f"statement not terminated: {raw!r}")
        stmt = stmt[:-1].strip()
        if _PLAIN_RE.fullmatch(stmt) or _DEFAULT_RE.fullmatch(stmt):
            continue
        em = _EDGE_RE.fullmatch(stmt)
        if em:
            src, dst = _unquote(em.group(1)), _unquote(em.group(2))
            for end in (src, dst):
                if end not in nodes:
                    raise DotError(f"edge references undeclared node {end!r}")
            edges.append((src, dst, _parse_attrs(em.group(3), stmt)))
            continue
        nm = _NODE_RE.fullmatch(stmt)
        if nm:
            node = _unquote(nm.group(1))
            if node in nodes:
                raise DotError(f"node declared twice: {node!r}")
            nodes[node] = _parse_attrs(nm.group(2), stmt)
            continue
        raise DotError(f"unrecognized statement: {raw!r}")
    return name, nodes, edges
