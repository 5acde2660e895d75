"""Image artifact emission: binary PGM/PPM files, side-by-side pane
grids for reconstructions, and heat strips for likelihood and latent
vectors. Everything is uint8; pane values are mapped by an affine
[min,max] -> [0,255] rescale (constant panes map to 0), likelihoods by
an absolute [0,1] scale since they live on the simplex.
"""

import numpy as np

from .errors import FormatError, ShapeError


def to_u8(pane):
    """Affine [min,max] -> [0,255] per pane; a constant pane maps to 0."""
    pane = np.asarray(pane, dtype=np.float64)
    lo, hi = pane.min(), pane.max()
    if hi <= lo:
        return np.zeros(pane.shape, dtype=np.uint8)
    return np.clip(np.rint((pane - lo) * (255.0 / (hi - lo))), 0, 255).astype(np.uint8)


def unit_to_u8(pane):
    """Absolute [0,1] -> [0,255] scale (clipping), for simplex values."""
    return np.clip(np.rint(np.asarray(pane, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def chw_pane(img, mapper=to_u8):
    """[C,H,W] float -> [H,W] (C=1) or [H,W,3] (C=3) uint8."""
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ShapeError(f"pane wants [1|3,H,W], got {img.shape}")
    if img.shape[0] == 1:
        return mapper(img[0])
    return np.stack([mapper(img[c]) for c in range(3)], axis=-1)


def likelihood_strip(vec, height, cell=8):
    """One grayscale cell per class, absolute-scaled."""
    u8 = unit_to_u8(np.asarray(vec).reshape(-1))
    return np.repeat(np.repeat(u8[None, :], height, axis=0), cell, axis=1)


def vector_strip(vec, height):
    """Latent vector as a 1px-per-entry strip, min/max scaled."""
    u8 = to_u8(np.asarray(vec).reshape(1, -1))
    return np.repeat(u8, height, axis=0)


def _is_color(p):
    return p.ndim == 3


def hstack_panes(panes, sep=1, sep_value=0):
    """Concatenate panes left to right with sep-wide separator columns."""
    if not panes:
        raise ShapeError("no panes")
    h = panes[0].shape[0]
    if any(p.shape[0] != h for p in panes):
        raise ShapeError("pane heights differ")
    color = any(_is_color(p) for p in panes)
    norm = []
    for p in panes:
        if color and not _is_color(p):
            p = np.stack([p] * 3, axis=-1)
        norm.append(p)
    sep_shape = (h, sep, 3) if color else (h, sep)
    sep_block = np.full(sep_shape, sep_value, dtype=np.uint8)
    out = []
    for i, p in enumerate(norm):
        if i:
            out.append(sep_block)
        out.append(p)
    return np.concatenate(out, axis=1)


def vstack_rows(rows, sep=1, sep_value=0):
    if not rows:
        raise ShapeError("no rows")
    w = rows[0].shape[1]
    if any(r.shape[1] != w for r in rows):
        raise ShapeError("row widths differ")
    color = any(_is_color(r) for r in rows)
    norm = []
    for r in rows:
        if color and not _is_color(r):
            r = np.stack([r] * 3, axis=-1)
        norm.append(r)
    sep_shape = (sep, w, 3) if color else (sep, w)
    sep_block = np.full(sep_shape, sep_value, dtype=np.uint8)
    out = []
    for i, r in enumerate(norm):
        if i:
            out.append(sep_block)
        out.append(r)
    return np.concatenate(out, axis=0)


def reconstruction_grid(inputs, recons):
    """One row per sample: [input | reconstruction], 1px separators."""
    rows = [
        hstack_panes([chw_pane(inputs[i]), chw_pane(recons[i])])
        for i in range(inputs.shape[0])
    ]
    return vstack_rows(rows)


def generation_grid(inputs, o, tr_o, alphas, recons):
    """Five panes per sample: input, likelihood, transformed likelihood,
    latent strip, reconstruction of the latent."""
    rows = []
    for i in range(inputs.shape[0]):
        h = inputs.shape[2]
        rows.append(hstack_panes([
            chw_pane(inputs[i]),
            likelihood_strip(o[i], h),
            likelihood_strip(tr_o[i], h),
            vector_strip(alphas[i], h),
            chw_pane(recons[i]),
        ]))
    return vstack_rows(rows)


# -- PNM files --------------------------------------------------------------


def save_image(path, arr):
    """uint8 [H,W] -> binary PGM (P5); uint8 [H,W,3] -> binary PPM (P6)."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise FormatError(f"image must be uint8, got {arr.dtype}")
    if arr.ndim == 2:
        magic = b"P5"
        h, w = arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
        h, w = arr.shape[:2]
    else:
        raise ShapeError(f"image must be [H,W] or [H,W,3], got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}".encode() + b"\n255\n")
        fh.write(np.ascontiguousarray(arr).tobytes())
    return path


def load_image(path):
    """Reads back the subset of PNM this module writes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM written by this tool")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PNM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported")
    depth = 3 if parts[0] == b"P6" else 1
    data = np.frombuffer(parts[3], dtype=np.uint8, count=w * h * depth)
    if depth == 1:
        return data.reshape(h, w)
    return data.reshape(h, w, 3)
