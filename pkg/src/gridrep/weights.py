"""Weight checkpoint format: raw little-endian float32 arrays + JSON sidecar.

A model is stored as <stem>.bin (flat arrays concatenated at the byte offsets
listed in the header) and <stem>.json (a self-describing header with the
domain, block layout, kernel, motion mode, monomial order, and seed). Files
round-trip bit-exactly: loading and re-saving reproduces identical bytes.
"""

import json
import os
from typing import Optional

import numpy as np

from .domain import build_domain
from .errors import WeightFormatError
from .model import Codebook, Kernel, MotionModel, monomial_names
from .theory import AnalyticBlock

DTYPE = "<f4"
FORMAT_NAME = "gridrep-weights"


def _stem(path: str) -> str:
    base, ext = os.path.splitext(path)
    return base if ext in (".bin", ".json") else path


def write_arrays(path: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays as flat float32 plus a JSON sidecar header."""
    stem = _stem(path)
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        offset += len(data)
        blobs.append(data)
    header = dict(header)
    header["format"] = FORMAT_NAME
    header["version"] = 1
    header["dtype"] = DTYPE
    header["arrays"] = entries
    with open(stem + ".bin", "wb") as f:
        for blob in blobs:
            f.write(blob)
    with open(stem + ".json", "w") as f:
        json.dump(header, f, indent=1, sort_keys=True)
        f.write("\n")


def read_arrays(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a weight file back into its header and named float32 arrays."""
    stem = _stem(path)
    try:
        with open(stem + ".json") as f:
            header = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise WeightFormatError(f"cannot read header {stem}.json: {e}") from e
    if header.get("format") != FORMAT_NAME:
        raise WeightFormatError(f"{stem}.json is not a {FORMAT_NAME} header")
    try:
        raw = open(stem + ".bin", "rb").read()
    except OSError as e:
        raise WeightFormatError(f"cannot read payload {stem}.bin: {e}") from e
    arrays = {}
    total = 0
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + 4 * n
        if stop > len(raw):
            raise WeightFormatError(
                f"array {entry['name']!r} overruns payload ({stop} > {len(raw)} bytes)")
        arrays[entry["name"]] = np.frombuffer(raw[start:stop], dtype=DTYPE).reshape(shape).copy()
        total = max(total, stop)
    if total != len(raw):
        raise WeightFormatError(f"payload has {len(raw)} bytes, header describes {total}")
    return header, arrays


def save_model(path: str, codebook: Codebook, motion: MotionModel,
               seed: Optional[int] = None, system: str = "position") -> None:
    """Serialize a codebook + motion model pair in the standard format."""
    dom = codebook.domain
    header = {
        "system": system,
        "mode": motion.mode,
        "dim": dom.dim,
        "side": dom.side,
        "shape": dom.shape,
        "K": codebook.K,
        "d": codebook.d,
        "normalized": codebook.normalized,
        "kernel": None if codebook.kernel is None else
            {"family": codebook.kernel.family, "sigma": codebook.kernel.sigma},
        "monomials": monomial_names(dom.dim) if motion.mode == "parametric" else None,
        "seed": seed,
    }
    arrays = {"values": codebook.values}
    if codebook.alphas is not None:
        arrays["alphas"] = codebook.alphas
    if motion.mode == "parametric":
        arrays["beta"] = motion.beta
    elif motion.mode == "nonparametric":
        keys = sorted(motion.matrices.keys())
        header["nonparam_keys"] = [list(k) for k in keys]
        header["nonparam_spacing"] = motion.spacing
        arrays["motion_matrices"] = np.stack([motion.matrices[k] for k in keys])
    else:
        blocks = motion.analytic_blocks
        header["base_angles"] = [b.base_angle for b in blocks]
        arrays["wavevectors"] = np.stack([b.wavevectors for b in blocks])
        arrays["C_re"] = np.stack([b.C.real for b in blocks])
        arrays["C_im"] = np.stack([b.C.imag for b in blocks])
    write_arrays(path, header, arrays)


def load_model(path: str) -> tuple[Codebook, MotionModel, dict]:
    """Load a position model; returns (codebook, motion, header)."""
    header, arrays = read_arrays(path)
    try:
        dom = build_domain(header["dim"], header["side"], header["shape"])
        K, d = header["K"], header["d"]
        kernel = None
        if header.get("kernel"):
            kernel = Kernel(header["kernel"]["family"], header["kernel"]["sigma"])
        codebook = Codebook(domain=dom, K=K, d=d, values=arrays["values"],
                            alphas=arrays.get("alphas"),
                            normalized=bool(header.get("normalized", True)),
                            kernel=kernel)
        mode = header["mode"]
        if mode == "parametric":
            motion = MotionModel(mode="parametric", dim=dom.dim, K=K, d=d,
                                 beta=arrays["beta"].astype(np.float64))
        elif mode == "nonparametric":
            keys = [tuple(k) for k in header["nonparam_keys"]]
            mats = arrays["motion_matrices"].astype(np.float64)
            motion = MotionModel(mode="nonparametric", dim=dom.dim, K=K, d=d,
                                 matrices=dict(zip(keys, mats)),
                                 spacing=header["nonparam_spacing"])
        elif mode == "analytic":
            blocks = []
            for k in range(K):
                C = arrays["C_re"][k].astype(np.float64) + 1j * arrays["C_im"][k].astype(np.float64)
                wv = arrays["wavevectors"][k].astype(np.float64)
                alpha = float(arrays["alphas"][k]) if "alphas" in arrays else float(
                    np.sum(wv[0] ** 2) / 4.0)
                blocks.append(AnalyticBlock(alpha=alpha,
                                            base_angle=float(header["base_angles"][k]),
                                            wavevectors=wv, C=C))
            motion = MotionModel(mode="analytic", dim=dom.dim, K=K, d=d,
                                 analytic_blocks=blocks)
        else:
            raise WeightFormatError(f"unknown motion mode {mode!r}")
    except (KeyError, TypeError, ValueError) as e:
        raise WeightFormatError(f"inconsistent weight header: {e}") from e
    return codebook, motion, header
