"""NIfTI-1, NPY and BraTS case-directory I/O.

Only the NIfTI-1 subset BraTS ships is supported: little-endian, 3D (or 4D
with a single frame), uint8 / int16 / float32, optionally gzip-compressed.
Anything else is rejected with a specific error instead of being coerced.
"""

from __future__ import annotations

import ast
import gzip
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .volcore import MODALITIES, GeometryError, LabelMap, MultiModalImage, Volume3

log = logging.getLogger(__name__)

NIFTI_HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert NIFTI_HEADER_DTYPE.itemsize == 348

VOX_OFFSET = 352
DATATYPES = {2: np.dtype("u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
DATATYPE_CODES = {np.dtype("u1"): 2, np.dtype("<i2"): 4, np.dtype("<f4"): 16}

# header fields re-emitted verbatim when a volume carries geometry
GEOMETRY_FIELDS = (
    "qfac",
    "xyzt_units",
    "qform_code",
    "sform_code",
    "quatern_b",
    "quatern_c",
    "quatern_d",
    "qoffset_x",
    "qoffset_y",
    "qoffset_z",
    "srow_x",
    "srow_y",
    "srow_z",
)


class NiftiError(ValueError):
    """Base class for NIfTI parse failures."""


class BadMagicError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class TruncatedFileError(NiftiError):
    pass


class UnsupportedDimensionsError(NiftiError):
    pass


class NpyFormatError(ValueError):
    pass


class CaseLayoutError(FileNotFoundError):
    pass


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise TruncatedFileError(f"{path}: corrupt gzip stream ({e})") from e
    return raw


def _geometry_from_header(hdr) -> dict[str, Any]:
    geo: dict[str, Any] = {}
    for name in GEOMETRY_FIELDS:
        if name == "qfac":
            geo[name] = float(hdr["pixdim"][0])
        elif hdr[name].shape:
            geo[name] = [float(v) for v in hdr[name]]
        else:
            geo[name] = hdr[name].item()
    return geo


def read_nifti(path, kind: str = "auto") -> Volume3 | LabelMap:
    """Read a NIfTI-1 file.

    ``kind`` is ``"volume"``, ``"labels"`` or ``"auto"`` (uint8 files become
    a LabelMap, everything else a Volume3).
    """
    raw = _read_bytes(path)
    if len(raw) < 348:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, shorter than a NIfTI-1 header")
    hdr = np.frombuffer(raw[:348], dtype=NIFTI_HEADER_DTYPE)[0]
    magic = bytes(hdr["magic"])
    if magic not in (b"n+1", b"n+1\x00"):
        raise BadMagicError(f"{path}: magic {magic!r} is not single-file NIfTI-1 'n+1'")
    if hdr["sizeof_hdr"] != 348:
        raise NiftiError(f"{path}: sizeof_hdr={hdr['sizeof_hdr']} (big-endian files are not supported)")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise UnsupportedDatatypeError(f"{path}: datatype code {code} not in uint8/int16/float32")
    dim = [int(d) for d in hdr["dim"]]
    if not (dim[0] == 3 or (dim[0] == 4 and dim[4] == 1)):
        raise UnsupportedDimensionsError(f"{path}: dim={dim[:dim[0] + 1] if 0 < dim[0] < 8 else dim}, need a 3D volume")
    shape = tuple(dim[1:4])
    if min(shape) < 1:
        raise UnsupportedDimensionsError(f"{path}: non-positive extent in dim {shape}")
    dtype = DATATYPES[code]
    offset = int(hdr["vox_offset"])
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if offset < 348 or len(raw) < offset + nbytes:
        raise TruncatedFileError(f"{path}: payload needs {nbytes} bytes at offset {offset}, file has {len(raw)}")
    flat = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset)
    arr = flat.reshape(shape, order="F")
    spacing = tuple(float(abs(p)) for p in hdr["pixdim"][1:4])
    if not all(s > 0 for s in spacing):
        log.warning("%s: non-positive pixdim %s, using 1 mm", path, spacing)
        spacing = tuple(s if s > 0 else 1.0 for s in spacing)
    geometry = _geometry_from_header(hdr)

    if kind == "auto":
        kind = "labels" if code == 2 else "volume"
    if kind == "labels":
        if code == 16 and not np.array_equal(arr, np.round(arr)):
            raise UnsupportedDatatypeError(f"{path}: float labels are not integral")
        return LabelMap(arr, spacing, geometry)
    if kind != "volume":
        raise ValueError(f"unknown kind {kind!r}")
    data = arr.astype(np.float32)
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = (data * (slope if slope != 0.0 else 1.0) + inter).astype(np.float32)
    return Volume3(data, spacing, geometry)


def nifti_bytes(vol: Volume3 | LabelMap) -> bytes:
    """Serialize a volume to uncompressed NIfTI-1 bytes."""
    if isinstance(vol, LabelMap):
        arr = vol.data.astype("u1")
    else:
        arr = vol.data.astype("<f4")
    hdr = np.zeros((), dtype=NIFTI_HEADER_DTYPE)
    hdr["sizeof_hdr"] = 348
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *arr.shape, 1, 1, 1, 1]
    hdr["datatype"] = DATATYPE_CODES[arr.dtype]
    hdr["bitpix"] = arr.dtype.itemsize * 8
    hdr["pixdim"] = [1.0, *vol.spacing, 0.0, 0.0, 0.0, 0.0]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["magic"] = b"n+1\x00"
    geo = vol.geometry
    if geo:
        for name in GEOMETRY_FIELDS:
            if name not in geo:
                continue
            if name == "qfac":
                hdr["pixdim"][0] = geo[name]
            else:
                hdr[name] = geo[name]
    else:
        sx, sy, sz = vol.spacing
        hdr["xyzt_units"] = 2  # mm
        hdr["qform_code"] = 1
        hdr["sform_code"] = 1
        hdr["srow_x"] = [sx, 0, 0, 0]
        hdr["srow_y"] = [0, sy, 0, 0]
        hdr["srow_z"] = [0, 0, sz, 0]
    if isinstance(vol, Volume3) and arr.size:
        hdr["cal_min"], hdr["cal_max"] = float(arr.min()), float(arr.max())
    return hdr.tobytes() + b"\x00" * 4 + arr.tobytes(order="F")


def write_nifti(vol: Volume3 | LabelMap, path, compress: bool | None = None) -> None:
    """Write NIfTI-1; ``compress=None`` picks gzip from a ``.gz`` suffix."""
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    payload = nifti_bytes(vol)
    if compress:
        # mtime=0 keeps the gzip stream byte-reproducible
        payload = gzip.compress(payload, compresslevel=6, mtime=0)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# -- NPY -------------------------------------------------------------------

NPY_MAGIC = b"\x93NUMPY"
NPY_DESCR = {np.dtype("<f4"): "<f4", np.dtype("u1"): "|u1"}


def npy_header(dtype: np.dtype, shape: tuple[int, ...]) -> bytes:
    descr = NPY_DESCR[np.dtype(dtype)]
    if len(shape) == 1:
        shape_txt = f"({shape[0]},)"
    else:
        shape_txt = "(" + ", ".join(str(int(s)) for s in shape) + ")"
    text = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_txt}}}"
    # magic(6) + version(2) + len(2) + text + padding + '\n' is a multiple of 64
    total = 10 + len(text) + 1
    text += " " * (-total % 64) + "\n"
    return NPY_MAGIC + b"\x01\x00" + len(text).to_bytes(2, "little") + text.encode("latin1")


def write_npy(array: np.ndarray, path) -> None:
    arr = np.asarray(array)
    if arr.dtype == np.float32:
        arr = arr.astype("<f4", copy=False)
    if arr.dtype not in NPY_DESCR:
        raise NpyFormatError(f"unsupported dtype {arr.dtype}; only float32 and uint8 are cached")
    if arr.ndim < 1:
        raise NpyFormatError("rank-0 arrays are not supported")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(npy_header(arr.dtype, arr.shape))
        f.write(np.ascontiguousarray(arr).tobytes(order="C"))
    os.replace(tmp, path)


def read_npy(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:6] != NPY_MAGIC:
        raise NpyFormatError(f"{path}: not an NPY file (magic {raw[:6]!r})")
    if raw[6:8] != b"\x01\x00":
        raise NpyFormatError(f"{path}: NPY version {raw[6]}.{raw[7]} unsupported, need 1.0")
    hlen = int.from_bytes(raw[8:10], "little")
    try:
        header = ast.literal_eval(raw[10 : 10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError) as e:
        raise NpyFormatError(f"{path}: malformed NPY header") from e
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise NpyFormatError(f"{path}: unexpected NPY header {header!r}")
    if header["fortran_order"]:
        raise NpyFormatError(f"{path}: fortran_order=True layout unsupported")
    if header["descr"] not in ("<f4", "|u1"):
        raise NpyFormatError(f"{path}: unsupported descr {header['descr']!r}")
    shape = tuple(header["shape"])
    if len(shape) < 1:
        raise NpyFormatError(f"{path}: rank-0 arrays are not supported")
    dtype = np.dtype(header["descr"])
    count = int(np.prod(shape))
    start = 10 + hlen
    if len(raw) - start < count * dtype.itemsize:
        raise NpyFormatError(f"{path}: truncated payload")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=start).reshape(shape).copy()


# -- BraTS case directories ---------------------------------------------------


@dataclass(frozen=True)
class CaseBundle:
    case_id: str
    image: MultiModalImage
    seg: LabelMap | None = None

    def __post_init__(self):
        if self.seg is not None and (
            self.seg.shape != self.image.shape or self.seg.spacing != self.image.spacing
        ):
            raise GeometryError(
                f"{self.case_id}: seg geometry {self.seg.shape}/{self.seg.spacing} "
                f"does not match image {self.image.shape}/{self.image.spacing}"
            )


def _find_file(directory: Path, stem: str) -> Path | None:
    for ext in (".nii.gz", ".nii"):
        p = directory / f"{stem}{ext}"
        if p.exists():
            return p
    return None


def load_case(directory, suffixes: tuple[str, ...] = MODALITIES, seg_suffix: str = "seg") -> CaseBundle:
    directory = Path(directory)
    case_id = directory.name
    vols = []
    for suffix in suffixes:
        p = _find_file(directory, f"{case_id}-{suffix}")
        if p is None:
            raise CaseLayoutError(f"{directory}: missing modality file {case_id}-{suffix}.nii[.gz]")
        vols.append(read_nifti(p, kind="volume"))
    image = MultiModalImage(tuple(vols))  # type: ignore[arg-type]
    seg_path = _find_file(directory, f"{case_id}-{seg_suffix}")
    seg = read_nifti(seg_path, kind="labels") if seg_path else None
    return CaseBundle(case_id, image, seg)  # type: ignore[arg-type]


def save_case(bundle: CaseBundle, root, compress: bool = True) -> Path:
    directory = Path(root) / bundle.case_id
    ext = ".nii.gz" if compress else ".nii"
    for suffix, vol in zip(MODALITIES, bundle.image.channels):
        write_nifti(vol, directory / f"{bundle.case_id}-{suffix}{ext}", compress)
    if bundle.seg is not None:
        write_nifti(bundle.seg, directory / f"{bundle.case_id}-seg{ext}", compress)
    return directory


def discover_cases(root, first_suffix: str = MODALITIES[0]) -> list[str]:
    """Sorted ids of subdirectories holding a ``{id}-{first_suffix}`` file."""
    root = Path(root)
    if not root.is_dir():
        raise CaseLayoutError(f"{root}: not a directory")
    return sorted(
        d.name for d in root.iterdir() if d.is_dir() and _find_file(d, f"{d.name}-{first_suffix}")
    )

