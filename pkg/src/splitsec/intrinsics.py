"""Signatures of the built-in functions a program may call without defining.

Two families exist. Source-level intrinsics stand in for libc and the
secret allocator wrappers; ``ss_*`` intrinsics are the runtime ABI that only
transformed code calls.
"""

from __future__ import annotations

from dataclasses import dataclass

INT64 = frozenset({"i64"})
PTRS = frozenset({"ptr"})
VOIDS = frozenset({"void"})


@dataclass(frozen=True)
class Signature:
    ret: frozenset
    params: tuple  # one frozenset of accepted types per parameter


def _sig(ret, *params) -> Signature:
    return Signature(frozenset(ret), tuple(frozenset(p) for p in params))


SOURCE = {
    "malloc": _sig(PTRS, INT64),
    "free": _sig(VOIDS, PTRS),
    "secret_malloc": _sig(PTRS, INT64),
    "secret_free": _sig(VOIDS, PTRS),
    "memcpy": _sig(VOIDS, PTRS, PTRS, INT64),
    "memset": _sig(VOIDS, PTRS, INT64, INT64),
    "memcmp": _sig(INT64, PTRS, PTRS, INT64),
    "write_out": _sig(VOIDS, PTRS, INT64),
}

# libc-like calls rerouted by the pass
INTERCEPTED = ("memcpy", "memset", "memcmp", "write_out")

ACCESS_BITS = (8, 16, 32, 64, 128)


def _access_types(bits: int) -> frozenset:
    ty = {f"i{bits}"}
    if bits == 64:
        ty.add("ptr")
    return frozenset(ty)


RUNTIME = {
    "ss_secret_malloc": _sig(PTRS, INT64),
    "ss_secret_free": _sig(VOIDS, PTRS),
    "ss_declassify": _sig(PTRS, PTRS, INT64),
    "ss_classify": _sig(VOIDS, PTRS, PTRS, INT64),
    "ss_frame_push": _sig(VOIDS),
    "ss_frame_pop": _sig(VOIDS),
    "ss_is_secret": _sig(INT64, PTRS),
    "ss_bind_global": _sig(PTRS, PTRS, INT64),
    "ss_memcpy": _sig(VOIDS, PTRS, PTRS, INT64),
    "ss_memset": _sig(VOIDS, PTRS, INT64, INT64),
    "ss_memcmp": _sig(INT64, PTRS, PTRS, INT64),
}
for _bits in ACCESS_BITS:
    RUNTIME[f"ss_store{_bits}"] = Signature(VOIDS, (PTRS, _access_types(_bits)))
    RUNTIME[f"ss_load{_bits}"] = Signature(_access_types(_bits), (PTRS,))

ALL = {**SOURCE, **RUNTIME}


def is_intrinsic(name: str) -> bool:
    return name in ALL


def store_intrinsic(nbytes: int) -> str:
    return f"ss_store{nbytes * 8}"


def load_intrinsic(nbytes: int) -> str:
    return f"ss_load{nbytes * 8}"
