"""Patch mappings, transformation weights and multi-patch topology.

A patch maps the parameter cube ``[0,1]^3`` to physical space through a
tensor-product B-spline or NURBS. Parameter directions are indexed 0, 1, 2 in
code. Each patch face is addressed by ``(dim, side)`` with ``side`` in
``{"low", "high"}``; ``boundary_trim`` lists six flags in the order
``(d0 low, d0 high, d1 low, d1 high, d2 low, d2 high)``.

Interfaces connect the ``side_j`` face of patch ``j`` with the ``side_k`` face
of patch ``k`` across the connection dimension ``d1``. Both patches share the
orientation of the two spanning dimensions, and a pair of patches shares at
most one interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .splines import (
    SplineSpace,
    basis_matrices,
    is_nested,
    make_space,
)

SIDES = ("low", "high")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Patch:
    spaces: tuple
    control_points: np.ndarray  # (n1, n2, n3, 3)
    weights: np.ndarray | None = None  # (n1, n2, n3)

    def __post_init__(self):
        cp = np.array(self.control_points, dtype=float)
        shape = tuple(s.n for s in self.spaces)
        if len(self.spaces) != 3:
            raise GeometryError("a patch needs three spline spaces")
        if cp.shape != shape + (3,):
            raise GeometryError(f"control net shape {cp.shape[:-1]} does not match bases {shape}")
        cp.setflags(write=False)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "spaces", tuple(self.spaces))
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if w.shape != shape:
                raise GeometryError("weights must match the control net")
            if np.any(w <= 0):
                raise GeometryError("NURBS weights must be positive")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def is_rational(self) -> bool:
        return self.weights is not None

    def breakpoints(self, d: int) -> np.ndarray:
        return self.spaces[d].knot_vector.breakpoints

    def grid(self, x1, x2, x3):
        """Map and Jacobian on a tensor grid.

        Returns ``X`` of shape ``(m1, m2, m3, 3)`` and ``J`` of shape
        ``(m1, m2, m3, 3, 3)`` with ``J[..., i, k] = dG_i / dxhat_k``.
        """
        B = [basis_matrices(s, x, 1) for s, x in zip(self.spaces, (x1, x2, x3))]
        cp = self.control_points
        if self.weights is None:
            X = np.einsum("ai,bj,ck,ijkl->abcl", B[0][0], B[1][0], B[2][0], cp, optimize=True)
            J = np.stack(
                [
                    np.einsum("ai,bj,ck,ijkl->abcl", *[B[e][int(e == k)] for e in range(3)], cp, optimize=True)
                    for k in range(3)
                ],
                axis=-1,
            )
            return X, J
        w = self.weights
        wcp = cp * w[..., None]
        num = np.einsum("ai,bj,ck,ijkl->abcl", B[0][0], B[1][0], B[2][0], wcp, optimize=True)
        den = np.einsum("ai,bj,ck,ijk->abc", B[0][0], B[1][0], B[2][0], w, optimize=True)
        X = num / den[..., None]
        cols = []
        for k in range(3):
            mats = [B[e][int(e == k)] for e in range(3)]
            dnum = np.einsum("ai,bj,ck,ijkl->abcl", *mats, wcp, optimize=True)
            dden = np.einsum("ai,bj,ck,ijk->abc", *mats, w, optimize=True)
            cols.append((dnum - X * dden[..., None]) / den[..., None])
        return X, np.stack(cols, axis=-1)


    def weight_grid(self, x1, x2, x3):
        """NURBS denominator ``W`` and its parametric gradient on a tensor grid.

        ``W = 1`` and a zero gradient for polynomial patches.
        """
        shape = (len(x1), len(x2), len(x3))
        if self.weights is None:
            return np.ones(shape), np.zeros(shape + (3,))
        B = [basis_matrices(s, x, 1) for s, x in zip(self.spaces, (x1, x2, x3))]
        W = np.einsum("ai,bj,ck,ijk->abc", B[0][0], B[1][0], B[2][0], self.weights, optimize=True)
        dW = np.stack(
            [np.einsum("ai,bj,ck,ijk->abc", *[B[e][int(e == k)] for e in range(3)], self.weights, optimize=True)
             for k in range(3)],
            axis=-1,
        )
        return W, dW


def _as_point(xhat):
    xhat = np.asarray(xhat, dtype=float)
    if xhat.shape != (3,) or np.any(xhat < 0) or np.any(xhat > 1):
        raise GeometryError("parameter point must lie in the unit cube")
    return xhat


def eval_geometry(p: Patch, xhat) -> np.ndarray:
    x = _as_point(xhat)
    return p.grid([x[0]], [x[1]], [x[2]])[0][0, 0, 0]


def eval_jacobian(p: Patch, xhat) -> np.ndarray:
    x = _as_point(xhat)
    return p.grid([x[0]], [x[1]], [x[2]])[1][0, 0, 0]


def omega_from_jacobian(J: np.ndarray, where=None) -> np.ndarray:
    det = np.linalg.det(J)
    scale = np.max(np.abs(J), axis=(-2, -1))
    bad = np.abs(det) <= 1e-12 * np.maximum(scale, 1e-300) ** 3
    if np.any(bad):
        loc = np.argwhere(bad)[0] if np.ndim(bad) else ()
        raise GeometryError(f"singular Jacobian at grid index {tuple(loc)}{'' if where is None else ' ' + where}")
    return np.abs(det)


def q_from_jacobian(J: np.ndarray) -> np.ndarray:
    """``(J^T J)^{-1} |det J|``, computed as ``J^{-1} J^{-T} |det J|``."""
    om = omega_from_jacobian(J)
    Ji = np.linalg.inv(J)
    Q = np.einsum("...ki,...li->...kl", Ji, Ji) * om[..., None, None]
    return 0.5 * (Q + np.swapaxes(Q, -1, -2))


def eval_omega(p: Patch, xhat) -> float:
    return float(omega_from_jacobian(eval_jacobian(p, xhat), f"at {tuple(np.round(xhat, 6))}"))


def eval_Q(p: Patch, xhat) -> np.ndarray:
    J = eval_jacobian(p, xhat)
    omega_from_jacobian(J, f"at {tuple(np.round(xhat, 6))}")
    return q_from_jacobian(J)


@dataclass(frozen=True)
class Interface:
    j: int
    k: int
    d1: int
    side_j: str
    side_k: str
    finer: int | None = None

    def __post_init__(self):
        if self.j >= self.k:
            raise GeometryError("interfaces are stored with j < k")
        if self.d1 not in (0, 1, 2):
            raise GeometryError("connection dimension must be 0, 1 or 2")
        if self.side_j not in SIDES or self.side_k not in SIDES:
            raise GeometryError("sides must be 'low' or 'high'")
        if self.side_j == self.side_k:
            raise GeometryError(f"interface ({self.j},{self.k}) joins faces on the same side")
        if self.finer is not None and self.finer not in (self.j, self.k):
            raise GeometryError("finer patch must be one of the interface patches")

    @property
    def spanning(self) -> tuple[int, int]:
        return tuple(d for d in range(3) if d != self.d1)

    @property
    def key(self) -> tuple[int, int]:
        return (self.j, self.k)

    def side_of(self, m: int) -> str:
        return self.side_j if m == self.j else self.side_k


@dataclass(frozen=True)
class MultiPatch:
    patches: tuple
    interfaces: tuple
    boundary_trim: tuple
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "interfaces", tuple(self.interfaces))
        trims = tuple(tuple(bool(v) for v in t) for t in self.boundary_trim)
        object.__setattr__(self, "boundary_trim", trims)
        if len(trims) != len(self.patches) or any(len(t) != 6 for t in trims):
            raise GeometryError("boundary_trim needs six flags per patch")
        seen = set()
        for f in self.interfaces:
            if f.key in seen:
                raise GeometryError(f"more than one interface between patches {f.key}")
            seen.add(f.key)
            if max(f.j, f.k) >= len(self.patches):
                raise GeometryError(f"interface {f.key} references a missing patch")
            for m in (f.j, f.k):
                if trims[m][2 * f.d1 + SIDES.index(f.side_of(m))]:
                    raise GeometryError(f"interface face of patch {m} in {f.key} is marked as trimmed")

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    def interfaces_of(self, m: int):
        return [f for f in self.interfaces if m in (f.j, f.k)]


@dataclass
class ValidationReport:
    ok: bool
    issues: list = field(default_factory=list)
    max_gap: dict = field(default_factory=dict)
    conforming: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "ok": self.ok,
            "issues": list(self.issues),
            "max_gap": {f"{k[0] + 1}-{k[1] + 1}": v for k, v in self.max_gap.items()},
            "conforming": {f"{k[0] + 1}-{k[1] + 1}": list(v) for k, v in self.conforming.items()},
        }


def face_param(side: str) -> float:
    return 0.0 if side == "low" else 1.0


def _face_points(patch: Patch, d1: int, side: str, t: np.ndarray) -> np.ndarray:
    axes = [t, t, t]
    axes[d1] = np.array([face_param(side)])
    X, _ = patch.grid(*axes)
    return np.squeeze(X, axis=d1)


def interface_conformity(iface: Interface, spaces_j, spaces_k):
    """Per spanning dimension: (conforming flag, id of the finer patch or None).

    Raises when the knot vectors are neither equal nor nested.
    """
    out = []
    for d in iface.spanning:
        sj, sk = spaces_j[d], spaces_k[d]
        if sj.knot_vector == sk.knot_vector:
            out.append((True, None))
        elif is_nested(sk, sj):
            out.append((False, iface.j))
        elif is_nested(sj, sk):
            out.append((False, iface.k))
        else:
            raise GeometryError(f"interface ({iface.j + 1},{iface.k + 1}): knots in dim {d} are not nested")
    return out


def _face_weights(patch: Patch, d1: int, side: str, t: np.ndarray) -> np.ndarray:
    axes = [t, t, t]
    axes[d1] = np.array([face_param(side)])
    return np.squeeze(patch.weight_grid(*axes)[0], axis=d1)


def validate_multipatch(m: MultiPatch, tol: float = 1e-10, spaces=None, samples: int = 7) -> ValidationReport:
    """Check face coincidence, orientation and knot nesting of every interface.

    ``spaces`` optionally gives per-patch solution spaces to check conformity
    flags and the declared finer patch; otherwise geometry spaces are used.
    """
    rep = ValidationReport(ok=True)
    t = np.linspace(0.0, 1.0, samples)
    for f in m.interfaces:
        name = f"{f.j + 1}-{f.k + 1}"
        Xj = _face_points(m.patches[f.j], f.d1, f.side_j, t)
        Xk = _face_points(m.patches[f.k], f.d1, f.side_k, t)
        gap = float(np.max(np.linalg.norm(Xj - Xk, axis=-1)))
        rep.max_gap[f.key] = gap
        scale = max(1.0, float(np.max(np.abs(Xj))))
        if gap > tol * scale:
            rep.ok = False
            rep.issues.append(f"interface {name}: faces do not coincide (max gap {gap:.3e})")
        Wj = _face_weights(m.patches[f.j], f.d1, f.side_j, t)
        Wk = _face_weights(m.patches[f.k], f.d1, f.side_k, t)
        if np.max(np.abs(Wj - Wk)) > 1e-10 * np.max(np.abs(Wj)):
            # rational bases N/W match coefficientwise only for equal denominators
            rep.ok = False
            rep.issues.append(f"interface {name}: NURBS weight functions differ on the interface")
        sp = spaces if spaces is not None else [p.spaces for p in m.patches]
        try:
            conf = interface_conformity(f, sp[f.j], sp[f.k])
        except GeometryError as e:
            rep.ok = False
            rep.issues.append(str(e))
            continue
        rep.conforming[f.key] = tuple(c for c, _ in conf)
        finer = {fp for _, fp in conf if fp is not None}
        if len(finer) > 1:
            rep.ok = False
            rep.issues.append(f"interface {name}: each patch is finer in a different dimension")
        elif finer and spaces is not None and f.finer is not None and finer != {f.finer}:
            rep.ok = False
            rep.issues.append(f"interface {name}: declared finer patch {f.finer + 1} is the coarse side")
    return rep


# ---------------------------------------------------------------- construction helpers


def box_patch(lo, hi, degree: int = 1) -> Patch:
    """Axis-aligned box with a single-element B-spline of the given degree."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    sp = make_space(degree)
    g = np.linspace(0.0, 1.0, degree + 1)
    cp = np.stack(np.meshgrid(*[lo[d] + (hi[d] - lo[d]) * g for d in range(3)], indexing="ij"), axis=-1)
    return Patch((sp, sp, sp), cp)


def quarter_annulus_patch(r_in: float, r_out: float, z0: float, z1: float) -> Patch:
    """90 degree annulus segment in the first quadrant.

    Parameter 0 is radial (linear), parameter 1 the angle (rational quadratic
    arc from the x axis to the y axis), parameter 2 the height (linear).
    """
    lin = make_space(1)
    arc = make_space(2)
    c = np.sqrt(0.5)
    ring = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    warc = np.array([1.0, c, 1.0])
    cp = np.zeros((2, 3, 2, 3))
    w = np.zeros((2, 3, 2))
    for a, r in enumerate((r_in, r_out)):
        for b in range(3):
            for e, z in enumerate((z0, z1)):
                cp[a, b, e] = (r * ring[b, 0], r * ring[b, 1], z)
                w[a, b, e] = warc[b]
    return Patch((lin, arc, lin), cp, w)


def _trim_from_interfaces(n_patches, interfaces):
    trims = [[True] * 6 for _ in range(n_patches)]
    for f in interfaces:
        trims[f.j][2 * f.d1 + SIDES.index(f.side_j)] = False
        trims[f.k][2 * f.d1 + SIDES.index(f.side_k)] = False
    return trims


BUILTINS = ("three_cubes", "four_cuboids", "two_annuli")


def builtin_geometry(name: str) -> MultiPatch:
    """The three reference geometries (patch ids are 0-based in code).

    * ``three_cubes``: unit cubes side by side along x over ``[0,3] x [0,1]^2``.
    * ``four_cuboids``: ``[0,1]^3`` split 2x2 in (y, z); patches numbered
      counterclockwise in the (y, z) plane starting at the origin.
    * ``two_annuli``: two quarter annulus segments (radii 1 and 2) stacked in z.
    """
    if name == "three_cubes":
        patches = [box_patch((i, 0, 0), (i + 1, 1, 1)) for i in range(3)]
        ifs = [Interface(0, 1, 0, "high", "low", finer=0), Interface(1, 2, 0, "high", "low", finer=1)]
    elif name == "four_cuboids":
        cells = [(0, 0), (1, 0), (1, 1), (0, 1)]
        patches = [box_patch((0, b / 2, c / 2), (1, (b + 1) / 2, (c + 1) / 2)) for b, c in cells]
        ifs = [
            Interface(0, 1, 1, "high", "low", finer=0),
            Interface(0, 3, 2, "high", "low", finer=0),
            Interface(1, 2, 2, "high", "low", finer=1),
            Interface(2, 3, 1, "low", "high", finer=3),
        ]
    elif name == "two_annuli":
        patches = [quarter_annulus_patch(1.0, 2.0, 0.0, 1.0), quarter_annulus_patch(1.0, 2.0, 1.0, 2.0)]
        ifs = [Interface(0, 1, 2, "high", "low", finer=0)]
    else:
        raise GeometryError(f"unknown builtin geometry {name!r}; choose one of {BUILTINS}")
    return MultiPatch(tuple(patches), tuple(ifs), tuple(map(tuple, _trim_from_interfaces(len(patches), ifs))), name)


# ---------------------------------------------------------------- file format


def multipatch_from_dict(data: dict) -> MultiPatch:
    """Parse the JSON geometry format (1-based patch ids and dimensions)."""
    try:
        patches = []
        for pd in data["patches"]:
            spaces = []
            for deg, kn in zip(pd["degrees"], pd["knots"]):
                kn = [float(v) for v in kn]
                spaces.append(make_space(int(deg), kn[deg + 1 : len(kn) - deg - 1]))
                if tuple(spaces[-1].knots) != tuple(kn):
                    raise GeometryError("knot vectors must be open on [0, 1]")
            shape = tuple(s.n for s in spaces)
            cp = np.asarray(pd["control_points"], dtype=float).reshape(shape[::-1] + (3,))
            cp = np.transpose(cp, (2, 1, 0, 3))  # file order: dimension 1 fastest
            w = pd.get("weights")
            if w is not None:
                w = np.asarray(w, dtype=float).reshape(shape[::-1]).transpose(2, 1, 0)
            patches.append(Patch(tuple(spaces), cp, w))
        ifs = []
        for fd in data.get("interfaces", []):
            j, k = int(fd["j"]) - 1, int(fd["k"]) - 1
            sj, sk = fd["side_j"], fd["side_k"]
            if j > k:
                j, k, sj, sk = k, j, sk, sj
            finer = fd.get("finer")
            ifs.append(Interface(j, k, int(fd["d1"]) - 1, sj, sk, None if finer is None else int(finer) - 1))
        trims = data.get("boundary_trim") or _trim_from_interfaces(len(patches), ifs)
        return MultiPatch(tuple(patches), tuple(ifs), tuple(map(tuple, trims)), data.get("name", "custom"))
    except (KeyError, TypeError) as e:
        raise GeometryError(f"malformed geometry file: {e}") from e


def multipatch_to_dict(m: MultiPatch) -> dict:
    patches = []
    for p in m.patches:
        pd = {
            "degrees": [s.p for s in p.spaces],
            "knots": [list(map(float, s.knots)) for s in p.spaces],
            "control_points": np.transpose(p.control_points, (2, 1, 0, 3)).reshape(-1, 3).tolist(),
        }
        if p.weights is not None:
            pd["weights"] = np.transpose(p.weights, (2, 1, 0)).ravel().tolist()
        patches.append(pd)
    return {
        "name": m.name,
        "patches": patches,
        "interfaces": [
            {
                "j": f.j + 1,
                "k": f.k + 1,
                "d1": f.d1 + 1,
                "side_j": f.side_j,
                "side_k": f.side_k,
                "finer": None if f.finer is None else f.finer + 1,
            }
            for f in m.interfaces
        ],
        "boundary_trim": [list(t) for t in m.boundary_trim],
    }


def load_multipatch(path: str | Path) -> MultiPatch:
    with open(path) as fh:
        return multipatch_from_dict(json.load(fh))


def save_multipatch(m: MultiPatch, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(multipatch_to_dict(m), fh, indent=1)


def resolve_geometry(spec: str) -> MultiPatch:
    """Builtin name or path to a geometry file."""
    if spec in BUILTINS:
        return builtin_geometry(spec)
    return load_multipatch(spec)
