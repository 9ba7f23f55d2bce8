"""Model files: YAML documents describing a PDAE, its domain and run settings.

Layout (every section except ``domain`` optional unless noted)::

    matrices: {E: [[..]], D: [[..]], A: [[..]], B: [[..]], C: [[..]]}
    domain:   {lengths: [L1, L2]}
    bc:       neumann | dirichlet | [axis, ...]
              axis = neumann | dirichlet | {p: .., q: ..} | {low: [p, q], high: [p, q]}
    modes:    {N: 16, quadrature: 64}
    initial:  ["0.3", "0.3*(1 + cos(z1))"]       # one expression per component
    input:    [{vector: [..], power: 0, a: 0, omega: 0, kind: cos}]
    disturbance: same shape as input, vectors of length n_y
    wetland:  {r1: 2, ..., d2: 3}                 # replaces matrices
    sim:      {dt: 0.01, t_end: 100, grid: [64, 16], snapshot_stride: 100,
               x3_amplitude: 0.0, steady_tol: 1e-3}
    seeds:    0

Either ``matrices`` (with E, D, A) or ``wetland`` must be present.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .eigenbasis import AxisBC, BoundarySpec, BoxDomain
from .signals import Signal

SECTIONS = {"matrices", "domain", "bc", "modes", "initial", "input", "disturbance", "wetland", "sim", "seeds"}
MATRIX_KEYS = {"E", "D", "A", "B", "C"}
SIM_KEYS = {"dt", "t_end", "grid", "snapshot_stride", "x3_amplitude", "steady_tol"}
TERM_KEYS = {"vector", "power", "a", "omega", "kind"}
WETLAND_KEYS = {"r1", "r2", "N1", "N2", "k1", "k2", "h1", "h2", "d1", "d2"}


class ModelFileError(ValueError):
    """Invalid model file; ``str()`` names the file, location and offending key."""

    def __init__(self, message: str, path: tuple = (), line: int | None = None, column: int | None = None):
        self.message = message
        self.path = tuple(path)
        self.line = line
        self.column = column
        self.source = None
        super().__init__(message)

    def __str__(self):
        loc = ""
        if self.line is not None:
            loc = f"line {self.line}, column {self.column}: "
        where = f"{self.source}: " if self.source else ""
        key = f"[{'.'.join(str(p) for p in self.path)}] " if self.path else ""
        return f"{where}{loc}{key}{self.message}"


# ---------------------------------------------------------------- expressions

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    def __init__(self, message: str, column: int):
        self.column = column  # 1-based, in the original text
        super().__init__(f"{message} (column {column})")
        self.message = message


@dataclass(frozen=True)
class Expression:
    """Initial-condition expression over ``z1..zd``.

    Grammar: numbers, ``+ - * / ^``, unary minus, parentheses, ``sin``,
    ``cos``, ``exp``, the constant ``pi``, and the coordinates.
    """

    text: str
    dims: int
    tree: Any = field(repr=False, compare=False, default=None)

    @classmethod
    def parse(cls, text: str, dims: int) -> "Expression":
        text = str(text)
        # '^' becomes '**'; keep a map back to original columns
        if "**" in text:
            raise ExpressionError("'**' is not part of the grammar, use '^'", text.index("**") + 1)
        py, colmap = [], []
        for i, ch in enumerate(text):
            if ch == "^":
                py.append("**")
                colmap += [i, i]
            else:
                py.append(ch)
                colmap.append(i)
        src = "".join(py)
        colmap.append(len(text))
        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as exc:
            off = (exc.offset or 1) - 1
            raise ExpressionError(f"syntax error in {text!r}", colmap[min(off, len(colmap) - 1)] + 1) from None
        expr = cls(text, dims, tree.body)
        expr._check(tree.body, colmap)
        return expr

    def _check(self, node, colmap):
        col = colmap[min(getattr(node, "col_offset", 0), len(colmap) - 1)] + 1
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"unsupported literal {node.value!r}", col)
        elif isinstance(node, ast.Name):
            if node.id != "pi" and node.id not in self.coordinates:
                raise ExpressionError(f"unknown name {node.id!r}", col)
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError("unsupported operator", col)
            self._check(node.left, colmap)
            self._check(node.right, colmap)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError("unsupported unary operator", col)
            self._check(node.operand, colmap)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError("only sin, cos and exp may be called", col)
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"{node.func.id} takes exactly one argument", col)
            self._check(node.args[0], colmap)
        else:
            raise ExpressionError(f"unsupported construct {type(node).__name__}", col)

    @property
    def coordinates(self) -> tuple[str, ...]:
        return tuple(f"z{i + 1}" for i in range(self.dims))

    def __call__(self, *coords: np.ndarray) -> np.ndarray:
        if len(coords) != self.dims:
            raise ValueError(f"expression expects {self.dims} coordinates, got {len(coords)}")
        env = dict(zip(self.coordinates, (np.asarray(c, dtype=float) for c in coords)))
        env["pi"] = math.pi
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        return np.broadcast_to(self._eval(self.tree, env), shape).astype(float)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        return _FUNCS[node.func.id](self._eval(node.args[0], env))


# ---------------------------------------------------------------- model file


@dataclass(frozen=True)
class SimSection:
    dt: float = 0.01
    t_end: float = 100.0
    grid: tuple[int, ...] | None = None
    snapshot_stride: int = 100
    x3_amplitude: float = 0.0
    steady_tol: float = 1e-3


@dataclass
class ModelFile:
    domain: BoxDomain
    bc: BoundarySpec
    E: np.ndarray | None = None
    D: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    N: int = 16
    quad_nodes: int = 64
    initial: tuple[Expression, ...] = ()
    input: Signal | None = None
    disturbance: Signal | None = None
    wetland: Any = None  # WetlandParams
    sim: SimSection = field(default_factory=SimSection)
    seed: int = 0
    source: str | None = None

    @property
    def is_wetland(self) -> bool:
        return self.wetland is not None

    @property
    def n(self) -> int:
        return 3 if self.is_wetland else self.E.shape[0]

    @property
    def grid(self) -> tuple[int, ...]:
        if self.sim.grid is not None:
            return self.sim.grid
        return (64, 16)[: self.domain.d] if self.domain.d <= 2 else (16,) * self.domain.d

    def initial_function(self) -> Callable[..., np.ndarray] | None:
        """``(z1, .., zd) -> (..., n)``; components without an expression are zero."""
        if not self.initial:
            return None
        exprs, n = self.initial, self.n

        def fn(*coords):
            vals = [e(*coords) for e in exprs]
            shape = vals[0].shape
            vals += [np.zeros(shape)] * (n - len(vals))
            return np.stack(vals, axis=-1)

        return fn

    def with_overrides(self, **kw) -> "ModelFile":
        """Copy with CLI overrides: ``N``, ``grid``, ``dt``, ``t_end``, ``seed`` (``None`` skipped)."""
        sim_kw = {k: kw.pop(k) for k in ("grid", "dt", "t_end") if kw.get(k) is not None}
        for k in ("grid", "dt", "t_end"):
            kw.pop(k, None)
        out = replace(self, **{k: v for k, v in kw.items() if v is not None})
        if sim_kw:
            if "grid" in sim_kw and len(sim_kw["grid"]) != self.domain.d:
                raise ModelFileError(f"grid has {len(sim_kw['grid'])} axes, domain has {self.domain.d}", ("sim", "grid"))
            out = replace(out, sim=replace(out.sim, **sim_kw))
        if out.N < 1:
            raise ModelFileError("N must be >= 1", ("modes", "N"))
        if not out.sim.dt > 0:
            raise ModelFileError(f"dt must be positive, got {out.sim.dt}", ("sim", "dt"))
        if not out.sim.t_end > 0:
            raise ModelFileError(f"t_end must be positive, got {out.sim.t_end}", ("sim", "t_end"))
        return out


def _node_at(node, path, at_key=False):
    """Composed YAML node at ``path`` (deepest existing ancestor if missing).

    With ``at_key`` the last mapping step returns the key node, not its value.
    """
    for i, key in enumerate(path):
        if isinstance(node, yaml.MappingNode):
            if at_key and i == len(path) - 1:
                hit = next((k for k, v in node.value if k.value == key), None)
                return hit if hit is not None else node
            nxt = next((v for k, v in node.value if k.value == key), None)
            if nxt is None:
                nxt = next((k for k, v in node.value if k.value == key), None)
                return nxt if nxt is not None else node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def _err(msg, *path):
    return ModelFileError(msg, path)


def _mapping(value, path, allowed=None):
    if not isinstance(value, dict):
        raise _err(f"expected a mapping, got {type(value).__name__}", *path)
    if allowed is not None:
        for k in value:
            if k not in allowed:
                e = _err(f"unknown key {k!r} (allowed: {', '.join(sorted(allowed))})", *path, k)
                e.at_key = True
                raise e
    return value


_FLOAT_TEXT = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


def _number(value, path, positive=False, integer=False):
    # YAML 1.1 reads '1e-3' (no dot) as a string
    if isinstance(value, str) and _FLOAT_TEXT.fullmatch(value.strip()):
        value = float(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _err(f"expected a number, got {value!r}", *path)
    if integer and not float(value).is_integer():
        raise _err(f"expected an integer, got {value!r}", *path)
    if not math.isfinite(float(value)):
        raise _err(f"expected a finite number, got {value!r}", *path)
    if positive and not value > 0:
        raise _err(f"must be positive, got {value!r}", *path)
    return int(value) if integer else float(value)


def _vector(value, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not value:
        raise _err("expected a nonempty list of numbers", *path)
    return np.array([_number(v, path + (i,)) for i, v in enumerate(value)])


def _matrix(value, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [[value]]
    if not isinstance(value, list) or not value:
        raise _err("expected a nonempty list of rows", *path)
    rows = [value] if not isinstance(value[0], list) else value
    if any(not isinstance(r, list) for r in rows):
        raise _err("mixes rows and scalars", *path)
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise _err(f"row {i} has {len(r)} entries, row 0 has {width}", *path, i)
    return np.array([[_number(v, path + (i, k)) for k, v in enumerate(r)] for i, r in enumerate(rows)])


def _axis_bc(value, path):
    if isinstance(value, str):
        pq = {"dirichlet": (1.0, 0.0), "neumann": (0.0, 1.0)}.get(value.lower())
        if pq is None:
            raise _err(f"unknown boundary kind {value!r}", *path)
        return AxisBC(pq, pq)
    value = _mapping(value, path, {"p", "q", "low", "high"})
    try:
        if "low" in value or "high" in value:
            if set(value) != {"low", "high"}:
                raise _err("needs both 'low' and 'high' (and nothing else)", *path)
            faces = []
            for face in ("low", "high"):
                v = _vector(value[face], path + (face,))
                if len(v) != 2:
                    raise _err("face needs [p, q]", *path, face)
                faces.append(tuple(v))
            return AxisBC(*faces)
        if set(value) != {"p", "q"}:
            raise _err("needs both 'p' and 'q'", *path)
        pq = (_number(value["p"], path + ("p",)), _number(value["q"], path + ("q",)))
        return AxisBC(pq, pq)
    except ModelFileError:
        raise
    except ValueError as exc:
        raise _err(str(exc), *path) from None


def _signal(value, dim, path):
    if not isinstance(value, list):
        raise _err("expected a list of terms", *path)
    sig = Signal.zero(dim)
    for i, term in enumerate(value):
        p = path + (i,)
        term = _mapping(term, p, TERM_KEYS)
        if "vector" not in term:
            raise _err("term needs 'vector'", *p)
        vec = _vector(term["vector"], p + ("vector",))
        if len(vec) != dim:
            raise _err(f"vector has length {len(vec)}, expected {dim}", *p, "vector")
        power = _number(term.get("power", 0), p + ("power",), integer=True)
        if power < 0:
            raise _err("power must be >= 0", *p, "power")
        kind = term.get("kind", "cos")
        if kind not in ("cos", "sin", "const"):
            raise _err(f"kind must be cos, sin or const, got {kind!r}", *p, "kind")
        sig = sig + Signal.term(
            vec,
            power,
            _number(term.get("a", 0.0), p + ("a",)),
            _number(term.get("omega", 0.0), p + ("omega",)),
            kind,
        )
    return sig


def _build(doc) -> ModelFile:
    from .wetland import WetlandParams, reference_domain

    doc = _mapping(doc, (), SECTIONS)
    wet = None
    if "wetland" in doc:
        w = doc["wetland"] if doc["wetland"] is not None else {}
        w = _mapping(w, ("wetland",), WETLAND_KEYS)
        vals = {k: _number(v, ("wetland", k), positive=True) for k, v in w.items()}
        wet = WetlandParams(**vals)
        if "matrices" in doc:
            raise _err("'wetland' and 'matrices' are mutually exclusive", "matrices")

    if "domain" in doc:
        dom = _mapping(doc["domain"], ("domain",), {"lengths"})
        if "lengths" not in dom:
            raise _err("domain needs 'lengths'", "domain")
        lengths = _vector(dom["lengths"], ("domain", "lengths"))
        for i, L in enumerate(lengths):
            if not L > 0:
                raise _err(f"length must be positive, got {L}", "domain", "lengths", i)
        domain = BoxDomain(tuple(float(L) for L in lengths))
    elif wet is not None:
        domain = reference_domain()
    else:
        raise _err("missing required section 'domain'")
    d = domain.d

    bc_raw = doc.get("bc", "neumann")
    if isinstance(bc_raw, list):
        if len(bc_raw) != d:
            raise _err(f"bc has {len(bc_raw)} axes, domain has {d}", "bc")
        bc = BoundarySpec(tuple(_axis_bc(v, ("bc", i)) for i, v in enumerate(bc_raw)))
    else:
        ax = _axis_bc(bc_raw, ("bc",))
        bc = BoundarySpec((ax,) * d)

    mats: dict[str, np.ndarray | None] = dict.fromkeys(MATRIX_KEYS)
    if "matrices" in doc:
        m = _mapping(doc["matrices"], ("matrices",), MATRIX_KEYS)
        for k in ("E", "D", "A"):
            if k not in m:
                raise _err(f"missing matrix {k!r}", "matrices")
        for k, v in m.items():
            mats[k] = _matrix(v, ("matrices", k))
        E = mats["E"]
        n = E.shape[0]
        for k in ("E", "D", "A"):
            if mats[k].shape != (n, n):
                raise _err(f"{k} has shape {mats[k].shape}, expected ({n}, {n})", "matrices", k)
        if mats["B"] is not None and mats["B"].shape[0] != n:
            raise _err(f"B has {mats['B'].shape[0]} rows, expected {n}", "matrices", "B")
        if mats["C"] is not None and mats["C"].shape[1] != n:
            raise _err(f"C has {mats['C'].shape[1]} columns, expected {n}", "matrices", "C")
    elif wet is not None:
        n = 3
    else:
        raise _err("need a 'matrices' or a 'wetland' section")

    N, quad = 16, 64
    if "modes" in doc:
        mo = _mapping(doc["modes"], ("modes",), {"N", "quadrature"})
        if "N" in mo:
            N = _number(mo["N"], ("modes", "N"), positive=True, integer=True)
        if "quadrature" in mo:
            quad = _number(mo["quadrature"], ("modes", "quadrature"), positive=True, integer=True)

    initial = ()
    if "initial" in doc:
        raw = doc["initial"]
        if not isinstance(raw, list):
            raw = [raw]
        if len(raw) > n:
            raise _err(f"{len(raw)} initial expressions for {n} components", "initial")
        exprs = []
        for i, text in enumerate(raw):
            if isinstance(text, bool) or not isinstance(text, (str, int, float)):
                raise _err("expected an expression string", "initial", i)
            try:
                exprs.append(Expression.parse(str(text), d))
            except ExpressionError as exc:
                e = _err(exc.message, "initial", i)
                e.expr_column = exc.column
                raise e from None
        initial = tuple(exprs)

    n_u = mats["B"].shape[1] if mats["B"] is not None else 1
    n_y = mats["C"].shape[0] if mats["C"] is not None else 1
    inp = _signal(doc["input"], n_u, ("input",)) if "input" in doc else None
    if inp is not None and mats["B"] is None and not inp.is_zero:
        raise _err("input given but no B matrix", "input")
    dist = _signal(doc["disturbance"], n_y, ("disturbance",)) if "disturbance" in doc else None

    sim = SimSection()
    if "sim" in doc:
        s = _mapping(doc["sim"], ("sim",), SIM_KEYS)
        kw = {}
        for k in ("dt", "t_end", "steady_tol"):
            if k in s:
                kw[k] = _number(s[k], ("sim", k), positive=True)
        if "x3_amplitude" in s:
            kw["x3_amplitude"] = _number(s["x3_amplitude"], ("sim", "x3_amplitude"))
        if "snapshot_stride" in s:
            kw["snapshot_stride"] = _number(s["snapshot_stride"], ("sim", "snapshot_stride"), positive=True, integer=True)
        if "grid" in s:
            g = s["grid"]
            if not isinstance(g, list) or len(g) != d:
                raise _err(f"grid needs {d} node counts", "sim", "grid")
            kw["grid"] = tuple(_number(v, ("sim", "grid", i), integer=True) for i, v in enumerate(g))
            if min(kw["grid"]) < 3:
                raise _err("grid needs at least 3 nodes per axis", "sim", "grid")
        sim = SimSection(**kw)

    seed = _number(doc["seeds"], ("seeds",), integer=True) if "seeds" in doc else 0

    return ModelFile(
        domain=domain,
        bc=bc,
        E=mats["E"],
        D=mats["D"],
        A=mats["A"],
        B=mats["B"],
        C=mats["C"],
        N=N,
        quad_nodes=quad,
        initial=initial,
        input=inp,
        disturbance=dist,
        wetland=wet,
        sim=sim,
        seed=seed,
    )


def parse_text(text: str, source: str | None = None) -> ModelFile:
    """Parse and validate a model document; errors carry line/column of the offending key."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        err = ModelFileError(f"syntax error: {exc.problem or exc}", (), mark.line + 1 if mark else None, mark.column + 1 if mark else None)
        err.source = source
        raise err from None
    if doc is None:
        doc = {}
    try:
        model = _build(doc)
    except ModelFileError as err:
        node = _node_at(root, err.path, getattr(err, "at_key", False)) if root is not None else None
        if node is not None:
            err.line = node.start_mark.line + 1
            col = node.start_mark.column + 1
            extra = getattr(err, "expr_column", None)
            if extra is not None and isinstance(node, yaml.ScalarNode) and node.style is None:
                col += extra - 1
            err.column = col
        err.source = source
        raise
    model.source = source
    return model


def parse_model(path) -> ModelFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFileError(f"cannot read model file: {exc.strerror}") from None
    return parse_text(text, str(path))
