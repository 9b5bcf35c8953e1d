"""Plain-text ``key = value`` run configuration.

Conductivities and boundary data are arithmetic expressions. The expression
language is parsed with :mod:`ast` and only numbers, the variables
``x, y, s, theta, r``, the constants ``pi, e`` and a fixed set of numpy
functions are accepted.

Example::

    command = reconstruct
    shape = square
    n = 64
    sigma = 1
    f = x
    eps = 0.05
    bump_center = 0.5, 0.5
    bump_radius = 0.4
    gamma = 2:5
    gamma_prime = 2.07:4.93
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, fields

import numpy as np

from .decomposition import ProjectionMode
from .fields import ScalarField
from .grid import BoundaryArcSet, DomainGrid
from .harness import PerturbationSpec, bump, make_perturbation

COMMANDS = ("forward", "regions", "decompose", "reconstruct", "sweep", "ampere")

PRESETS = {
    "uniform": "1",
    "exp_decay": "exp(-x)",
    "rational": "1/(1 + x)**2",
}

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "atan2": np.arctan2,
    "minimum": np.minimum, "maximum": np.maximum, "bump": None,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_FIELD_VARS = ("x", "y", "s", "theta", "r")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.true_divide, ast.Pow: np.power}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ValueError(f"unknown name {node.id!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        val = _eval(node.operand, env)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        name = node.func.id
        args = [_eval(a, env) for a in node.args]
        if name == "bump":
            if len(args) != 3 or "x" not in env:
                raise ValueError("bump takes (cx, cy, r) and needs x, y")
            return bump(env["x"], env["y"], *args)
        if name in ("logspace", "linspace") and "x" not in env:
            if len(args) != 3:
                raise ValueError(f"{name} takes (start, stop, count)")
            return tuple(getattr(np, name)(args[0], args[1], int(args[2])).tolist())
        if name in _FUNCS:
            return _FUNCS[name](*args)
        raise ValueError(f"unknown function {name!r}")
    if isinstance(node, ast.Tuple) and "x" not in env:
        return tuple(_eval(e, env) for e in node.elts)
    raise ValueError(f"unsupported expression element {type(node).__name__}")


def parse_expression(text: str, variables=_FIELD_VARS):
    """Compile ``text`` into ``func(**variables)`` evaluated with numpy."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse {text!r}: {exc.msg}") from None

    def func(**kw):
        missing = set(variables) - set(kw)
        env = dict(kw)
        for k in missing:
            env[k] = np.nan
        return _eval(tree, env)

    # evaluate once on dummy values so unknown names fail at parse time
    probe = {k: np.array([0.5]) for k in variables}
    func(**probe)
    return func


def evaluate_constant(text: str):
    """Number, tuple of numbers, or ``logspace``/``linspace`` call."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse {text!r}: {exc.msg}") from None
    return _eval(tree, {})


def _flat(v):
    if isinstance(v, tuple):
        out = []
        for item in v:
            out.extend(_flat(item))
        return out
    return [float(v)]


def parse_arcs(text: str, grid: DomainGrid) -> BoundaryArcSet:
    """``full`` or comma-separated ``a:b`` pairs of boundary parameters."""
    t = text.strip()
    if t.lower() == "full":
        return BoundaryArcSet.full(grid)
    arcs = []
    for part in t.split(","):
        if ":" not in part:
            raise ValueError(f"arc {part.strip()!r} is not of the form a:b")
        a, b = part.split(":", 1)
        arcs.append((float(evaluate_constant(a)), float(evaluate_constant(b))))
    return BoundaryArcSet.from_arcs(grid, arcs)


def _polar(grid: DomainGrid, x, y):
    cx, cy = (0.5, 0.5) if grid.shape == "square" else (0.0, 0.0)
    theta = np.mod(np.arctan2(y - cy, x - cx), 2 * np.pi)
    return theta, np.hypot(x - cx, y - cy)


@dataclass
class RunConfig:
    command: str = "forward"
    shape: str = "square"
    n: int = 64
    sigma: str = "1"
    sigma_tilde: str | None = None
    f: str = "x"
    gamma: str = "full"
    gamma_prime: str | None = None
    eps: tuple = ()
    bump_center: tuple = (0.5, 0.5)
    bump_radius: float = 0.4
    bump_margin: float | None = None
    mode: str = ProjectionMode.SUM_GRADIENT.value
    alpha: float = 0.5
    g_min: float = 1e-3
    level_factor: float = 0.5
    seed: int = 0
    out: str | None = None

    # ------------------------------------------------------------ construction
    @property
    def grid(self) -> DomainGrid:
        return DomainGrid(self.shape, self.n)

    def _field(self, text: str) -> ScalarField:
        g = self.grid
        func = parse_expression(PRESETS.get(text.strip(), text))

        def call(x, y):
            theta, r = _polar(g, x, y)
            return func(x=x, y=y, s=np.full_like(x, np.nan), theta=theta, r=r)

        return ScalarField.from_function(g, call)

    def sigma_field(self) -> ScalarField:
        return self._field(self.sigma)

    def has_perturbation(self) -> bool:
        return self.sigma_tilde is not None or len(self.eps) > 0

    def perturbation_spec(self) -> PerturbationSpec:
        return PerturbationSpec(self.sigma_field(), tuple(self.bump_center), float(self.bump_radius),
                                tuple(self.eps), self.bump_margin, self.gamma_set())

    def sigma_tilde_field(self, eps: float | None = None) -> ScalarField:
        """Explicit ``sigma_tilde`` expression, else ``sigma + eps * bump``."""
        if self.sigma_tilde is not None:
            return self._field(self.sigma_tilde)
        if eps is None:
            if len(self.eps) != 1:
                raise ValueError("a single eps value (or sigma_tilde) is needed")
            eps = self.eps[0]
        return make_perturbation(self.perturbation_spec(), eps)

    def boundary_values(self) -> np.ndarray:
        g = self.grid
        func = parse_expression(self.f)
        s = g.boundary_s
        if g.shape == "square":
            idx = g.boundary_index
            x, y = g.x[idx[:, 0], idx[:, 1]], g.y[idx[:, 0], idx[:, 1]]
        else:
            pts = g.boundary_point(s)
            x, y = pts[:, 0], pts[:, 1]
        theta, r = _polar(g, x, y)
        vals = func(x=x, y=y, s=s, theta=theta, r=r)
        return np.broadcast_to(np.asarray(vals, dtype=float), s.shape).copy()

    def gamma_set(self) -> BoundaryArcSet:
        return parse_arcs(self.gamma, self.grid)

    def gamma_prime_set(self) -> BoundaryArcSet:
        """Explicit ``gamma_prime``, else ``gamma`` shrunk by ``2h``."""
        if self.gamma_prime is not None:
            return parse_arcs(self.gamma_prime, self.grid)
        return self.gamma_set().shrink(2 * self.grid.h)

    # -------------------------------------------------------------- validation
    def validate(self) -> list[str]:
        errs = []
        if self.command not in COMMANDS:
            errs.append(f"command: must be one of {', '.join(COMMANDS)}")
        if self.shape not in ("square", "disk"):
            errs.append("shape: must be square or disk")
        if not (32 <= self.n <= 512 and self.n & (self.n - 1) == 0):
            errs.append("n: resolution must be a power of two between 32 and 512")
        try:
            ProjectionMode(self.mode)
        except ValueError:
            errs.append("mode: must be sum_gradient or exact_gradient")
        if not self.alpha > 0:
            errs.append("alpha: must be positive")
        if not self.g_min > 0:
            errs.append("g_min: must be positive")
        if not self.level_factor > 0:
            errs.append("level_factor: must be positive")
        if any(not e >= 0 for e in self.eps):
            errs.append("eps: values must be non-negative")
        if len(self.bump_center) != 2:
            errs.append("bump_center: needs two coordinates")
        if errs:
            return errs  # the remaining checks need a valid grid
        for key in ("sigma", "sigma_tilde"):
            text = getattr(self, key)
            if text is None:
                continue
            try:
                vals = self._field(text).values[self.grid.domain]
                if np.min(vals) <= 0:
                    errs.append(f"{key}: conductivity must be positive on the domain")
            except Exception as exc:  # noqa: BLE001
                errs.append(f"{key}: {exc}")
        try:
            fb = self.boundary_values()
            if not np.all(np.isfinite(fb)):
                errs.append("f: boundary data must be finite")
        except Exception as exc:  # noqa: BLE001
            errs.append(f"f: {exc}")
        gamma = gp = None
        try:
            gamma = self.gamma_set()
        except Exception as exc:  # noqa: BLE001
            errs.append(f"gamma: {exc}")
        try:
            gp = self.gamma_prime_set() if gamma is not None or self.gamma_prime is not None else None
        except Exception as exc:  # noqa: BLE001
            errs.append(f"gamma_prime: {exc}")
        if gamma is not None and gp is not None:
            if not gamma.compactly_contains(gp, 2 * self.grid.h - 1e-12):
                errs.append("gamma_prime: must lie inside gamma with a margin of at least 2h")
        needs_pert = self.command in ("decompose", "reconstruct", "ampere")
        if needs_pert and not self.has_perturbation():
            errs.append(f"{self.command}: needs sigma_tilde or eps")
        if needs_pert and self.sigma_tilde is None and len(self.eps) > 1:
            errs.append(f"{self.command}: takes a single eps value")
        if self.command == "sweep":
            if self.sigma_tilde is not None:
                errs.append("sweep: perturbations come from eps and the bump keys, not sigma_tilde")
            if len(set(self.eps)) < 4:
                errs.append("sweep: needs at least four distinct eps values")
        if self.sigma_tilde is None and self.eps and gamma is not None and not errs:
            try:
                spec = self.perturbation_spec()
                for e in self.eps:
                    make_perturbation(spec, e)
            except Exception as exc:  # noqa: BLE001
                errs.append(f"perturbation: {exc}")
        if self.command == "ampere":
            if self.shape != "square":
                errs.append("ampere: the uniform-field geometry is defined on the square")
            elif not errs:
                s = self.sigma_field().values[self.grid.domain]
                if not np.all(s == 1.0):
                    errs.append("ampere: geometry mismatch, sigma must be 1")
                if self.f.strip() != "x":
                    errs.append("ampere: geometry mismatch, f must be x")
        return errs

    def check(self) -> "RunConfig":
        errs = self.validate()
        if errs:
            raise ConfigError(errs)
        return self

    # ------------------------------------------------------------ serialization
    def to_text(self) -> str:
        lines = []
        for fd in fields(self):
            val = getattr(self, fd.name)
            if val is None or (fd.name == "eps" and not val):
                continue
            if isinstance(val, tuple):
                txt = ", ".join(repr(float(v)) for v in val)
            elif isinstance(val, float):
                txt = repr(val)
            else:
                txt = str(val)
            lines.append(f"{fd.name} = {txt}")
        return "\n".join(lines) + "\n"


_TYPES = {fd.name: fd.type for fd in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    if key in ("eps", "bump_center"):
        val = evaluate_constant(raw)
        return tuple(_flat(val))
    if kind == "int":
        val = evaluate_constant(raw)
        if float(val) != int(val):
            raise ValueError("expected an integer")
        return int(val)
    if kind.startswith("float"):
        return float(evaluate_constant(raw))
    return raw.strip()


def parse_config_text(text: str, strict: bool = True) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    kw, errs = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errs.append(f"line {lineno}: expected key = value")
            continue
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            errs.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in kw:
            errs.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            kw[key] = _convert(key, raw)
        except Exception as exc:  # noqa: BLE001
            errs.append(f"line {lineno}: {key}: {exc}")
    if errs:
        raise ConfigError(errs)
    cfg = RunConfig(**kw)
    return cfg.check() if strict else cfg


def load_config(path, strict: bool = True) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), strict)
