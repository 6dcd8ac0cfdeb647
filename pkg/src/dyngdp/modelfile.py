"""Human-readable text format for :class:`~dyngdp.model.DagdpModel`.

One ``key: value`` pair per line; ``#`` starts a comment.  Expressions and
propositions use prefix notation with the model's variable names::

    format: dagdp-model
    version: 1
    name: toy
    stage_times: 0.0 1.0
    state: x lower=0.0 upper=10.0 initial=1.0
    integrand: (pow x 2.0)
    objective_scale: -1.0
    disjunct: stage=1 index=1 name=decay
    rhs.x: (neg x)
    proposition: (or Y[1,1])

Disjunct-scoped keys (``rhs.<state>``, ``algebraic_eq``) attach to the most
recent ``disjunct`` header.  Disjuncts must appear in stage/index order.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

from .errors import ModelFormatError
from .expr import parse_prefix, to_prefix
from .model import (
    AlgebraicVar,
    ControlVar,
    DagdpModel,
    Disjunct,
    Parameter,
    Proposition,
    StateVar,
)

FORMAT = "dagdp-model"
VERSION = 1


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _prop_to_text(p: Proposition) -> str:
    if p.op == "atom":
        return f"Y[{p.stage},{p.disjunct}]"
    return "(" + " ".join([p.op] + [_prop_to_text(a) for a in p.args]) + ")"


_PTOK = re.compile(r"\(|\)|[^\s()]+")


def _parse_prop(text: str) -> Proposition:
    tokens = _PTOK.findall(text)
    pos = 0

    def parse():
        nonlocal pos
        if pos >= len(tokens):
            raise ModelFormatError("unexpected end of proposition")
        tok = tokens[pos]
        pos += 1
        if tok != "(":
            m = re.fullmatch(r"Y\[(\d+),(\d+)\]", tok)
            if not m:
                raise ModelFormatError(f"bad atom {tok!r}")
            return Proposition("atom", stage=int(m.group(1)), disjunct=int(m.group(2)))
        op = tokens[pos]
        pos += 1
        args = []
        while pos < len(tokens) and tokens[pos] != ")":
            args.append(parse())
        if pos >= len(tokens):
            raise ModelFormatError("missing ')' in proposition")
        pos += 1
        arity = {"not": 1, "implies": 2, "iff": 2}
        if op not in ("not", "and", "or", "xor", "implies", "iff"):
            raise ModelFormatError(f"unknown connective {op!r}")
        if op in arity and len(args) != arity[op]:
            raise ModelFormatError(f"{op} takes {arity[op]} operands")
        return Proposition(op, tuple(args))

    prop = parse()
    if pos != len(tokens):
        raise ModelFormatError("trailing tokens after proposition")
    return prop


def dumps(model: DagdpModel) -> str:
    names = model.namespace
    lines = [
        f"format: {FORMAT}",
        f"version: {VERSION}",
        f"name: {model.name}",
        "stage_times: " + " ".join(_num(t) for t in model.stage_times),
    ]
    for s in model.states:
        lines.append(f"state: {s.name} lower={_num(s.lower)} upper={_num(s.upper)} initial={_num(s.initial)}")
    for c in model.controls:
        fixed = "" if c.fixed_initial is None else f" fixed_initial={_num(c.fixed_initial)}"
        lines.append(f"control: {c.name} lower={_num(c.lower)} upper={_num(c.upper)}{fixed}")
    for a in model.algebraics:
        lines.append(f"algebraic: {a.name} lower={_num(a.lower)} upper={_num(a.upper)}")
    for p in model.parameters:
        lines.append(f"parameter: {p.name} lower={_num(p.lower)} upper={_num(p.upper)}")
    lines.append(f"objective_scale: {_num(model.objective_scale)}")
    if model.integrand is not None:
        lines.append(f"integrand: {to_prefix(model.integrand, names)}")
    for e in model.constraints:
        lines.append(f"constraint: {to_prefix(e, names)}")
    for k, disj in enumerate(model.disjunctions, start=1):
        for r, d in enumerate(disj, start=1):
            header = f"disjunct: stage={k} index={r}"
            if d.name:
                header += f" name={d.name}"
            lines.append(header)
            for s, e in zip(model.states, d.rhs):
                lines.append(f"rhs.{s.name}: {to_prefix(e, names)}")
            for e in d.algebraic:
                lines.append(f"algebraic_eq: {to_prefix(e, names)}")
    for p in model.propositions:
        lines.append(f"proposition: {_prop_to_text(p)}")
    return "\n".join(lines) + "\n"


def _fields(rest: str) -> tuple[str, dict[str, str]]:
    parts = rest.split()
    if not parts:
        raise ModelFormatError("missing declaration name")
    kv = {}
    for item in parts[1:]:
        if "=" not in item:
            raise ModelFormatError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        kv[k] = v
    return parts[0], kv


def loads(text: str) -> DagdpModel:
    header: dict[str, str] = {}
    states, controls, algebraics, parameters = [], [], [], []
    raw_exprs = []  # (kind, text, disjunct key)
    disjuncts: dict[tuple[int, int], dict] = {}
    current = None
    props = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ModelFormatError(f"line {lineno}: expected 'key: value'")
        key, rest = (s.strip() for s in line.split(":", 1))
        try:
            if key in ("format", "version", "name", "stage_times", "objective_scale"):
                header[key] = rest
            elif key == "state":
                name, kv = _fields(rest)
                states.append(StateVar(name, float(kv["lower"]), float(kv["upper"]), float(kv["initial"])))
            elif key == "control":
                name, kv = _fields(rest)
                fixed = kv.get("fixed_initial")
                controls.append(ControlVar(name, float(kv["lower"]), float(kv["upper"]),
                                           None if fixed is None else float(fixed)))
            elif key == "algebraic":
                name, kv = _fields(rest)
                algebraics.append(AlgebraicVar(name, float(kv["lower"]), float(kv["upper"])))
            elif key == "parameter":
                name, kv = _fields(rest)
                parameters.append(Parameter(name, float(kv["lower"]), float(kv["upper"])))
            elif key in ("integrand", "constraint"):
                raw_exprs.append((key, rest))
            elif key == "disjunct":
                kv = dict(item.split("=", 1) for item in rest.split())
                current = (int(kv["stage"]), int(kv["index"]))
                if current in disjuncts:
                    raise ModelFormatError(f"duplicate disjunct {current}")
                disjuncts[current] = {"name": kv.get("name", ""), "rhs": {}, "alg": []}
            elif key.startswith("rhs."):
                if current is None:
                    raise ModelFormatError("rhs outside a disjunct")
                disjuncts[current]["rhs"][key[4:]] = rest
            elif key == "algebraic_eq":
                if current is None:
                    raise ModelFormatError("algebraic_eq outside a disjunct")
                disjuncts[current]["alg"].append(rest)
            elif key == "proposition":
                props.append(_parse_prop(rest))
            else:
                raise ModelFormatError(f"unknown key {key!r}")
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ModelFormatError):
                raise ModelFormatError(f"line {lineno}: {exc}") from None
            raise ModelFormatError(f"line {lineno}: {exc!r}") from None

    if header.get("format") != FORMAT:
        raise ModelFormatError(f"not a {FORMAT} file")
    if int(header.get("version", "0")) != VERSION:
        raise ModelFormatError(f"unsupported version {header.get('version')}")
    times = tuple(float(t) for t in header["stage_times"].split())
    names = (
        [s.name for s in states] + [c.name for c in controls]
        + [a.name for a in algebraics] + [p.name for p in parameters] + ["t"]
    )
    index = {n: i for i, n in enumerate(names)}
    integrand = None
    constraints = []
    for kind, body in raw_exprs:
        e = parse_prefix(body, index)
        if kind == "integrand":
            integrand = e
        else:
            constraints.append(e)
    n_stages = len(times) - 1
    disjunctions = []
    for k in range(1, n_stages + 1):
        stage = []
        r = 1
        while (k, r) in disjuncts:
            d = disjuncts.pop((k, r))
            missing = [s.name for s in states if s.name not in d["rhs"]]
            if missing:
                raise ModelFormatError(f"disjunct ({k},{r}) lacks rhs for {missing}")
            rhs = tuple(parse_prefix(d["rhs"][s.name], index) for s in states)
            alg = tuple(parse_prefix(a, index) for a in d["alg"])
            stage.append(Disjunct(rhs, alg, d["name"]))
            r += 1
        disjunctions.append(tuple(stage))
    if disjuncts:
        raise ModelFormatError(f"disjuncts outside the stage range or with gaps: {sorted(disjuncts)}")
    return DagdpModel(
        stage_times=times,
        states=tuple(states),
        controls=tuple(controls),
        disjunctions=tuple(disjunctions),
        propositions=tuple(props),
        integrand=integrand,
        objective_scale=float(header.get("objective_scale", "1.0")),
        algebraics=tuple(algebraics),
        parameters=tuple(parameters),
        constraints=tuple(constraints),
        name=header.get("name", "model"),
    )


def save(model: DagdpModel, path) -> None:
    Path(path).write_text(dumps(model))


def load(path) -> DagdpModel:
    return loads(Path(path).read_text())
