"""Mixed-integer encoding of the training objective, plus text export.

The encoding uses one error indicator per example (big-M linked), one
nonzero indicator and one magnitude variable per feature, and one bounded
integer variable per coefficient: N + 3P variables (+1 with an intercept)
and 2N + 4P one-sided rows. All row/objective coefficients are exact
fractions read from the decimal repr of the data values, so feasibility
and objective checks are free of float tie ambiguity.

Two interchange formats are written: a fixed-column legacy format and a
free-form algebraic format (see docs/mip_formats.md). Restricted
coefficient domains are kept as metadata on the instance and expanded to
one-of-set selector variables only at export time, which keeps the core
variable/row counts intact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .model import CoefficientLattice, Dataset, TrainConfig, as_decimal_fraction

MAX_FIXED_NAME = 8

SENSES = (">=", "<=", "=")


def _dec(value: float) -> Fraction:
    """Exact fraction of a float's shortest decimal repr."""
    return Fraction(Decimal(repr(float(value))))


@dataclass(frozen=True)
class VarDef:
    name: str
    kind: str  # binary | integer | continuous
    lower: int | None  # None = -inf
    upper: int | None  # None = +inf


@dataclass(frozen=True)
class RowDef:
    name: str
    coeffs: tuple[tuple[str, Fraction], ...]
    sense: str
    rhs: Fraction


@dataclass(frozen=True)
class MipInstance:
    name: str
    variables: tuple[VarDef, ...]
    constraints: tuple[RowDef, ...]
    objective: tuple[tuple[str, Fraction], ...]  # minimization
    lattice_domains: tuple[tuple[str, tuple[int, ...]], ...]
    n: int
    p: int
    has_intercept: bool

    def variable(self, name: str) -> VarDef:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def objective_value(self, assignment: Mapping[str, Fraction]) -> Fraction:
        return sum((c * assignment[name] for name, c in self.objective), Fraction(0))


@dataclass(frozen=True)
class Violation:
    kind: str  # row | bound | integrality | domain
    name: str
    detail: str
    slack: Fraction


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    violations: tuple[Violation, ...]
    objective_value: Fraction


def var_error(i: int) -> str:
    return f"e{i + 1}"


def var_nonzero(j: int) -> str:
    return f"z{j + 1}"


def var_magnitude(j: int) -> str:
    return f"m{j + 1}"


def var_coef(j: int) -> str:
    return f"w{j + 1}"


VAR_INTERCEPT = "w0"


def encode(data: Dataset, lattice: CoefficientLattice, cfg: TrainConfig,
           name: str = "scoring") -> MipInstance:
    """Materialize the training MIP for a dataset/lattice/config triple.

    The auto big-M rule is bound * max|x_ij|; an explicitly configured
    big_m must exceed the largest achievable |score|, otherwise it could
    cut optimal coefficient vectors and is rejected.
    """
    if lattice.p != data.p:
        raise ValueError(f"lattice has {lattice.p} coordinates but data has {data.p} features")
    if cfg.intercept == "penalized":
        raise ValueError("penalized intercepts are not representable in the "
                         "N+3P(+1) encoding; train with the lattice solver instead")
    has_intercept = cfg.intercept != "none"

    x = data.features
    y = data.labels
    n, p = data.n, data.p
    bound = lattice.bound

    max_abs = [max(abs(v) for v in s) for s in lattice.sets]
    score_cap = float(np.max(np.abs(x) @ np.asarray(max_abs, dtype=np.float64)))
    if has_intercept:
        score_cap += bound
    resolved_m = cfg.resolved_big_m(data, lattice)
    if cfg.big_m is not None and float(cfg.big_m) <= score_cap:
        raise ValueError(f"big_m={float(cfg.big_m)!r} does not exceed the maximum "
                         f"achievable |score| {score_cap!r}; optima could be cut")
    if not resolved_m > 0:
        raise ValueError("resolved big_m is not positive (all-zero feature matrix?)")

    big_m = _dec(resolved_m)
    eps = _dec(cfg.epsilon)

    variables = []
    for i in range(n):
        variables.append(VarDef(var_error(i), "binary", 0, 1))
    for j in range(p):
        variables.append(VarDef(var_nonzero(j), "binary", 0, 1))
    for j in range(p):
        variables.append(VarDef(var_magnitude(j), "continuous", 0, None))
    for j in range(p):
        variables.append(VarDef(var_coef(j), "integer", -bound, bound))
    if has_intercept:
        variables.append(VarDef(VAR_INTERCEPT, "integer", -bound, bound))

    rows = []
    for i in range(n):
        terms = []
        for j in range(p):
            if x[i, j] != 0.0:
                terms.append((var_coef(j), int(y[i]) * _dec(x[i, j])))
        if has_intercept:
            terms.append((VAR_INTERCEPT, Fraction(int(y[i]))))
        lo_terms = tuple(terms + [(var_error(i), big_m)])
        rows.append(RowDef(f"el{i + 1}", lo_terms, ">=", eps))
        rows.append(RowDef(f"eu{i + 1}", lo_terms, "<=", big_m + eps))
    lam = Fraction(bound)
    for j in range(p):
        w, z, m = var_coef(j), var_nonzero(j), var_magnitude(j)
        rows.append(RowDef(f"zl{j + 1}", ((w, Fraction(1)), (z, lam)), ">=", Fraction(0)))
        rows.append(RowDef(f"zu{j + 1}", ((w, Fraction(1)), (z, -lam)), "<=", Fraction(0)))
        rows.append(RowDef(f"ml{j + 1}", ((w, Fraction(1)), (m, Fraction(1))), ">=", Fraction(0)))
        rows.append(RowDef(f"mu{j + 1}", ((w, Fraction(1)), (m, Fraction(-1))), "<=", Fraction(0)))

    objective = []
    inv_n = Fraction(1, n)
    for i in range(n):
        objective.append((var_error(i), inv_n))
    for j in range(p):
        objective.append((var_nonzero(j), cfg.c0_exact))
    for j in range(p):
        objective.append((var_magnitude(j), cfg.c1_exact))

    full = tuple(range(-bound, bound + 1))
    domains = tuple((var_coef(j), s) for j, s in enumerate(lattice.sets) if s != full)

    return MipInstance(name=name, variables=tuple(variables), constraints=tuple(rows),
                       objective=tuple(objective), lattice_domains=domains,
                       n=n, p=p, has_intercept=has_intercept)


def induced_assignment(data: Dataset, lattice: CoefficientLattice, cfg: TrainConfig,
                       coefficients: Sequence[int], intercept: int = 0) -> dict[str, Fraction]:
    """Assignment (errors, nonzeros, magnitudes, coefficients) induced by a
    coefficient vector, with error indicators set from y*score <= 0."""
    coefs = [int(c) for c in coefficients]
    if len(coefs) != data.p:
        raise ValueError(f"expected {data.p} coefficients, got {len(coefs)}")
    margins = data.labels * (data.features @ np.asarray(coefs, dtype=np.float64) + intercept)
    values: dict[str, Fraction] = {}
    for i in range(data.n):
        values[var_error(i)] = Fraction(1 if margins[i] <= 0 else 0)
    for j, c in enumerate(coefs):
        values[var_nonzero(j)] = Fraction(1 if c != 0 else 0)
        values[var_magnitude(j)] = Fraction(abs(c))
        values[var_coef(j)] = Fraction(c)
    if cfg.intercept != "none":
        values[VAR_INTERCEPT] = Fraction(int(intercept))
    return values


def verify_assignment(instance: MipInstance, assignment: Mapping[str, object],
                      tolerance: Fraction = Fraction(0)) -> FeasibilityReport:
    """Check a value map against every row, bound, integrality requirement
    and restricted coefficient domain. Slack is the signed margin to the
    relevant limit (negative = violated beyond `tolerance`)."""
    values: dict[str, Fraction] = {}
    for key, raw in assignment.items():
        if isinstance(raw, Fraction):
            values[key] = raw
        elif isinstance(raw, (int, np.integer)):
            values[key] = Fraction(int(raw))
        else:
            values[key] = _dec(float(raw))

    declared = {v.name for v in instance.variables}
    missing = sorted(declared - values.keys())
    if missing:
        raise ValueError(f"assignment is missing variables: {', '.join(missing[:5])}"
                         + (" ..." if len(missing) > 5 else ""))
    unknown = sorted(values.keys() - declared)
    if unknown:
        raise ValueError(f"assignment names undeclared variables: {', '.join(unknown[:5])}")

    violations: list[Violation] = []

    for v in instance.variables:
        val = values[v.name]
        if v.lower is not None and val < v.lower - tolerance:
            violations.append(Violation("bound", v.name, f"{v.name} = {val} < {v.lower}",
                                        val - v.lower))
        if v.upper is not None and val > v.upper + tolerance:
            violations.append(Violation("bound", v.name, f"{v.name} = {val} > {v.upper}",
                                        Fraction(v.upper) - val))
        if v.kind in ("binary", "integer") and val.denominator != 1:
            violations.append(Violation("integrality", v.name,
                                        f"{v.name} = {val} is not integral",
                                        -abs(val - round(val))))

    for row in instance.constraints:
        lhs = sum((c * values[name] for name, c in row.coeffs), Fraction(0))
        if row.sense == ">=":
            slack = lhs - row.rhs
        elif row.sense == "<=":
            slack = row.rhs - lhs
        else:
            slack = -abs(lhs - row.rhs)
        if slack < -tolerance:
            violations.append(Violation("row", row.name,
                                        f"{row.name}: lhs {lhs} {row.sense} {row.rhs} violated",
                                        slack))

    for wname, domain in instance.lattice_domains:
        val = values[wname]
        if val.denominator == 1 and int(val) not in domain:
            violations.append(Violation("domain", wname,
                                        f"{wname} = {val} outside allowed set", Fraction(-1)))

    obj = instance.objective_value(values)
    return FeasibilityReport(feasible=not violations, violations=tuple(violations),
                             objective_value=obj)


# ---------------------------------------------------------------------------
# text export / parse

def _norm_format(format: str) -> str:
    alias = {"interchange-fixed": "fixed", "fixed": "fixed",
             "interchange-free": "free", "free": "free"}
    if format not in alias:
        raise ValueError(f"unknown format {format!r}; use interchange-fixed or interchange-free")
    return alias[format]


def _fmt_value(v: Fraction, width: int | None = None) -> str:
    if v.denominator == 1:
        text = str(v.numerator)
    else:
        text = repr(float(v))
        if width is not None and len(text) > width:
            text = f"{float(v):.6G}"
    if width is not None and len(text) > width:
        raise ValueError(f"value {float(v)!r} does not fit in {width} columns")
    return text


def _selector_expansion(instance: MipInstance):
    """Export-time one-of-set encoding for restricted coefficient domains:
    binary selectors u with sum(u) = 1 and sum(v * u) - w = 0."""
    sel_vars: list[VarDef] = []
    sel_rows: list[RowDef] = []
    coef_index = {var_coef(j): j for j in range(instance.p)}
    for wname, domain in instance.lattice_domains:
        j = coef_index[wname]
        names = [f"s{j + 1}_{k}" for k in range(len(domain))]
        for nm in names:
            sel_vars.append(VarDef(nm, "binary", 0, 1))
        sel_rows.append(RowDef(f"sc{j + 1}",
                               tuple((nm, Fraction(1)) for nm in names), "=", Fraction(1)))
        link = tuple((nm, Fraction(v)) for nm, v in zip(names, domain) if v != 0)
        sel_rows.append(RowDef(f"sv{j + 1}", link + ((wname, Fraction(-1)),), "=", Fraction(0)))
    return sel_vars, sel_rows


def export(instance: MipInstance, format: str = "interchange-free") -> str:
    """Serialize an instance; output is byte-deterministic for equal inputs."""
    fmt = _norm_format(format)
    sel_vars, sel_rows = _selector_expansion(instance)
    variables = list(instance.variables) + sel_vars
    rows = list(instance.constraints) + sel_rows
    if fmt == "fixed":
        return _export_fixed(instance.name, variables, rows, instance.objective)
    return _export_free(instance.name, variables, rows, instance.objective)


def _export_free(name, variables, rows, objective) -> str:
    out = [f"\\ {name}", "Minimize"]
    terms = _join_terms(objective)
    out.extend(_wrap(" obj: " + terms, indent="     "))
    out.append("Subject To")
    for row in rows:
        out.append(f" {row.name}: {_join_terms(row.coeffs)} {row.sense} {_fmt_value(row.rhs)}")
    out.append("Bounds")
    for v in variables:
        if v.lower is not None and v.upper is not None:
            out.append(f" {v.lower} <= {v.name} <= {v.upper}")
        elif v.lower is not None:
            out.append(f" {v.lower} <= {v.name}")
        elif v.upper is not None:
            out.append(f" {v.name} <= {v.upper}")
        else:
            out.append(f" {v.name} free")
    generals = [v.name for v in variables if v.kind == "integer"]
    binaries = [v.name for v in variables if v.kind == "binary"]
    if generals:
        out.append("Generals")
        out.extend(_wrap(" " + " ".join(generals), indent=" "))
    if binaries:
        out.append("Binaries")
        out.extend(_wrap(" " + " ".join(binaries), indent=" "))
    out.append("End")
    return "\n".join(out) + "\n"


def _join_terms(coeffs) -> str:
    parts: list[str] = []
    for vname, c in coeffs:
        if not parts:
            lead = "-" if c < 0 else ""
            parts.append(f"{lead}{_fmt_value(abs(c))} {vname}")
        else:
            op = "-" if c < 0 else "+"
            parts.append(f"{op} {_fmt_value(abs(c))} {vname}")
    return " ".join(parts) if parts else "0"


def _wrap(text: str, indent: str, limit: int = 240) -> list[str]:
    if len(text) <= limit:
        return [text]
    words = text.split(" ")
    lines, cur = [], ""
    for word in words:
        if cur and len(cur) + 1 + len(word) > limit:
            lines.append(cur)
            cur = indent + word
        else:
            cur = word if not cur else cur + " " + word
    if cur:
        lines.append(cur)
    return lines


def _export_fixed(name, variables, rows, objective) -> str:
    for v in variables:
        if len(v.name) > MAX_FIXED_NAME:
            raise ValueError(f"variable name {v.name!r} exceeds {MAX_FIXED_NAME} characters "
                             "allowed by the fixed-column format")
    for row in rows:
        if len(row.name) > MAX_FIXED_NAME:
            raise ValueError(f"row name {row.name!r} exceeds {MAX_FIXED_NAME} characters "
                             "allowed by the fixed-column format")

    def fields(f1="", f2="", f3="", f4="", f5="", f6=""):
        line = " " + f1.ljust(3) + f2.ljust(10) + f3.ljust(10) + f4.ljust(15) + f5.ljust(10) + f6
        return line.rstrip()

    sense_code = {">=": "G", "<=": "L", "=": "E"}
    out = ["NAME".ljust(14) + name]
    out.append("ROWS")
    out.append(fields("N", "obj"))
    for row in rows:
        out.append(fields(sense_code[row.sense], row.name))

    # column-major entries: objective first, then rows in declaration order
    entries: dict[str, list[tuple[str, Fraction]]] = {v.name: [] for v in variables}
    for vname, c in objective:
        entries[vname].append(("obj", c))
    for row in rows:
        for vname, c in row.coeffs:
            entries[vname].append((row.name, c))

    out.append("COLUMNS")
    in_int = False
    marker = 0
    for v in variables:
        wants_int = v.kind in ("binary", "integer")
        if wants_int != in_int:
            marker += 1
            tag = "'INTORG'" if wants_int else "'INTEND'"
            out.append(fields("", f"MK{marker}", "'MARKER'", "", tag))
            in_int = wants_int
        pairs = entries[v.name]
        for k in range(0, len(pairs), 2):
            chunk = pairs[k:k + 2]
            if len(chunk) == 2:
                (r1, c1), (r2, c2) = chunk
                out.append(fields("", v.name, r1, _fmt_value(c1, 12), r2, _fmt_value(c2, 12)))
            else:
                (r1, c1), = chunk
                out.append(fields("", v.name, r1, _fmt_value(c1, 12)))
    if in_int:
        marker += 1
        out.append(fields("", f"MK{marker}", "'MARKER'", "", "'INTEND'"))

    out.append("RHS")
    for row in rows:
        if row.rhs != 0:
            out.append(fields("", "RHS", row.name, _fmt_value(row.rhs, 12)))

    out.append("BOUNDS")
    for v in variables:
        if v.kind == "binary":
            out.append(fields("BV", "BND", v.name))
        else:
            if v.lower is not None:
                code = "LI" if v.kind == "integer" else "LO"
                out.append(fields(code, "BND", v.name, _fmt_value(Fraction(v.lower), 12)))
            if v.upper is not None:
                code = "UI" if v.kind == "integer" else "UP"
                out.append(fields(code, "BND", v.name, _fmt_value(Fraction(v.upper), 12)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def parse(text: str, format: str) -> MipInstance:
    """Reference parser for the two interchange formats (own files only)."""
    fmt = _norm_format(format)
    if fmt == "fixed":
        return _parse_fixed(text)
    return _parse_free(text)


def _parse_terms(tokens: list[str]):
    coeffs = []
    sign = 1
    k = 0
    while k < len(tokens):
        tok = tokens[k]
        if tok == "+":
            sign = 1
            k += 1
            continue
        if tok == "-":
            sign = -1
            k += 1
            continue
        if tok.startswith("-"):
            sign = -1
            tok = tok[1:]
        value = Fraction(Decimal(tok))
        name = tokens[k + 1]
        coeffs.append((name, sign * value))
        sign = 1
        k += 2
    return tuple(coeffs)


def _parse_free(text: str) -> MipInstance:
    lines = [ln.rstrip() for ln in text.splitlines()]
    name = "parsed"
    if lines and lines[0].startswith("\\"):
        name = lines[0][1:].strip() or "parsed"
        lines = lines[1:]
    section = None
    obj_tokens: list[str] = []
    row_lines: list[str] = []
    bounds: dict[str, tuple[int | None, int | None]] = {}
    order: list[str] = []
    kinds: dict[str, str] = {}
    for ln in lines:
        stripped = ln.strip()
        if not stripped:
            continue
        if stripped in ("Minimize", "Subject To", "Bounds", "Generals", "Binaries", "End"):
            section = stripped
            continue
        if section == "Minimize":
            obj_tokens.extend(stripped.split())
        elif section == "Subject To":
            row_lines.append(stripped)
        elif section == "Bounds":
            toks = stripped.split()
            if toks[-1] == "free":
                nm = toks[0]
                lo, up = None, None
            elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
                lo, nm, up = int(toks[0]), toks[2], int(toks[4])
            elif len(toks) == 3 and toks[1] == "<=" and not toks[0].lstrip("-").isdigit():
                nm, lo, up = toks[0], None, int(toks[2])
            elif len(toks) == 3 and toks[1] == "<=":
                lo, nm, up = int(toks[0]), toks[2], None
            else:
                raise ValueError(f"unparseable bounds line: {ln!r}")
            bounds[nm] = (lo, up)
            order.append(nm)
            kinds.setdefault(nm, "continuous")
        elif section == "Generals":
            for nm in stripped.split():
                kinds[nm] = "integer"
        elif section == "Binaries":
            for nm in stripped.split():
                kinds[nm] = "binary"

    if obj_tokens and obj_tokens[0].startswith("obj:"):
        obj_tokens = obj_tokens[1:] if obj_tokens[0] == "obj:" else [obj_tokens[0][4:]] + obj_tokens[1:]
    objective = _parse_terms([t for t in obj_tokens if t])

    rows = []
    for ln in row_lines:
        rname, rest = ln.split(":", 1)
        toks = rest.split()
        sense_at = next(k for k, t in enumerate(toks) if t in SENSES)
        coeffs = _parse_terms(toks[:sense_at])
        rows.append(RowDef(rname.strip(), coeffs, toks[sense_at],
                           Fraction(Decimal(toks[sense_at + 1]))))

    variables = tuple(VarDef(nm, kinds.get(nm, "continuous"), *bounds[nm]) for nm in order)
    n = sum(1 for v in variables if v.name.startswith("e") and v.name[1:].isdigit())
    p = sum(1 for v in variables if v.name.startswith("z") and v.name[1:].isdigit())
    return MipInstance(name=name, variables=variables, constraints=tuple(rows),
                       objective=objective, lattice_domains=(),
                       n=n, p=p, has_intercept=any(v.name == VAR_INTERCEPT for v in variables))


def _parse_fixed(text: str) -> MipInstance:
    lines = text.splitlines()
    name = "parsed"
    section = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    col_entries: dict[str, list[tuple[str, Fraction]]] = {}
    col_order: list[str] = []
    col_kind: dict[str, str] = {}
    rhs: dict[str, Fraction] = {}
    bounds_lo: dict[str, int | None] = {}
    bounds_up: dict[str, int | None] = {}
    in_int = False
    sense_map = {"G": ">=", "L": "<=", "E": "="}

    for ln in lines:
        if not ln.strip() or ln.startswith("*"):
            continue
        if not ln.startswith(" "):
            head = ln.split()
            section = head[0]
            if section == "NAME" and len(head) > 1:
                name = head[1]
            continue
        toks = ln.split()
        if section == "ROWS":
            if toks[0] == "N":
                continue
            row_sense[toks[1]] = sense_map[toks[0]]
            row_order.append(toks[1])
        elif section == "COLUMNS":
            if len(toks) >= 3 and toks[1] == "'MARKER'":
                in_int = toks[2] == "'INTORG'"
                continue
            cname = toks[0]
            if cname not in col_entries:
                col_entries[cname] = []
                col_order.append(cname)
                col_kind[cname] = "integer" if in_int else "continuous"
            for k in range(1, len(toks) - 1, 2):
                col_entries[cname].append((toks[k], Fraction(Decimal(toks[k + 1]))))
        elif section == "RHS":
            rhs[toks[1]] = Fraction(Decimal(toks[2]))
        elif section == "BOUNDS":
            code, _, vname = toks[0], toks[1], toks[2]
            if code == "BV":
                col_kind[vname] = "binary"
                bounds_lo[vname] = 0
                bounds_up[vname] = 1
            elif code in ("LI", "LO"):
                bounds_lo[vname] = int(Decimal(toks[3]))
            elif code in ("UI", "UP"):
                bounds_up[vname] = int(Decimal(toks[3]))

    rows = []
    for rname in row_order:
        coeffs = []
        for cname in col_order:
            for ref, val in col_entries[cname]:
                if ref == rname:
                    coeffs.append((cname, val))
        rows.append(RowDef(rname, tuple(coeffs), row_sense[rname], rhs.get(rname, Fraction(0))))

    variables = []
    for cname in col_order:
        kind = col_kind[cname]
        lo = bounds_lo.get(cname, 0 if kind != "binary" else 0)
        up = bounds_up.get(cname, None if kind != "binary" else 1)
        variables.append(VarDef(cname, kind, lo, up))
    objective = tuple((cname, val) for cname in col_order
                      for ref, val in col_entries[cname] if ref == "obj")
    n = sum(1 for v in variables if v.name.startswith("e") and v.name[1:].isdigit())
    p = sum(1 for v in variables if v.name.startswith("z") and v.name[1:].isdigit())
    return MipInstance(name=name, variables=tuple(variables), constraints=tuple(rows),
                       objective=objective, lattice_domains=(),
                       n=n, p=p, has_intercept=any(v.name == VAR_INTERCEPT for v in variables))


def read_solution_values(text: str) -> dict[str, float]:
    """Minimal `name value` per-line reader for external solver solutions."""
    values: dict[str, float] = {}
    for lineno, ln in enumerate(text.splitlines(), start=1):
        stripped = ln.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'name value', got {ln!r}")
        try:
            values[parts[0]] = float(parts[1])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value {parts[1]!r}") from exc
    return values
