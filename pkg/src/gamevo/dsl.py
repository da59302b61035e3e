"""Textual formula language and JSON persistence for adaptive models.

Surface syntax, one term per effect, joined by ``+``::

    lin(Temp)
    s(Temp, bs=cr, k=10)            # cubic spline (cr) or cyclic (cc)
    cat(Day)                        # categorical indicators
    cat(Day, select=1011011)        # keep only the set modalities
    cat(Day, days=[1,2,5])          # keep only the listed weekdays
    smooth(Temp, alpha=0.95, bs=cr, k=10)
    lag(Load, offsets=[1,7], bs=cr, k=5)
    te(Temp, Hour, k=(10,8))        # optional bs=(cr,cc) / bs=(cr,cat)

The adaptive part is appended as ``| Q=[q1,...,qK]``. ``serialize`` emits
the canonical spelling; ``deserialize`` accepts it back (round-trip is
structural equality). ``model_to_dict``/``model_from_dict`` give the JSON
persistence form mirroring the types field for field.
"""

from __future__ import annotations

import re

from .formula import (
    IDENTITY,
    AdaptiveModel,
    BasisSpec,
    Covariate,
    CovariateRegistry,
    Effect,
    FeatureEngineering,
    Formula,
)

__all__ = ["ParseError", "serialize", "deserialize",
           "model_to_dict", "model_from_dict",
           "registry_to_dict", "registry_from_dict"]

_BS_CODE = {"cubic-spline": "cr", "cyclic-cubic-spline": "cc",
            "categorical-indicator": "cat", "linear": "lin"}
_BS_FAMILY = {v: k for k, v in _BS_CODE.items()}


class ParseError(ValueError):
    """Malformed formula text; carries 1-based line and column."""

    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>[0-9]+\.[0-9]*(?:[eE][+-]?[0-9]+)?|[0-9]+(?:[eE][+-]?[0-9]+)?|\.[0-9]+(?:[eE][+-]?[0-9]+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),=\[\]+|-])
""", re.VERBOSE)


class _Lexer:
    def __init__(self, text):
        self.tokens = []
        line, col = 1, 1
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise ParseError(f"unexpected character {text[pos]!r}", line, col)
            value = m.group(0)
            if m.lastgroup != "ws":
                self.tokens.append((m.lastgroup, value, line, col))
            for ch in value:
                if ch == "\n":
                    line += 1
                    col = 1
                else:
                    col += 1
            pos = m.end()
        self.tokens.append(("eof", "", line, col))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        if tok[0] != "eof":
            self.i += 1
        return tok

    def expect(self, value):
        kind, val, line, col = self.peek()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}",
                             line, col)
        return self.next()


class _Parser:
    def __init__(self, text):
        self.lx = _Lexer(text)

    def fail(self, message):
        _, val, line, col = self.lx.peek()
        raise ParseError(message, line, col)

    def parse_model(self):
        effects = [self.parse_term()]
        while self.lx.peek()[1] == "+":
            self.lx.next()
            effects.append(self.parse_term())
        q_diag = None
        if self.lx.peek()[1] == "|":
            self.lx.next()
            name = self.lx.next()
            if name[1] != "Q":
                raise ParseError("expected 'Q' after '|'", name[2], name[3])
            self.lx.expect("=")
            q_diag = tuple(self.parse_float_list())
        kind, val, line, col = self.lx.peek()
        if kind != "eof":
            raise ParseError(f"unexpected trailing input {val!r}", line, col)
        return AdaptiveModel(Formula(tuple(effects)), q_diag)

    # ---- terms ----

    def parse_term(self):
        kind, head, line, col = self.lx.next()
        if kind != "name":
            raise ParseError(f"expected a term, found {head or 'end of input'!r}",
                             line, col)
        handler = getattr(self, f"_term_{head}", None)
        if handler is None:
            raise ParseError(f"unknown term {head!r}", line, col)
        self.lx.expect("(")
        effect = handler()
        self.lx.expect(")")
        return effect

    def _ident(self):
        kind, val, line, col = self.lx.next()
        if kind != "name":
            raise ParseError(f"expected an identifier, found {val!r}", line, col)
        return val

    def parse_kwargs(self, allowed):
        out = {}
        while self.lx.peek()[1] == ",":
            self.lx.next()
            kind, key, line, col = self.lx.next()
            if kind != "name" or key not in allowed:
                raise ParseError(
                    f"expected one of {sorted(allowed)}, found {key!r}", line, col)
            self.lx.expect("=")
            out[key] = self._value_for(key)
        return out

    def _value_for(self, key):
        if key in ("offsets", "days"):
            return self.parse_int_list()
        if key == "alpha":
            return self.parse_number()
        if key == "k":
            if self.lx.peek()[1] == "(":
                self.lx.next()
                a = self.parse_int()
                self.lx.expect(",")
                b = self.parse_int()
                self.lx.expect(")")
                return (a, b)
            return self.parse_int()
        if key == "bs":
            if self.lx.peek()[1] == "(":
                self.lx.next()
                a = self._bs_name()
                self.lx.expect(",")
                b = self._bs_name()
                self.lx.expect(")")
                return (a, b)
            return self._bs_name()
        if key == "select":
            kind, val, line, col = self.lx.next()
            if kind != "num" or not re.fullmatch(r"[01]+", val):
                raise ParseError(f"expected a bit string, found {val!r}", line, col)
            return tuple(int(c) for c in val)
        self.fail(f"no value rule for {key!r}")

    def _bs_name(self):
        kind, val, line, col = self.lx.next()
        if val not in _BS_FAMILY:
            raise ParseError(f"expected a basis code (cr, cc, cat, lin), "
                             f"found {val!r}", line, col)
        return _BS_FAMILY[val]

    def parse_int(self):
        kind, val, line, col = self.lx.next()
        if kind != "num" or not val.isdigit():
            raise ParseError(f"expected an integer, found {val!r}", line, col)
        return int(val)

    def parse_number(self):
        neg = False
        if self.lx.peek()[1] == "-":
            self.lx.next()
            neg = True
        kind, val, line, col = self.lx.next()
        if kind != "num":
            raise ParseError(f"expected a number, found {val!r}", line, col)
        x = float(val)
        return -x if neg else x

    def parse_int_list(self):
        self.lx.expect("[")
        items = [self.parse_int()]
        while self.lx.peek()[1] == ",":
            self.lx.next()
            items.append(self.parse_int())
        self.lx.expect("]")
        return tuple(items)

    def parse_float_list(self):
        self.lx.expect("[")
        items = [self.parse_number()]
        while self.lx.peek()[1] == ",":
            self.lx.next()
            items.append(self.parse_number())
        self.lx.expect("]")
        return items

    # ---- term constructors ----

    def _term_lin(self):
        name = self._ident()
        self.parse_kwargs(set())
        return Effect((name,), (IDENTITY,), BasisSpec("linear", size=1))

    def _term_s(self):
        name = self._ident()
        kw = self.parse_kwargs({"bs", "k"})
        family = kw.get("bs", "cubic-spline")
        return Effect((name,), (IDENTITY,),
                      BasisSpec(family, size=kw.get("k", 10)))

    def _term_cat(self):
        name = self._ident()
        kw = self.parse_kwargs({"select", "days"})
        if "select" in kw and "days" in kw:
            self.fail("cat() takes select= or days=, not both")
        if "select" in kw:
            eng = FeatureEngineering("category-select", select=kw["select"])
        elif "days" in kw:
            eng = FeatureEngineering("day-set", days=kw["days"])
        else:
            eng = IDENTITY
        return Effect((name,), (eng,), BasisSpec("categorical-indicator"))

    def _term_smooth(self):
        name = self._ident()
        kw = self.parse_kwargs({"alpha", "bs", "k"})
        if "alpha" not in kw:
            self.fail("smooth() requires alpha=")
        eng = FeatureEngineering("exp-smooth", alpha=kw["alpha"])
        return Effect((name,), (eng,),
                      BasisSpec(kw.get("bs", "cubic-spline"), size=kw.get("k", 10)))

    def _term_lag(self):
        name = self._ident()
        kw = self.parse_kwargs({"offsets", "bs", "k"})
        if "offsets" not in kw:
            self.fail("lag() requires offsets=")
        eng = FeatureEngineering("lag-set", offsets=kw["offsets"])
        return Effect((name,), (eng,),
                      BasisSpec(kw.get("bs", "cubic-spline"), size=kw.get("k", 10)))

    def _term_te(self):
        a = self._ident()
        self.lx.expect(",")
        b = self._ident()
        kw = self.parse_kwargs({"k", "bs"})
        sizes = kw.get("k", (10, 10))
        if not isinstance(sizes, tuple):
            self.fail("te() needs k=(INT,INT)")
        fams = kw.get("bs", ("cubic-spline", "cubic-spline"))
        if not isinstance(fams, tuple):
            self.fail("te() needs bs=(...,...)")
        basis = BasisSpec("tensor-product", marginal_families=fams,
                          marginal_sizes=sizes)
        return Effect((a, b), (IDENTITY, IDENTITY), basis)


def deserialize(text: str) -> AdaptiveModel:
    """Parse formula text into an AdaptiveModel (fixed mode if no Q part)."""
    return _Parser(text).parse_model()


def _fmt_float(x):
    return repr(float(x))


def _effect_to_text(effect: Effect) -> str:
    b = effect.basis
    if effect.is_bivariate:
        fams = ",".join(_BS_CODE[f] for f in b.marginal_families)
        return (f"te({effect.covariates[0]}, {effect.covariates[1]}, "
                f"k=({b.marginal_sizes[0]},{b.marginal_sizes[1]}), bs=({fams}))")
    name = effect.covariates[0]
    eng = effect.engineering[0]
    if eng.variant == "exp-smooth":
        return (f"smooth({name}, alpha={_fmt_float(eng.alpha)}, "
                f"bs={_BS_CODE[b.family]}, k={b.size})")
    if eng.variant == "lag-set":
        offs = ",".join(str(o) for o in eng.offsets)
        return f"lag({name}, offsets=[{offs}], bs={_BS_CODE[b.family]}, k={b.size})"
    if b.family == "categorical-indicator":
        if eng.variant == "category-select":
            bits = "".join(str(b_) for b_ in eng.select)
            return f"cat({name}, select={bits})"
        if eng.variant == "day-set":
            days = ",".join(str(d) for d in eng.days)
            return f"cat({name}, days=[{days}])"
        return f"cat({name})"
    if b.family == "linear":
        return f"lin({name})"
    return f"s({name}, bs={_BS_CODE[b.family]}, k={b.size})"


def serialize(model: AdaptiveModel | Formula) -> str:
    """Canonical textual spelling; inverse of :func:`deserialize`."""
    if isinstance(model, Formula):
        model = AdaptiveModel(model)
    text = " + ".join(_effect_to_text(e) for e in model.formula)
    if model.q_diag is not None:
        qs = ", ".join(_fmt_float(q) for q in model.q_diag)
        text += f" | Q=[{qs}]"
    return text


# ---- JSON persistence (field-for-field mirror of the types) ----

def _eng_to_dict(eng: FeatureEngineering):
    d = {"variant": eng.variant}
    if eng.alpha is not None:
        d["alpha"] = eng.alpha
    if eng.select is not None:
        d["select"] = list(eng.select)
    if eng.offsets is not None:
        d["offsets"] = list(eng.offsets)
    if eng.days is not None:
        d["days"] = list(eng.days)
    return d


def _eng_from_dict(d):
    return FeatureEngineering(
        d["variant"],
        alpha=d.get("alpha"),
        select=tuple(d["select"]) if "select" in d else None,
        offsets=tuple(d["offsets"]) if "offsets" in d else None,
        days=tuple(d["days"]) if "days" in d else None,
    )


def _basis_to_dict(b: BasisSpec):
    d = {"family": b.family}
    if b.size is not None:
        d["size"] = b.size
    if b.marginal_families is not None:
        d["marginal_families"] = list(b.marginal_families)
        d["marginal_sizes"] = list(b.marginal_sizes)
    return d


def _basis_from_dict(d):
    return BasisSpec(
        d["family"],
        size=d.get("size"),
        marginal_families=tuple(d["marginal_families"]) if "marginal_families" in d else None,
        marginal_sizes=tuple(d["marginal_sizes"]) if "marginal_sizes" in d else None,
    )


def model_to_dict(model: AdaptiveModel) -> dict:
    return {
        "effects": [
            {
                "covariates": list(e.covariates),
                "engineering": [_eng_to_dict(g) for g in e.engineering],
                "basis": _basis_to_dict(e.basis),
            }
            for e in model.formula
        ],
        "q_diag": list(model.q_diag) if model.q_diag is not None else None,
    }


def model_from_dict(d: dict) -> AdaptiveModel:
    effects = tuple(
        Effect(
            tuple(e["covariates"]),
            tuple(_eng_from_dict(g) for g in e["engineering"]),
            _basis_from_dict(e["basis"]),
        )
        for e in d["effects"]
    )
    q = d.get("q_diag")
    return AdaptiveModel(Formula(effects), tuple(q) if q is not None else None)


def registry_to_dict(registry: CovariateRegistry) -> list[dict]:
    out = []
    for c in registry:
        d = {"name": c.name, "kind": c.kind}
        if c.period is not None:
            d["period"] = c.period
        if c.modalities is not None:
            d["modalities"] = c.modalities
        out.append(d)
    return out


def registry_from_dict(items) -> CovariateRegistry:
    return CovariateRegistry([
        Covariate(d["name"], d["kind"], period=d.get("period"),
                  modalities=d.get("modalities"))
        for d in items
    ])
