"""Mixture description strings.

Grammar (ASCII form of the usual sub/superscript notation)::

    spec      := term ("+" term)*
    term      := "F" sizes "^" histories | "R" size | "L" size
    sizes     := int ("," int)*
    histories := int | int "-" int | int ("," int)*

``F200^2-5`` is four feedforward components with histories 2, 3, 4 and 5,
each with 200 hidden units. A single size is shared by every history; a
size list must match the history list one to one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

KINDS = ("F", "R", "L")
RECURRENT = frozenset({"R", "L"})


class SpecError(ValueError):
    pass


class SpecParseError(SpecError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {text}\n  {pointer}")


@dataclass(frozen=True)
class ComponentSpec:
    kind: str
    hidden_size: int
    history: int = 1
    depth: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown component kind {self.kind!r}")
        if self.hidden_size < 1:
            raise SpecError(f"hidden size must be >= 1, got {self.hidden_size}")
        if self.kind == "F" and self.history < 2:
            raise SpecError(f"FNN history must be >= 2 (at least one context word), got {self.history}")
        if self.kind != "F" and self.history != 1:
            raise SpecError(f"{self.kind} components have history 1")
        if self.depth < 1:
            raise SpecError("depth must be >= 1")

    @property
    def recurrent(self) -> bool:
        return self.kind in RECURRENT


@dataclass(frozen=True)
class MixtureSpec:
    """Full model shape: components plus the shared layer sizes.

    ``mixture_size == 0`` means no mixture layer: the single component feeds
    the output softmax directly (the standalone baselines).
    """

    components: tuple[ComponentSpec, ...]
    embedding_size: int
    mixture_size: int
    vocab_size: int

    def __post_init__(self):
        if not self.components:
            raise SpecError("a mixture needs at least one component")
        if self.embedding_size < 1 or self.vocab_size < 1 or self.mixture_size < 0:
            raise SpecError("embedding and vocabulary sizes must be >= 1, mixture size >= 0")
        if self.standalone and len(self.components) != 1:
            raise SpecError("mixture_size 0 (no mixture layer) requires exactly one component")

    @property
    def standalone(self) -> bool:
        return self.mixture_size == 0

    @property
    def max_history(self) -> int:
        return max(c.history for c in self.components)

    @property
    def text(self) -> str:
        return render_spec(self.components)

    @classmethod
    def from_text(
        cls,
        text: str,
        embedding_size: int,
        mixture_size: int,
        vocab_size: int,
        fnn_depth: int = 1,
    ) -> "MixtureSpec":
        comps = parse_spec(text)
        if fnn_depth != 1:
            comps = tuple(replace(c, depth=fnn_depth) if c.kind == "F" else c for c in comps)
        return cls(comps, embedding_size, mixture_size, vocab_size)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str, pos: int | None = None):
        raise SpecParseError(message, self.text, self.pos if pos is None else pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def integer(self) -> int:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if start == self.pos:
            self.error("expected an integer")
        return int(self.text[start : self.pos])

    def int_list(self) -> list[int]:
        values = [self.integer()]
        while self.peek() == ",":
            self.pos += 1
            values.append(self.integer())
        return values

    def term(self) -> list[ComponentSpec]:
        kind = self.peek()
        if kind not in KINDS:
            self.error("expected component kind F, R or L")
        self.pos += 1
        if kind in RECURRENT:
            size_pos = self.pos
            size = self.integer()
            if size < 1:
                self.error("hidden size must be >= 1", size_pos)
            return [ComponentSpec(kind, size)]

        size_pos = self.pos
        sizes = self.int_list()
        self.expect("^")
        hist_pos = self.pos
        first = self.integer()
        if self.peek() == "-":
            self.pos += 1
            last = self.integer()
            if last < first:
                self.error(f"history range {first}-{last} is decreasing", hist_pos)
            histories = list(range(first, last + 1))
        elif self.peek() == ",":
            self.pos += 1
            histories = [first] + self.int_list()
        else:
            histories = [first]

        if len(sizes) == 1:
            sizes = sizes * len(histories)
        elif len(sizes) != len(histories):
            self.error(f"{len(sizes)} sizes given for {len(histories)} histories", size_pos)
        for n in histories:
            if n < 2:
                self.error(f"FNN history must be >= 2 (at least one context word), got {n}", hist_pos)
        for s in sizes:
            if s < 1:
                self.error("hidden size must be >= 1", size_pos)
        return [ComponentSpec("F", s, n) for s, n in zip(sizes, histories)]

    def parse(self) -> tuple[ComponentSpec, ...]:
        comps = self.term()
        while self.peek() == "+":
            self.pos += 1
            comps.extend(self.term())
        self.skip_ws()
        if self.pos != len(self.text):
            self.error("unexpected trailing input")
        return tuple(comps)


def parse_spec(text: str) -> tuple[ComponentSpec, ...]:
    """Parse a mixture string into the expanded, ordered component list."""
    return _Parser(text).parse()


def _render_histories(hs: list[int]) -> str:
    if len(hs) >= 3 and all(b - a == 1 for a, b in zip(hs, hs[1:])):
        return f"{hs[0]}-{hs[-1]}"
    return ",".join(str(h) for h in hs)


def render_spec(components) -> str:
    """Canonical string: adjacent FNNs of equal size are grouped into one term."""
    terms = []
    i = 0
    comps = list(components)
    while i < len(comps):
        c = comps[i]
        if c.kind != "F":
            terms.append(f"{c.kind}{c.hidden_size}")
            i += 1
            continue
        j = i
        while j < len(comps) and comps[j].kind == "F" and comps[j].hidden_size == c.hidden_size:
            j += 1
        hs = [comps[k].history for k in range(i, j)]
        terms.append(f"F{c.hidden_size}^{_render_histories(hs)}")
        i = j
    return "+".join(terms)


def canonical(text: str) -> str:
    return render_spec(parse_spec(text))
