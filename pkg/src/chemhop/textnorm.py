"""Name normalization, formula-token handling, and leak/length checks.

Entity merging, answer comparison, and the leak gate all funnel through the
two normalizers here so that "CO2", "co2" and " CO2 " always agree.
"""

from __future__ import annotations

import re

# IUPAC element symbols (1-118).
ELEMENT_SYMBOLS = frozenset(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co
    Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te
    I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir
    Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No
    Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og""".split()
)

_FORMULA_PART = re.compile(r"([A-Z][a-z]?)(\d*)")


def is_formula_token(token: str) -> bool:
    """True if *token* parses as element symbols with optional counts (CO2, HCl).

    Single capitalized element names without counts ("He", "In") also pass;
    merging stays case-insensitive so this only affects display casing.
    """
    token = token.strip().rstrip("+-")
    if not token or not token[0].isupper():
        return False
    pos = 0
    parts = 0
    while pos < len(token):
        m = _FORMULA_PART.match(token, pos)
        if not m or m.group(1) not in ELEMENT_SYMBOLS:
            return False
        parts += 1
        pos = m.end()
    # Require a digit or at least two element symbols, so ordinary capitalized
    # words that happen to start with an element symbol are not formulas.
    return parts >= 2 or any(ch.isdigit() for ch in token)


def validate_formula(formula: str) -> bool:
    """Strict elemental-formula check: symbols and counts only, nothing else."""
    formula = formula.strip()
    if not formula:
        return False
    pos = 0
    while pos < len(formula):
        m = _FORMULA_PART.match(formula, pos)
        if not m or not m.group(1) or m.group(1) not in ELEMENT_SYMBOLS:
            return False
        pos = m.end()
    return True


def normalize_key(name: str) -> str:
    """Merge/equality key: whitespace-collapsed, casefolded."""
    return " ".join(name.split()).casefold()


def canonical_name(name: str) -> str:
    """Display form: collapsed whitespace, lowercased except formula tokens."""
    tokens = name.split()
    return " ".join(t if is_formula_token(t) else t.lower() for t in tokens)


def word_count(text: str) -> int:
    """Number of maximal non-whitespace runs."""
    return len(text.split())


def contains_phrase(haystack: str, needle: str) -> bool:
    """Case- and whitespace-insensitive substring test (the leak check)."""
    h = normalize_key(haystack)
    n = normalize_key(needle)
    return bool(n) and n in h
