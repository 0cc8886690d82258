"""Comparison of constraint systems up to renaming of unknowns."""

from itertools import permutations

from lrt import logic as L


def _rename(t, mapping, drop_args=False):
    match t:
        case L.Unknown(n, args):
            args = () if drop_args else tuple(_rename(a, mapping) for a in args)
            return L.Unknown(mapping.get(n, n), args)
    if hasattr(t, "__dataclass_fields__"):
        vals = {}
        for f in t.__dataclass_fields__:
            v = getattr(t, f)
            if isinstance(v, tuple):
                v = tuple(_rename(x, mapping, drop_args) for x in v)
            elif hasattr(v, "__dataclass_fields__"):
                v = _rename(v, mapping, drop_args)
            vals[f] = v
        out = type(t)(**vals)
        if isinstance(out, L.Add):
            out = L.Add(tuple(sorted(out.args, key=L.show)))
        return out
    return t


def _canon(t):
    return L.show(_rename(L.simplify(t), {}))


def equal_up_to_renaming(ours, theirs, drop_args=False) -> bool:
    """Multisets of formulas equal under some bijection of unknown names.

    With `drop_args`, unknown applications are compared by name only, so
    unknowns that differ in unused parameters still match.
    """
    names_a = sorted(set().union(*(L.unknowns_of(t) for t in ours)) if ours else set())
    names_b = sorted(set().union(*(L.unknowns_of(t) for t in theirs)) if theirs else set())
    if len(names_a) != len(names_b) or len(ours) != len(theirs):
        return False
    target = sorted(_canon(_rename(t, {}, drop_args)) for t in theirs)
    for perm in permutations(names_b):
        m = dict(zip(names_a, perm))
        if sorted(_canon(_rename(t, m, drop_args)) for t in ours) == target:
            return True
    return False


def u(name, *args):
    return L.Unknown(name, tuple(args))
