"""Brute-force reference implementations used as test oracles."""


def occurrences(ids, pat):
    L = len(pat)
    return [i for i in range(len(ids) - L + 1) if tuple(ids[i:i + L]) == tuple(pat)]


def greedy_support(ids, pat):
    count, nxt = 0, 0
    for i in occurrences(ids, pat):
        if i >= nxt:
            count += 1
            nxt = i + len(pat)
    return count


def discover_brute(ids, min_len=2, max_len=25, min_support=5):
    """Every substring, longest first; keep frequent ones not swallowed by a longer kept pattern."""
    ids = [int(x) for x in ids]
    kept = []
    for L in range(min(max_len, len(ids)), min_len - 1, -1):
        pats = sorted({tuple(ids[i:i + L]) for i in range(len(ids) - L + 1)})
        level = []
        for pat in pats:
            sup = greedy_support(ids, pat)
            if sup < min_support:
                continue
            occ = occurrences(ids, pat)
            inside = all(any(q <= p and q + len(k) >= p + L for k, _ in kept for q in occurrences(ids, k))
                         for p in occ)
            if not inside:
                level.append((pat, sup))
        kept.extend(level)
    return {p: s for p, s in kept}


def match_brute(ids, entries):
    """entries: list of (pattern, support, label). Returns [(start, stop, label)]."""
    ids = tuple(int(x) for x in ids)
    out, i = [], 0
    while i < len(ids):
        fits = [e for e in entries if tuple(ids[i:i + len(e[0])]) == tuple(e[0])]
        if not fits:
            i += 1
            continue
        best = min(fits, key=lambda e: (-len(e[0]), -e[1], tuple(e[0])))
        out.append((i, i + len(best[0]), best[2]))
        i += len(best[0])
    return out
