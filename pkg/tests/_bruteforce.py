"""Direct prefix-enumeration PR metrics, written without numpy on purpose."""


def prefix_points(is_positive):
    total = sum(is_positive)
    points = []
    for k in range(1, len(is_positive) + 1):
        tp = sum(is_positive[:k])
        p = tp / k
        r = tp / total if total else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        points.append((p, r, f))
    return points, total


def auc(is_positive):
    points, total = prefix_points(is_positive)
    if total == 0:
        return 0.0
    best = {}
    for p, r, _ in points:
        if r > 0:
            best[r] = max(best.get(r, 0.0), p)
    recalls = sorted(best)
    curve = [(0.0, best[recalls[0]])] + [(r, best[r]) for r in recalls]
    area = 0.0
    for (r0, p0), (r1, p1) in zip(curve, curve[1:]):
        area += (r1 - r0) * (p0 + p1) / 2
    return area


def avg_f(is_positive):
    points, _ = prefix_points(is_positive)
    return sum(f for _, _, f in points) / len(points)
