"""Minimal self-contained SVG line charts for price and wealth diagnostics."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .metrics import beta_posterior_fit, discounted_frequency

WIDTH, HEIGHT, PAD = 640, 360, 48
COLORS = ("#000000", "#888888", "#1f77b4", "#d62728")


def line_chart(series, title="", xlabel="", ylabel="", ylim=None, markers=()) -> str:
    """``series`` is a list of ``(label, xs, ys)``; names in ``markers`` draw dots only."""
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = ylim if ylim else (float(ys_all.min()), float(ys_all.max()))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def sx(x):
        return PAD + (x - x0) / (x1 - x0) * (WIDTH - 2 * PAD)

    def sy(y):
        return HEIGHT - PAD - (y - y0) / (y1 - y0) * (HEIGHT - 2 * PAD)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{PAD - 4}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{HEIGHT - PAD + 14}" text-anchor="middle">{v:.3g}</text>')
    for k, (label, xs, ys) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        pts = [(sx(float(x)), sy(float(y))) for x, y in zip(xs, ys)]
        if label in markers:
            out.extend(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2" fill="{color}"/>' for x, y in pts)
        else:
            path = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{WIDTH - PAD - 4}" y="{PAD + 14 * k}" text-anchor="end" '
                   f'fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def chart_svgs(record, gamma: float) -> dict:
    """Price/frequency, price/discounted-frequency and wealth/belief charts."""
    if not record.rounds:
        return {}
    t = np.arange(1, len(record.rounds) + 1)
    freq = discounted_frequency(record.outcomes, gamma)
    prices = record.prices
    charts = {
        "price_vs_frequency.svg": line_chart(
            [("price", t, prices), ("observed frequency", t, freq.observed)],
            "Price and observed frequency", "period", "probability", (0, 1)),
        "price_vs_discounted.svg": line_chart(
            [("price", t, prices), (f"discounted frequency (gamma={gamma:g})", t, freq.discounted)],
            "Price and discounted frequency", "period", "probability", (0, 1)),
    }
    pop = record.final_population
    order = np.argsort(pop.beliefs)
    s = int(record.outcomes.sum())
    fit = beta_posterior_fit(pop.beliefs, pop.wealths, s, len(record.outcomes) - s)
    charts["wealth_vs_belief.svg"] = line_chart(
        [("wealth", pop.beliefs[order], pop.wealths[order]),
         (f"Beta({s}+1, {len(record.outcomes) - s}+1)", pop.beliefs[order], fit.density_at_beliefs[order])],
        "Final wealth versus belief", "belief", "normalised wealth", markers=("wealth",))
    return charts
