"""Executable verification suites for the geometry and solver guarantees.

Each ``check_*`` function runs seeded Monte-Carlo trials and returns a
JSON-ready report dict with a ``passed`` flag. Assertions are stated at
exactly the strength the underlying derivations support; out-of-hypothesis
behavior is measured and reported but never asserted.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from . import ot
from .distributions import WeightingConfig, class_posteriors, entropies, view_weights

DISTORTION_PASS_TARGET = 0.99


def check_distortion(
    trials: int,
    seed: int,
    d: int = 32,
    components: int = 8,
    epsilon_scale: float = 0.01,
) -> dict:
    """Pairwise cosine distortion before/after projection, shared perturbation.

    Both clean features live inside the subspace and receive the same
    perturbation. Reported per-trial comparison: projected distortion no
    larger than raw distortion (1e-9 slack). The shared perturbation adds
    an identical |delta|^2 cross term to the raw pair similarity; whenever
    that term cancels part of the first-order deviation the raw distortion
    comes out smaller, so the per-trial pass rate sits near 50% rather than
    near 1, while the distortion magnitude is smaller after projection on
    average (see ratio_of_means).
    """
    if components >= d:
        raise ValueError("components must be smaller than d")
    if not 0 < epsilon_scale <= 0.05:
        raise ValueError("epsilon_scale must lie in (0, 0.05] (small-perturbation regime)")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, components)))

    coeff = rng.standard_normal((2, trials, components))
    x1 = (basis @ coeff[0].T).T
    x2 = (basis @ coeff[1].T).T
    x1 /= np.linalg.norm(x1, axis=1, keepdims=True)
    x2 /= np.linalg.norm(x2, axis=1, keepdims=True)
    delta = rng.standard_normal((trials, d))
    delta *= epsilon_scale / np.linalg.norm(delta, axis=1, keepdims=True)
    delta_par = (delta @ basis) @ basis.T

    def pair_cos(u, v):
        num = (u * v).sum(axis=1)
        return num / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))

    clean = pair_cos(x1, x2)
    raw = np.abs(pair_cos(x1 + delta, x2 + delta) - clean)
    proj = np.abs(pair_cos(x1 + delta_par, x2 + delta_par) - clean)
    ok = proj <= raw + 1e-9
    nonzero = raw > 1e-15
    ratios = proj[nonzero] / raw[nonzero]
    bound = np.linalg.norm(delta_par, axis=1) / np.linalg.norm(delta, axis=1)
    pass_fraction = float(ok.mean())
    mean_ratio = float(ratios.mean())
    return {
        "suite": "distortion",
        "trials": trials,
        "seed": seed,
        "params": {"d": d, "components": components, "epsilon_scale": epsilon_scale},
        "pass_fraction": pass_fraction,
        "mean_ratio": mean_ratio,
        "ratio_of_means": float(proj.sum() / raw.sum()),
        "mean_parallel_fraction_bound": float(bound.mean()),
        "passed": bool(pass_fraction >= DISTORTION_PASS_TARGET and mean_ratio < 1.0),
        "note": (
            "shared-perturbation cross term inflates the raw pair similarity; "
            "trials where it cancels the first-order deviation report smaller "
            "raw distortion, capping the per-trial pass rate near 0.5"
        ),
    }


def _margin_instance(rng, d, components, n_views, m_descs, k_classes, zero_orthogonal):
    """One candidate margin trial; returns None when hypotheses fail."""
    basis, _ = np.linalg.qr(rng.standard_normal((d, components)))
    base = basis @ rng.standard_normal(components)
    base /= np.linalg.norm(base)
    text = np.empty((k_classes, m_descs, d))
    for y in range(k_classes):
        spread = 0.2 if y == 0 else rng.uniform(0.6, 0.9)
        rows = base + spread * (basis @ rng.standard_normal((components, m_descs))).T
        text[y] = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    views = np.empty((n_views, d))
    for n in range(n_views):
        clean = base + 0.15 * (basis @ rng.standard_normal(components))
        if zero_orthogonal:
            views[n] = clean
        else:
            noise = rng.standard_normal(d)
            noise -= basis @ (basis.T @ noise)
            norm = np.linalg.norm(noise)
            views[n] = clean + noise * (rng.uniform(0.1, 0.5) / norm)
    proj_views = (views @ basis) @ basis.T
    vn = views / np.linalg.norm(views, axis=1, keepdims=True)
    pn = proj_views / np.linalg.norm(proj_views, axis=1, keepdims=True)
    cos_raw = np.einsum("nd,kmd->knm", vn, text)
    cos_proj = np.einsum("nd,kmd->knm", pn, text)
    condition_met = bool(
        cos_raw.min() >= 0.0
        and np.all(cos_raw[0][None, :, :] >= cos_raw[1:] - 1e-12)
    )
    a = rng.dirichlet(np.full(n_views, 5.0))
    bs = rng.dirichlet(np.full(m_descs, 5.0), size=k_classes)
    return cos_raw, cos_proj, a, bs, condition_met


def _margins(cos_raw, cos_proj, a, bs):
    k = cos_raw.shape[0]
    d_raw = np.empty(k)
    d_proj = np.empty(k)
    for y in range(k):
        d_raw[y] = ot.exact_ot(
            ot.TransportProblem(np.clip(1.0 - cos_raw[y], 0, 2), a, bs[y])
        ).distance
        d_proj[y] = ot.exact_ot(
            ot.TransportProblem(np.clip(1.0 - cos_proj[y], 0, 2), a, bs[y])
        ).distance
    gamma_raw = d_raw[1:].min() - d_raw[0]
    gamma_proj = d_proj[1:].min() - d_proj[0]
    return float(gamma_raw), float(gamma_proj)


def check_margin(
    trials: int,
    seed: int,
    d: int = 16,
    components: int = 5,
    n_views: int = 3,
    m_descs: int = 4,
    k_classes: int = 3,
    max_attempts_factor: int = 200,
) -> dict:
    """Exact-OT margin with projected costs is never below the raw margin.

    Trials are generated under the dominance hypotheses (all pairwise
    cosines non-negative, true class at least as similar as every
    competitor per view/description pair); every fourth accepted trial has
    zero orthogonal noise and must show equal margins. Hypothesis-violating
    instances are recorded separately without assertion.
    """
    rng = np.random.default_rng(seed)
    met = 0
    violations = 0
    worst = 0.0
    equality_cases = 0
    equality_failures = 0
    off_hypothesis = 0
    off_hypothesis_regressions = 0
    attempts = 0
    max_attempts = max_attempts_factor * trials
    while met < trials and attempts < max_attempts:
        attempts += 1
        zero_orth = met % 4 == 3
        inst = _margin_instance(rng, d, components, n_views, m_descs, k_classes, zero_orth)
        cos_raw, cos_proj, a, bs, condition_met = inst
        if not condition_met:
            off_hypothesis += 1
            # measured only: how often the inequality would fail out of hypothesis
            if off_hypothesis <= trials // 10:
                g_raw, g_proj = _margins(cos_raw, cos_proj, a, bs)
                if g_proj < g_raw - 1e-9:
                    off_hypothesis_regressions += 1
            continue
        met += 1
        g_raw, g_proj = _margins(cos_raw, cos_proj, a, bs)
        gap = g_proj - g_raw
        if gap < -1e-9:
            violations += 1
            worst = min(worst, gap)
        if zero_orth:
            equality_cases += 1
            if abs(gap) > 1e-9:
                equality_failures += 1
    return {
        "suite": "margin",
        "trials": met,
        "seed": seed,
        "params": {
            "d": d,
            "components": components,
            "n_views": n_views,
            "m_descs": m_descs,
            "k_classes": k_classes,
        },
        "generation_attempts": attempts,
        "violations": violations,
        "worst_gap": worst,
        "equality_cases": equality_cases,
        "equality_failures": equality_failures,
        "off_hypothesis_sampled": off_hypothesis,
        "off_hypothesis_regressions": off_hypothesis_regressions,
        "passed": bool(met == trials and violations == 0 and equality_failures == 0),
    }


def check_dot_preservation(
    trials: int,
    seed: int,
    d: int = 64,
    components: int = 16,
) -> dict:
    """Inner products against in-span vectors are unchanged by projection."""
    if components >= d:
        raise ValueError("components must be smaller than d")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, components)))
    x = rng.standard_normal((trials, d))
    z = (basis @ rng.standard_normal((components, trials))).T
    px = (x @ basis) @ basis.T
    dev = np.abs((x * z).sum(axis=1) - (px * z).sum(axis=1))
    rel = dev / (np.linalg.norm(x, axis=1) * np.linalg.norm(z, axis=1))
    worst = float(rel.max())
    return {
        "suite": "dot",
        "trials": trials,
        "seed": seed,
        "params": {"d": d, "components": components},
        "max_relative_deviation": worst,
        "passed": bool(worst <= 1e-6),
    }


def check_ot_oracle(trials: int, seed: int, max_side: int = 10) -> dict:
    """Sinkhorn vs exact-LP sandwich, eps monotonicity, assignment reduction."""
    rng = np.random.default_rng(seed)
    worst_gap_2 = 0.0
    worst_gap_3 = 0.0
    sandwich_failures = 0
    unconverged = 0
    viol_failures = 0
    for _ in range(trials):
        n = int(rng.integers(1, max_side + 1))
        m = int(rng.integers(1, max_side + 1))
        problem = ot.TransportProblem(
            rng.uniform(0, 2, (n, m)), rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        )
        exact = ot.exact_ot(problem)
        s2 = ot.sinkhorn(problem, epsilon=1e-2, max_iters=50_000, tolerance=1e-6)
        s3 = ot.sinkhorn(problem, epsilon=1e-3, max_iters=200_000, tolerance=1e-6)
        worst_gap_2 = max(worst_gap_2, abs(s2.distance - exact.distance))
        worst_gap_3 = max(worst_gap_3, abs(s3.distance - exact.distance))
        for sol in (s2, s3):
            if sol.distance < exact.distance - 1e-9:
                sandwich_failures += 1
            if not sol.converged:
                unconverged += 1
            elif sol.marginal_violation > 1e-6:
                viol_failures += 1
    # epsilon monotonicity on smoother instances
    mono_failures = 0
    grid = (1e-1, 3e-2, 1e-2, 3e-3)
    for _ in range(40):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(2, 7))
        problem = ot.TransportProblem(
            rng.uniform(0, 2, (n, m)),
            rng.dirichlet(np.full(n, 5.0)),
            rng.dirichlet(np.full(m, 5.0)),
        )
        dists = [
            ot.sinkhorn(problem, epsilon=e, max_iters=300_000, tolerance=1e-8).distance
            for e in grid
        ]
        if any(dists[i + 1] > dists[i] + 1e-6 for i in range(len(grid) - 1)):
            mono_failures += 1
    # with uniform equal marginals the LP optimum is an assignment
    assign_worst = 0.0
    for _ in range(100):
        cost = rng.uniform(0, 2, (4, 4))
        problem = ot.TransportProblem(cost, np.full(4, 0.25), np.full(4, 0.25))
        exact = ot.exact_ot(problem)
        best = min(sum(cost[i, p[i]] for i in range(4)) for p in permutations(range(4)))
        assign_worst = max(assign_worst, abs(exact.distance - best / 4.0))
    passed = bool(
        worst_gap_2 <= 5e-2
        and worst_gap_3 <= 1e-2
        and sandwich_failures == 0
        and viol_failures == 0
        and mono_failures == 0
        and assign_worst <= 1e-9
    )
    return {
        "suite": "ot-oracle",
        "trials": trials,
        "seed": seed,
        "params": {"max_side": max_side},
        "worst_gap_eps_1e2": worst_gap_2,
        "worst_gap_eps_1e3": worst_gap_3,
        "sandwich_failures": sandwich_failures,
        "unconverged": unconverged,
        "violation_failures": viol_failures,
        "monotonicity_failures": mono_failures,
        "assignment_worst_gap": assign_worst,
        "passed": passed,
    }


def check_weights(trials: int, seed: int) -> dict:
    """Distribution invariants of the entropy weighting."""
    rng = np.random.default_rng(seed)
    simplex_failures = 0
    permutation_failures = 0
    ordering_failures = 0
    reversal_failures = 0
    entropy_bound_failures = 0
    for _ in range(trials):
        k = int(rng.integers(2, 8))
        n = int(rng.integers(2, 8))
        d = int(rng.integers(4, 24))
        means = rng.standard_normal((k, d))
        views = rng.standard_normal((n, d))
        cfg = WeightingConfig(
            temperature_logit=float(rng.uniform(0.5, 20.0)),
            entropy_sign="semantic",
            temperature_weight=float(rng.uniform(0.2, 3.0)),
        )
        w = view_weights(views, means, cfg)
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-6:
            simplex_failures += 1
        perm = rng.permutation(n)
        w_perm = view_weights(views[perm], means, cfg)
        if np.abs(w_perm - w[perm]).max() > 1e-12:
            permutation_failures += 1
        h = entropies(class_posteriors(views, means, cfg.temperature_logit))
        if (h < -1e-12).any() or (h > np.log(k) + 1e-9).any():
            entropy_bound_failures += 1
        order = np.argsort(h)
        for a, b in zip(order[:-1], order[1:]):
            if h[b] - h[a] > 1e-9 and not w[a] > w[b]:
                ordering_failures += 1
                break
        cfg_lit = WeightingConfig(
            temperature_logit=cfg.temperature_logit,
            entropy_sign="paper_literal",
            temperature_weight=cfg.temperature_weight,
        )
        two = views[:2]
        h2 = entropies(class_posteriors(two, means, cfg.temperature_logit))
        if abs(h2[0] - h2[1]) > 1e-9:
            w_sem = view_weights(two, means, cfg)
            w_lit = view_weights(two, means, cfg_lit)
            if (w_sem[0] - w_sem[1]) * (w_lit[0] - w_lit[1]) >= 0:
                reversal_failures += 1
    passed = bool(
        simplex_failures == 0
        and permutation_failures == 0
        and ordering_failures == 0
        and reversal_failures == 0
        and entropy_bound_failures == 0
    )
    return {
        "suite": "weights",
        "trials": trials,
        "seed": seed,
        "params": {},
        "simplex_failures": simplex_failures,
        "permutation_failures": permutation_failures,
        "ordering_failures": ordering_failures,
        "reversal_failures": reversal_failures,
        "entropy_bound_failures": entropy_bound_failures,
        "passed": passed,
    }


SUITES = {
    "distortion": check_distortion,
    "margin": check_margin,
    "dot": check_dot_preservation,
    "ot-oracle": check_ot_oracle,
    "weights": check_weights,
}


def run_suite(name: str, trials: int, seed: int, **params) -> dict:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](trials, seed, **params)
