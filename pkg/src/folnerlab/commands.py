"""Subcommand bodies: configuration in, :class:`ReportEnvelope` out.

Figures are returned in ``envelope.data`` under ``"_figures"`` and written
by the caller; they are removed from the JSON.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np

from .config import RunConfig
from .czdec import (
    cuculescu,
    cz_decompose,
    trace_norm,
    verify_bad,
    verify_good,
    verify_hybrid,
    zeta_annihilation_scan,
    zeta_projection,
)
from .ergodic import (
    TorusTranslation,
    UnitaryConjugation,
    admissible_split,
    boundary_domination_check,
    cancellation_check,
    ergodic_converge,
    fixed_point_projection,
    l2_bound_check,
    local_estimate_report,
    maximal_projection,
    off_bound_check,
    weak11_check,
)
from .filtration import (
    BuildConfig,
    FilteredSequence,
    build_filtered_sequence,
    build_quasi_partition,
    validate_regular,
    with_folner_sets,
)
from .geometry import InvarianceClause, InvarianceCondition
from .groups import FiniteSubset, Schedule, folner_set
from .ncalg import OpValuedFunction, conditional_expectation, trace_phi
from .rational import fmt
from .report import ReportEnvelope, Row, hypothesis_status
from .tiling import quasi_tile, validate_quasi_tiling

FIGURES = "_figures"

A_TILING = "quasi-tiling of a finite window"
A_OVERLAP = "greedy packing: coverage after each scale"
A_UNION = "union of eps-disjoint invariant tiles stays invariant"
A_DIFF = "difference of nested invariant sets stays invariant"
A_QP = "quasi-partition of a domain into template translates"
A_REG = "regular filtered Folner sequence"
A_CUC = "Cuculescu projection ladder"
A_RECON = "Calderon-Zygmund decomposition reconstructs f"
A_GOOD = "good part L2 bound"
A_HYB = "hybrid part L1 bound"
A_BAD = "bad part bounds and mean-zero clauses"
A_ZETA = "zeta projection: measure bound and annihilation"
A_CANCEL = "local cancellation of the bad part under zeta"
A_OFF = "off-diagonal bad part under D_n"
A_LOCAL1 = "local estimate, coarse atom (n < k)"
A_LOCAL2 = "local estimate, mean-zero function (n >= k)"
A_DOM = "cut admissible atoms lie in the B_k boundary of x F_n"
A_L2 = "L2 bound for the difference square function"
A_WEAK = "weak-(1,1) regression for the difference operator"
A_MAX = "maximal projection for ergodic averages"
A_SPLIT = "splitting into admissible translates"
A_ERG = "pointwise convergence of ergodic averages"


# ---- shared helpers ------------------------------------------------------------------


def build_sequence(cfg: RunConfig) -> FilteredSequence:
    f = cfg.filtration
    seq = build_filtered_sequence(cfg.model, f.eps, f.c, f.depth, BuildConfig(schedule=cfg.schedule))
    if f.folner_lengths is not None:
        sched = Schedule(lengths=tuple(f.folner_lengths))
        seq = with_folner_sets(seq, [folner_set(cfg.model, n, sched) for n in range(f.depth + 1)])
    return seq


def random_psd_function(seq: FilteredSequence, support: int, d: int, rng: np.random.Generator) -> OpValuedFunction:
    """Random positive semidefinite ``X X*`` values at ``support`` window points."""
    W = seq.window.keys
    idx = np.sort(rng.choice(W.size, size=min(support, W.size), replace=False))
    X = rng.normal(size=(idx.size, d, d)) + 1j * rng.normal(size=(idx.size, d, d))
    return OpValuedFunction(seq.model, W[idx], X @ np.conj(np.swapaxes(X, 1, 2)), _sorted=True)


def load_functions(cfg: RunConfig, seq: FilteredSequence) -> list[tuple[str, OpValuedFunction]]:
    if cfg.function.file is not None:
        try:
            text = cfg.function.file.read_text()
        except OSError as exc:
            from .errors import ConfigError

            raise ConfigError(f"field 'function.file': cannot read {cfg.function.file}: {exc}") from exc
        f = OpValuedFunction.from_text(text, cfg.model)
        return [(cfg.function.file.name, f)]
    seed = cfg.require_seed("the input function")
    out = []
    for i in range(cfg.function.instances):
        rng = np.random.default_rng([seed, i])
        out.append((f"instance {i}", random_psd_function(seq, cfg.function.support, cfg.function.d, rng)))
    return out


def _rows_from_checks(prefix: str, anchor: str, report) -> list[Row]:
    return [Row(f"{prefix}{r.name}", anchor, r.value, r.bound, bool(r.holds), r.asserted) for r in report.rows]


# ---- tile ----------------------------------------------------------------------------


def cmd_tile(cfg: RunConfig) -> ReportEnvelope:
    env = ReportEnvelope("tile", cfg.echo())
    if cfg.tile is None:
        from .errors import ConfigError

        raise ConfigError("field 'tile': the tile command needs a [tile] table")
    t = cfg.tile
    model = cfg.model
    with env.timed("build"):
        D = t.window.build(model)
        scales = [s.build(model) for s in t.scales]
    with env.timed("tile"):
        q = quasi_tile(D, scales, t.eps)
    with env.timed("validate"):
        rep = validate_quasi_tiling(q, D, t.validate_eps)
    hyp = hypothesis_status(all(q.hypotheses.values()))
    for name, ok in q.hypotheses.items():
        env.add(Row(f"hypothesis: {name}", A_TILING, None, None, bool(ok), asserted=False))
    for name, ok in rep.clauses.items():
        value = rep.covered if name.startswith("4") else None
        bound = (1 - t.validate_eps) * rep.total if name.startswith("4") else None
        env.add(Row(f"clause {name} at {fmt(t.validate_eps)}", A_TILING, value, bound, bool(ok), hypothesis=hyp))
    goal = (1 - 4 * t.eps) * len(D)
    env.add(Row("coverage >= (1 - 4 eps)|D|", A_TILING, rep.covered, goal, rep.covered >= goal, hypothesis=hyp))
    steps = []
    for st in q.steps:
        env.add(Row(f"scale {st.scale}: uncovered <= max((1-eps)^(N+1-i), 4 eps)|D|", A_OVERLAP,
                    st.uncovered_after, max(st.geometric_bound, 4 * t.eps * len(D)), bool(st.within_bound)))
        for chk, anchor in ((st.union_check, A_UNION), (st.difference_check, A_DIFF)):
            if chk is not None:
                env.add(Row(f"scale {st.scale}: {chk.name}", anchor, chk.lhs, chk.rhs, chk.ok,
                            hypothesis=hypothesis_status(chk.hypotheses_hold)))
        steps.append({"scale": st.scale, "shape_size": st.shape_size, "centers": st.centers,
                      "new_cover": st.new_cover, "residual_before": st.residual_before,
                      "uncovered_after": st.uncovered_after, "geometric_bound": st.geometric_bound,
                      "within_bound": st.within_bound, "stop_reason": st.stop_reason})
    env.tables["scales"] = steps
    env.data = {"window_size": len(D), "covered": rep.covered, "share": rep.share,
                "parameters": q.parameters, "warnings": q.warnings,
                "centers": [[model.format_element(x) for x in model.from_coords(model.unpack(c))]
                            for c in q.centers]}
    if t.svg and model.name == "Z2":
        from .svg import tiling_svg

        env.data[FIGURES] = {"tiling.svg": tiling_svg(q, D, f"quasi-tiling of {len(D)} cells")}
    return env


# ---- partition -----------------------------------------------------------------------


def cmd_partition(cfg: RunConfig) -> ReportEnvelope:
    env = ReportEnvelope("partition", cfg.echo())
    if cfg.partition is None:
        from .errors import ConfigError

        raise ConfigError("field 'partition': the partition command needs a [partition] table")
    p = cfg.partition
    model = cfg.model
    D, B = p.domain.build(model), p.template.build(model)
    I = InvarianceCondition(tuple(InvarianceClause(c.kind, c.eps, c.K.build(model)) for c in p.invariance))
    with env.timed("partition"):
        res = build_quasi_partition(D, B, I, p.eps, schedule=cfg.schedule)
    for name, ok in res.clauses.items():
        value = res.coverage if "cover" in name else None
        env.add(Row(name, A_QP, value, 1 - p.eps if "cover" in name else None, bool(ok)))
    P = res.partition
    env.data = {"domain_size": len(D), "template_size": len(B), "atoms": P.n_atoms,
                "coverage": res.coverage, "shapes": res.shapes, "diagnostics": res.diagnostics,
                "atom_elements": [[model.format_element(x) for x in P.atom(i).elements()]
                                  for i in range(P.n_atoms)]}
    env.tables["atoms"] = [{"atom": i, "size": int(s)} for i, s in enumerate(P.sizes)]
    if model.name == "Z2":
        from .svg import partition_svg

        env.data[FIGURES] = {"partition.svg": partition_svg(P, None, f"{P.n_atoms} atoms", frame=D)}
    return env


# ---- filtration ----------------------------------------------------------------------


def describe_sequence(seq: FilteredSequence, with_atoms: bool = True) -> dict:
    model = seq.model
    levels = []
    for k in seq.levels():
        P = seq.P[k]
        lvl = {
            "level": k,
            "F_size": len(seq.F[k]), "B_size": len(seq.B[k]), "D_size": len(seq.D[k]),
            "atoms": P.n_atoms,
            "admissible_atoms": int(seq.admissible_flags(k).sum()),
        }
        if with_atoms:
            lvl["atom_elements"] = [[model.format_element(x) for x in P.atom(i).elements()]
                                    for i in range(P.n_atoms)]
            lvl["tags"] = [{"witness": None if t.witness is None else model.format_element(t.witness),
                            "margins": list(t.margins), "bounds": list(t.bounds),
                            "completion": t.completion, "admissible": t.admissible}
                           for t in seq.tags[k]]
        levels.append(lvl)
    return {"eps_levels": seq.eps_levels, "indices": seq.indices, "levels": levels,
            "window_size": len(seq.window)}


def regularity_rows(seq: FilteredSequence) -> list[Row]:
    rep = validate_regular(seq)
    return [Row(r.name, A_REG, r.value or None, r.bound or None, bool(r.holds), asserted=r.gating,
                note="" if r.gating else "alternative reading, reported only") for r in rep.rows]


def cmd_filtration(cfg: RunConfig) -> ReportEnvelope:
    env = ReportEnvelope("filtration", cfg.echo())
    with env.timed("build"):
        seq = build_sequence(cfg)
    with env.timed("validate"):
        env.extend(regularity_rows(seq))
    env.data = describe_sequence(seq)
    env.data["filtration_id"] = cfg.filtration_id
    env.tables["levels"] = [{k: v for k, v in lvl.items() if k not in ("atom_elements", "tags")}
                            for lvl in env.data["levels"]]
    if cfg.model.name == "Z2":
        from .svg import filtration_svgs

        env.data[FIGURES] = filtration_svgs(seq)
    return env


# ---- cz ------------------------------------------------------------------------------


def cz_rows(f: OpValuedFunction, lam: float, seq: FilteredSequence, label: str) -> tuple[list[Row], dict]:
    """Every clause of the decomposition at one ``lam``."""
    rows: list[Row] = []
    tag = f"{label}, lam={lam:g}: "
    parts = cz_decompose(f, lam, seq)
    cc = parts.cc
    for name, ok in cc.passed.items():
        val = cc.checks.get(name)
        if name.startswith("(4)"):
            rows.append(Row(tag + name, A_CUC, cc.checks["(4) lam phi(1-q0)"], cc.checks["(4) ||f||_1"], ok))
        else:
            rows.append(Row(tag + name, A_CUC, val, 1e-10, ok))
    l1 = trace_norm(parts.f)
    res = parts.reconstruction_residual()
    rows.append(Row(tag + "||f - (g + h + b)||_1 <= 1e-9 ||f||_1", A_RECON, res, 1e-9 * max(1.0, l1),
                    res <= 1e-9 * max(1.0, l1)))
    rows += _rows_from_checks(tag, A_GOOD, verify_good(parts))
    rows += _rows_from_checks(tag, A_HYB, verify_hybrid(parts))
    W = seq.window
    rows += _rows_from_checks(tag, A_BAD, verify_bad(parts, E=W, K=W, levels=[parts.depth]))
    zeta = zeta_projection(seq, cc, l1)
    rows.append(Row(tag + "lam phi(1 - zeta) <= 2 ||f||_1", A_ZETA, lam * zeta.phi_complement, zeta.bound,
                    bool(zeta.holds)))
    scan = zeta_annihilation_scan(parts, zeta, seq)
    rows.append(Row(tag + scan.name, A_ZETA, scan.value, scan.bound, bool(scan.holds)))
    summary = {"lam": lam, "phi(1-q0)": float(np.real(np.trace(np.eye(f.d) - cc.q[0], axis1=1, axis2=2)).sum()),
               "||g||_2^2": float(np.real(np.trace(np.conj(np.swapaxes(parts.g, 1, 2)) @ parts.g,
                                                    axis1=1, axis2=2)).sum()),
               "sum ||h_k||_1": sum(trace_norm(h) for h in parts.h),
               "phi(1-zeta)": zeta.phi_complement, "residual": res}
    return rows, summary


def cmd_cz(cfg: RunConfig) -> ReportEnvelope:
    env = ReportEnvelope("cz", cfg.echo())
    with env.timed("build"):
        seq = build_sequence(cfg)
    funcs = load_functions(cfg, seq)
    table = []
    with env.timed("decompose"):
        for label, f in funcs:
            for lam in cfg.lambdas:
                rows, summary = cz_rows(f, float(lam), seq, label)
                env.extend(rows)
                table.append({"function": label, **summary})
    env.tables["lambda_grid"] = table
    env.data = {"filtration_id": cfg.filtration_id, "functions": [lbl for lbl, _ in funcs],
                "l1_norms": [trace_phi(f) for _, f in funcs]}
    return env


# ---- verify --------------------------------------------------------------------------


def local_fixtures(seq: FilteredSequence, d: int, rng: np.random.Generator):
    """Case-1 functions (constant on one admissible atom) and case-2 functions
    (mean zero on admissible atoms) for every level ``k >= 1``."""
    model = seq.model
    case1, case2 = [], []
    for k in range(1, seq.depth + 1):
        flags = seq.admissible_flags(k)
        adm = np.nonzero(flags)[0]
        if not adm.size:
            continue
        A = seq.P[k].atom(int(adm[0]))
        X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        case1.append((k, OpValuedFunction.constant(A, X @ X.conj().T)))
        keys = np.sort(np.concatenate([seq.P[k].atom_keys(int(a)) for a in adm]))
        vals = rng.normal(size=(keys.size, d, d)) + 1j * rng.normal(size=(keys.size, d, d))
        vals = vals + np.conj(np.swapaxes(vals, 1, 2))
        g = OpValuedFunction(model, keys, vals, _sorted=True)
        case2.append((k, g - conditional_expectation(g, seq.P[k])))
    return case1, case2


def _local_row(r, label: str) -> Row:
    anchor = A_LOCAL1 if r.case == 1 else A_LOCAL2
    p = "inf" if r.p == np.inf else f"{r.p:g}"
    rel = "2 * 2^(n-k)" if r.case == 1 else "2^(k-n)"
    return Row(f"{label}: n={r.n}, k={r.k}, p={p}: ||D_n f||_p <= {rel} ||f||_p", anchor, r.value, r.bound,
               bool(r.holds), r.asserted, note=r.note)


def verify_function(f: OpValuedFunction, seq: FilteredSequence, cfg: RunConfig, label: str,
                    rng: np.random.Generator) -> list[Row]:
    suites = set(cfg.suites)
    lams = [float(x) for x in cfg.lambdas]
    rows: list[Row] = []
    if suites & {"cuculescu", "cz", "cancellation"}:
        for lam in lams:
            tag = f"{label}, lam={lam:g}: "
            if suites & {"cz"}:
                r, _ = cz_rows(f, lam, seq, label)
                rows += r
            elif "cuculescu" in suites:
                cc = cuculescu(f, lam, seq)
                rows += [Row(tag + n, A_CUC, cc.checks.get(n), None, ok) for n, ok in cc.passed.items()]
            if "cancellation" in suites:
                parts = cz_decompose(f, lam, seq)
                z = zeta_projection(seq, parts.cc)
                c = cancellation_check(parts, seq, z)
                rows.append(Row(tag + c.name, A_CANCEL, c.value, c.bound, bool(c.holds)))
                for k in range(parts.depth + 1):
                    for n in range(k, len(seq.P)):
                        o = off_bound_check(parts, n, k, seq)
                        rows.append(Row(tag + o.name, A_OFF, o.value, o.bound, bool(o.holds)))
    if "local" in suites:
        case1, case2 = local_fixtures(seq, f.d, rng)
        for k, g in case1:
            for n in range(k):
                rows.append(_local_row(local_estimate_report(g, n, k, 1, seq), label))
        for k, g in case2:
            for n in range(k, len(seq.P)):
                for p in (1, 2, np.inf):
                    rows.append(_local_row(local_estimate_report(g, n, k, p, seq), label))
        W = seq.window.elements()
        xs = [W[i] for i in rng.choice(len(W), size=min(8, len(W)), replace=False)]
        for k in range(1, seq.depth + 1):
            for n in range(len(seq.P)):
                ok = boundary_domination_check(seq, n, k, xs)
                rows.append(Row(f"{label}: n={n}, k={k}: cut atoms inside x boundary(F_n)", A_DOM, None, None,
                                ok, asserted=False, note="sampled x; reported only"))
    if "l2" in suites:
        r = l2_bound_check(f, seq)
        rows.append(Row(f"{label}: (sum_n ||D_n f||_2^2)^(1/2) <= sum_s C_s ||f||_2", A_L2, r.ratio, r.bound,
                        bool(r.holds), note=f"per-shift constants {dict(sorted(r.per_shift.items()))}"))
    if "weak11" in suites:
        if len(seq.P) > 12:
            cfg.require_seed("the Rademacher average above 12 levels")
        w = weak11_check(f, lams, seq, ceiling=float(cfg.ceiling), seed=cfg.seed or 0)
        for wr in w.rows:
            for name, ok in wr.holds.items():
                part = {"good part Chebyshev": "g", "hybrid part L1": "h", "bad part zeta splitting": "b"}.get(name)
                rows.append(Row(f"{label}, lam={wr.lam:g}: {name}", A_WEAK,
                                wr.measured.get(part) if part else None,
                                wr.bounds.get(part) if part else None, bool(ok)))
        rows.append(Row(f"{label}: sup_lam lam phi(|D f| > lam) / ||f||_1 <= ceiling", A_WEAK, w.constant,
                        w.ceiling, w.constant <= w.ceiling,
                        note=("exact sign enumeration" if w.exact_signs else "sampled signs")
                        + "; empirical ceiling, not a proven constant"))
    if "maximal" in suites:
        for lam in lams:
            m = maximal_projection(f, lam, seq)
            for name, ok in m.checks.items():
                val = m.sup_norm if name.startswith("sup") else None
                rows.append(Row(f"{label}, lam={lam:g}: {name}", A_MAX, val,
                                m.sup_bound if name.startswith("sup") else None, bool(ok)))
    if "split" in suites:
        s = admissible_split(f, seq)
        total = s.total()
        diff = float(np.abs((total - f).pruned(0.0).values).max(initial=0.0)) if total is not None else float("inf")
        rows.append(Row(f"{label}: sum of split pieces equals f", A_SPLIT, diff, 0.0, diff == 0.0 and s.residual == 0))
        rows.append(Row(f"{label}: split terms", A_SPLIT, len(s.terms), None, None, asserted=False,
                        note=f"alpha={fmt(s.alpha)}, capture guarantee applies: {s.guaranteed}"))
    return rows


def cmd_verify(cfg: RunConfig) -> ReportEnvelope:
    env = ReportEnvelope("verify", cfg.echo())
    if not cfg.suites:
        return env
    with env.timed("build"):
        seq = build_sequence(cfg)
    env.extend(regularity_rows(seq))
    funcs = load_functions(cfg, seq)
    seed = cfg.seed if cfg.seed is not None else 0
    with env.timed("suites"):
        for i, (label, f) in enumerate(funcs):
            env.extend(verify_function(f, seq, cfg, label, np.random.default_rng([seed, i, 1])))
    env.tables["checks"] = [r.to_dict() for r in env.rows]
    env.data = {"filtration_id": cfg.filtration_id, "functions": [lbl for lbl, _ in funcs],
                "sequence": describe_sequence(seq, with_atoms=False)}
    return env


# ---- ergodic -------------------------------------------------------------------------


def generic_conjugation(d: int, rng: np.random.Generator) -> UnitaryConjugation:
    H = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return UnitaryConjugation.from_hermitian(H + H.conj().T)


def cmd_ergodic(cfg: RunConfig) -> ReportEnvelope:
    env = ReportEnvelope("ergodic", cfg.echo())
    e = cfg.ergodic
    thr = float(e.threshold) if e.threshold is not None else None
    if e.action == "conjugation":
        rng = np.random.default_rng(cfg.require_seed("the unitary and the test matrix"))
        action = generic_conjugation(e.d, rng)
        x = rng.normal(size=(e.d, e.d)) + 1j * rng.normal(size=(e.d, e.d))
    else:
        k = 1 if cfg.group == "Z" else 2
        action = TorusTranslation(e.N, k)
        x = np.zeros((e.N,) * k, dtype=np.int64)
        x[(0,) * k] = 1
    with env.timed("converge"):
        table = ergodic_converge(action, x, cfg.schedule, e.depth, thr)
    r = getattr(action, "k", 1)
    defects = action.check_action([((1,) * r, (2,) * r), ((-3,) * r, (5,) * r)])
    env.add(Row("a_g a_h = a_gh", A_ERG, defects["homomorphism"], 1e-10, defects["homomorphism"] <= 1e-10))
    env.add(Row("a_g preserves the trace", A_ERG, defects["trace"], 1e-10, defects["trace"] <= 1e-10))
    fp = fixed_point_projection(action)
    env.add(Row("fixed-point projection: P^2 = P and P a_g = P", A_ERG,
                max(fp.idempotence, fp.invariance), 1e-10, fp.ok))
    for name, ok in table.checks.items():
        final = table.rows[-1].error if table.rows else None
        env.add(Row(name, A_ERG, final if "final" in name else None, thr if "final" in name else None, ok))
    if isinstance(action, TorusTranslation):
        for row in table.rows:
            whole = cfg.schedule.length(row.n) % e.N == 0
            env.add(Row(f"n={row.n}: A_n x = P x exactly", A_ERG, row.error, 0.0, bool(row.exact_equal),
                        asserted=whole,
                        note="F_n covers whole periods" if whole else "F_n does not cover whole periods"))
    env.tables["convergence"] = [{"n": r.n, "size": r.size, "error": r.error, "oracle": r.oracle,
                                  "exact_equal": r.exact_equal} for r in table.rows]
    env.data = {"action": e.action, "rows": env.tables["convergence"]}
    return env


COMMANDS: dict[str, Callable[[RunConfig], ReportEnvelope]] = {
    "tile": cmd_tile,
    "partition": cmd_partition,
    "filtration": cmd_filtration,
    "cz": cmd_cz,
    "verify": cmd_verify,
    "ergodic": cmd_ergodic,
}
