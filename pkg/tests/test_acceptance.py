"""Acceptance gate.  Each test prints one ``[Cn] PASS|FAIL`` line (also listed
in the pytest terminal summary) and then asserts the criterion."""

import math
import time
import zlib

import numpy as np
import pytest

from unrollfold import autodiff as ad
from unrollfold import cli, ioformats
from unrollfold import scorenet as sn
from unrollfold.core import (RnaSequence, build_constraint_mask, is_pseudoknotted,
                             pairs_to_matrix, validate_structure)
from unrollfold.evaluation import prf
from unrollfold.experiments import ablation_run
from unrollfold.losses import f1_loss, trajectory_loss, weighted_bce
from unrollfold.model import save
from unrollfold.oracle import crossing_landscape, exact_decode, nested_decode, solver_trials
from unrollfold.synth import hairpin_dataset
from unrollfold.train import TrainConfig, finetune, pretrain
from unrollfold.ppnet import PpParams, pp_init, pp_solve_convergent, pp_unroll, ppcell_step

from conftest import GATE_LINES, random_bases, random_valid_pairs

S = math.log(9.0)


def gate(tag, ok, detail):
    line = f"[{tag}] {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    GATE_LINES.append(line)
    return ok


# --------------------------------------------------------------------- C1

def _fuzz_sequences(rng, n):
    """Half uniform random, half hairpin-like, a few N bases sprinkled into both."""
    hp = iter(hairpin_dataset(n, seed=12345))
    seqs = []
    for k in range(n):
        if k % 2:
            bases = list(next(hp).seq.bases)
        else:
            bases = list(rng.choice(list("AUCG"), size=int(rng.integers(10, 161))))
        for i in np.flatnonzero(rng.random(len(bases)) < 0.02):
            bases[i] = "N"
        seqs.append(RnaSequence("".join(bases), f"f{k}"))
    return seqs


def test_c1_validity_fuzz(tmp_path, capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 1000
    seqs = _fuzz_sequences(rng, n)
    fasta = tmp_path / "fuzz.fa"
    fasta.write_text(ioformats.write_fasta(seqs))

    # a briefly trained model, so predictions are mostly nonempty
    cfg = TrainConfig(epochs_pretrain=15, epochs_finetune=1, seed=11)
    recs = hairpin_dataset(120, seed=11)
    m, _ = pretrain(cfg, recs)
    m, _ = finetune(cfg, recs, m)
    model_path = tmp_path / "fuzz_model.json"
    save(m, model_path)

    bad, nonempty, files = 0, 0, 0
    for flags in ([], ["--classic"]):
        out_dir = tmp_path / ("classic" if flags else "unrolled")
        code = cli.main(["predict", str(fasta), "--model", str(model_path),
                         "--out-dir", str(out_dir), "--out-format", "bpseq", *flags])
        capsys.readouterr()
        assert code == 0
        for s in seqs:
            rec = ioformats.read_structure(out_dir / f"{s.id}.bpseq")
            files += 1
            nonempty += bool(rec.pairs)
            bad += bool(validate_structure(pairs_to_matrix(rec.pairs, len(rec.seq)), rec.seq))

    # adversarial supplement: the convergent solver on unstructured random landscapes
    n_land = 800
    for s in seqs[:n_land]:
        L = len(s)
        U = rng.normal(S, 2.0, size=(L, L))
        res = pp_solve_convergent(0.5 * (U + U.T), build_constraint_mask(s))
        bad += bool(validate_structure(res.A, s))
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and files == 2 * n and elapsed < 120
    gate("C1", ok, f"validity: {n} sequences x (unrolled, classic) via CLI + {n_land} random landscapes, "
                   f"{bad} invalid, {nonempty}/{files} predictions nonempty, {elapsed:.0f}s (limit 120s)")
    assert ok


# --------------------------------------------------------------------- C2

def test_c2_oracle_equivalence():
    t0 = time.perf_counter()
    res = solver_trials(trials=200, seed=7, min_len=6, max_len=12, density=0.3,
                        hyper=PpParams(rho=0.0), target=0.95)
    elapsed = time.perf_counter() - t0
    ok = res.pass_rate >= 0.90 and elapsed < 300
    q = res.quantiles((0, 5, 10, 50))
    gate("C2", ok, f"oracle equivalence: ratio>=0.95 in {res.pass_rate:.1%} of 200 trials (need 90%); "
                   f"p0={q[0]:.3f} p5={q[5]:.3f} p10={q[10]:.3f}; {elapsed:.1f}s")
    assert ok


# --------------------------------------------------------------------- C3

def test_c3_pseudoknot_capability():
    seq, U = crossing_landscape(S)
    M = build_constraint_mask(seq)
    ex, ne = exact_decode(U, S, M), nested_decode(U, S, M)
    sol = pp_solve_convergent(U, M)
    want = {(0, 7), (4, 12)}
    ok = (ex.pairs == want and sol.pairs == want and is_pseudoknotted(sol.pairs)
          and ex.objective == pytest.approx(10.0) and ne.objective == pytest.approx(5.0)
          and not is_pseudoknotted(ne.pairs))
    gate("C3", ok, f"pseudoknots: exact={sorted(ex.pairs)} ({ex.objective:g}), "
                   f"solver={sorted(sol.pairs)}, nested={sorted(ne.pairs)} ({ne.objective:g})")
    assert ok


# --------------------------------------------------------------------- C4

def _kinkless(rng, shape, kinks=(0.0,), gap=0.05):
    x = rng.normal(size=shape)
    for p in kinks:
        near = np.abs(x - p) < gap
        x[near] = p + np.where(x[near] >= p, 2 * gap, -2 * gap)
    return x


def _primitive_checks():
    unary = {
        "neg": (lambda a: -a, ()), "relu": (ad.relu, (0.0,)), "abs": (ad.abs_, (0.0,)),
        "exp": (ad.exp, ()), "sigmoid": (ad.sigmoid, ()), "log_sigmoid": (ad.log_sigmoid, ()),
        "softsign": (lambda a: ad.softsign(a, 10.0), ()), "clip_max1": (ad.clip_max1, (1.0,)),
        "transpose": (ad.transpose, ()), "softmax_rows": (ad.softmax_rows, ()),
        "row_sum": (lambda a: ad.outer_ones(ad.row_sum(a), 3), ()),
        "tile_rows": (lambda a: ad.tile_rows(ad.row_sum(a), 2), ()),
        "reshape": (lambda a: ad.reshape(a, (4, 3)), ()), "powi": (lambda a: ad.powi(a, 2), ()),
        "scalar_ops": (lambda a: (2.0 * a - 1.0) / 3.0, ()),
    }
    binary = {
        "add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div,
        "matmul": lambda a, b: a @ b.T, "inner_product": lambda a, b: ad.inner_product(a, b) * a,
        "concat_rows": lambda a, b: ad.concat_rows([a, b]),
        "concat_cols": lambda a, b: ad.concat_cols([a, b]),
        "pairwise_sum": ad.pairwise_sum, "full_sum": lambda a, b: ad.full_sum(a) * b,
    }
    errs = {}
    for name, (fn, kinks) in unary.items():
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        x = _kinkless(rng, (3, 4), kinks)
        W = rng.normal(size=fn(ad.const(x)).shape)
        errs[name] = ad.check_gradient(lambda a: ad.inner_product(fn(a), W), x)
    rng = np.random.default_rng(1)
    errs["log"] = ad.check_gradient(lambda a: ad.full_sum(ad.log(a) * a), rng.uniform(0.5, 2, (3, 3)))
    for name, fn in binary.items():
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        a = rng.normal(size=(3, 4))
        b = rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
        W = rng.normal(size=fn(ad.const(a), ad.const(b)).shape)
        errs[name] = ad.check_gradient(lambda x, y: ad.inner_product(fn(x, y), W), [a, b])
    return errs


def _loss_checks():
    rng = np.random.default_rng(2)
    Astar = (rng.random((5, 5)) < 0.3).astype(float)
    Astar[0, 4] = 1.0
    A = rng.uniform(0.05, 0.95, size=(5, 5))
    traj = [rng.uniform(0.05, 0.95, size=(5, 5)) for _ in range(3)]
    return {
        "f1_loss": ad.check_gradient(lambda a: f1_loss(a, Astar), A),
        "trajectory_loss": ad.check_gradient(lambda *t: trajectory_loss(list(t), Astar, 0.7), traj),
        "weighted_bce": ad.check_gradient(lambda u: weighted_bce(u, Astar, 300.0), rng.normal(size=(5, 5))),
    }


def _full_unroll_check():
    """Fine-tuning loss through a T = 5 unroll on L = 10, w.r.t. every network and decoder parameter."""
    cfg = sn.ScoreNetConfig(d=4, n_layers=1, n_heads=2, ff_width=8)
    params = sn.init_params(cfg, seed=3)
    params.weights["head.b2"] = params.weights["head.b2"] + S  # keep the gates in their live range
    seq = "GGGACUUCCC"
    M = build_constraint_mask(seq)
    Astar = pairs_to_matrix([(0, 9), (1, 8)], 10)
    names = sorted(params.weights)
    phi_names = sorted(PpParams().learnable())
    x = [params.weights[k] for k in names] + [np.array(PpParams().learnable()[k]) for k in phi_names]

    def loss(*leaves):
        w = dict(zip(names, leaves[:len(names)]))
        phi = dict(zip(phi_names, leaves[len(names):]))
        U = sn.forward(seq, params, w)
        traj = pp_unroll(U, M, phi, T=5, k=10.0)
        return trajectory_loss(traj, Astar, 0.9) + weighted_bce(U, Astar, 300.0)

    return ad.check_gradient(loss, x, eps=1e-5)


def test_c4_gradient_correctness():
    t0 = time.perf_counter()
    errs = _primitive_checks()
    errs.update(_loss_checks())
    errs["unroll_T5_L10"] = _full_unroll_check()
    elapsed = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and elapsed < 60
    gate("C4", ok, f"gradients: {len(errs)} checks, max relative error {errs[worst]:.2e} ({worst}); "
                   f"unroll check {errs['unroll_T5_L10']:.2e}; {elapsed:.1f}s")
    assert ok, errs


# --------------------------------------------------------------------- C5

def test_c5_iteration_invariants():
    rng = np.random.default_rng(55)
    phi = PpParams()
    violations, steps, pressured = [], 0, 0
    for inst in range(100):
        L = int(rng.integers(8, 60))
        seq = random_bases(rng, L)
        M = build_constraint_mask(seq)
        U = rng.normal(S + rng.uniform(-2, 3), rng.uniform(0.5, 4), size=(L, L))
        U = 0.5 * (U + U.T)
        Ug, st = pp_init(U, M, phi)
        for t in range(20):
            new = ppcell_step(Ug, M, st, phi)
            steps += 1
            checks = {
                "mask": not (new.A * (1 - M)).any(),
                "box": new.A.min() >= 0.0 and new.A.max() <= 1.0,
                "symmetry": np.array_equal(new.Ahat, new.Ahat.T),
                "dual>=0": (new.lam >= 0).all(),
            }
            over = new.A.sum(axis=1) > 1
            pressured += int(over.sum())
            checks["pressure"] = (new.lam[over] > st.lam[over]).all()
            violations += [(inst, t, k) for k, v in checks.items() if not v]
            st = new
    ok = not violations and steps == 2000 and pressured > 0
    gate("C5", ok, f"iteration invariants: {steps} steps over 100 instances, {len(violations)} violations, "
                   f"{pressured} over-full rows exercised the dual update")
    assert ok, violations[:5]


# --------------------------------------------------------------------- C6 / C10

_RUNS: dict[int, list] = {}


def _trend_runs(which):
    if which not in _RUNS:
        _RUNS[which] = [ablation_run(seed, arms=("full", "frozen", "bce")) for seed in range(5)]
    return _RUNS[which]


def test_c6_end_to_end_trend():
    t0 = time.perf_counter()
    runs = _trend_runs(0)
    elapsed = time.perf_counter() - t0
    full = [r.f1("full") for r in runs]
    frozen = [r.f1("frozen") for r in runs]
    bce = [r.f1("bce") for r in runs]
    geq = all(a >= b for a, b in zip(full, frozen))
    wins = sum(a > b for a, b in zip(full, frozen))
    ok = geq and wins >= 3 and runs[0].n_train + runs[0].n_valid >= 200 and elapsed < 1800
    fmt = lambda xs: "/".join(f"{x:.3f}" for x in xs)
    gate("C6", ok, f"trend: valid F1 full={fmt(full)} vs frozen-phi={fmt(frozen)} "
                   f"(bce-only {fmt(bce)}); full>=frozen all seeds={geq}, strict wins {wins}/5; "
                   f"{elapsed:.0f}s")
    assert ok


def test_c7_loss_metric_consistency():
    rng = np.random.default_rng(77)
    worst, n = 0.0, 0
    while n < 500:
        L = int(rng.integers(6, 60))
        seq = random_bases(rng, L)
        truth, pred = random_valid_pairs(rng, seq), random_valid_pairs(rng, seq)
        if not truth:
            continue
        n += 1
        loss = float(f1_loss(pairs_to_matrix(pred, L), pairs_to_matrix(truth, L)).value)
        worst = max(worst, abs(-loss - prf(pred, truth)[2]))
    ok = worst <= 1e-12
    gate("C7", ok, f"loss/metric: 500 binary matchings, max |-f1_loss - F1| = {worst:.1e}")
    assert ok


def test_c8_shift_metric():
    examples = [
        prf({(3, 12), (4, 11)}, {(3, 12), (4, 11)}) == (1.0, 1.0, 1.0)
        and prf({(3, 12), (4, 11)}, {(3, 12), (4, 11)}, True) == (1.0, 1.0, 1.0),
        prf({(11, 20)}, {(10, 20)}, True) == (1.0, 1.0, 1.0)
        and prf({(11, 20)}, {(10, 20)}, False) == (0.0, 0.0, 0.0),
        prf({(11, 20)}, {(10, 20), (11, 25)}, True)[:2] == (1.0, 0.5),
    ]
    rng = np.random.default_rng(88)
    dominated = 0
    for _ in range(1000):
        L = int(rng.integers(6, 50))
        seq = random_bases(rng, L)
        truth = random_valid_pairs(rng, seq)
        # predictions near the truth so shifts actually matter
        pred = {(i + int(rng.integers(-1, 2)), j + int(rng.integers(-1, 2))) for i, j in truth
                if rng.random() < 0.8}
        pred = {(i, j) for i, j in pred if 0 <= i < j < L} | random_valid_pairs(rng, seq, tries=3)
        exact, shifted = prf(pred, truth), prf(pred, truth, True)
        dominated += all(s >= e for s, e in zip(shifted, exact))
    ok = all(examples) and dominated == 1000
    gate("C8", ok, f"shift metric: examples {sum(examples)}/3, shifted>=exact in {dominated}/1000 fuzz instances")
    assert ok


MALFORMED = [
    ("ct", "3 x\n1 G 0 2 3 1\n2 A 1 3 0 2\n3 C 2 0 2 3\n"),  # 1->3 but 3->2
    ("ct", "4 x\n1 G 0 2 0 1\n2 A 1 3 0 2\n"),               # header length mismatch
    ("ct", "2 x\n1 G 0 2 9 1\n2 A 1 0 0 2\n"),               # partner out of range
    ("ct", "2 x\n1 G 0 2 0 1\nnot a line\n"),
    ("bpseq", "1 G 0\n1 G 0\n"),                             # duplicate index
    ("bpseq", "1 G 3\n2 A 0\n3 C 2\n"),                      # asymmetric
    ("bpseq", "1 G 0\n3 C 0\n"),                             # gap in indices
    ("bpseq", "1 G\n"),                                      # missing field
    ("bpseq", "1 G 1\n"),                                    # self pair
    ("bpseq", "# only a comment\n"),
    ("dbn", ">a\nGGGAAACCC\n((...))\n"),                     # length mismatch
    ("dbn", ">a\nGGGAAACCC\n(((...))]\n"),                   # mismatched closer
    ("dbn", ">a\nGGGAAACCC\n((.]..)).\n"),                   # unopened ']'
    ("dbn", ">a\nGGGAAACCC\n"),
]


def test_c9_format_roundtrips():
    rng = np.random.default_rng(99)
    n, knotted, failures = 0, 0, []
    while n < 500:
        L = int(rng.integers(5, 120))
        seq = random_bases(rng, L)
        pairs = random_valid_pairs(rng, seq)
        try:
            ioformats.to_dot_bracket(pairs, L)
        except ioformats.FormatError:
            continue  # needs more than four bracket kinds; not expressible in dot-bracket
        n += 1
        knotted += is_pseudoknotted(pairs)
        rec = ioformats.StructureRecord(RnaSequence(seq, f"r{n}"), pairs)
        for fmt in ("ct", "bpseq", "dbn"):
            back = ioformats.PARSERS[fmt](ioformats.WRITERS[fmt](rec))
            again = ioformats.PARSERS[fmt](ioformats.WRITERS[fmt](back))
            if (back.seq.bases, back.pairs) != (seq, pairs) or (again.seq.bases, again.pairs) != (seq, pairs):
                failures.append((n, fmt))
    rejected = 0
    for fmt, text in MALFORMED:
        try:
            ioformats.PARSERS[fmt](text)
        except ioformats.FormatError:
            rejected += 1
    ok = not failures and knotted >= 50 and rejected == len(MALFORMED)
    gate("C9", ok, f"round-trips: 500 structures x 3 formats ({knotted} pseudoknotted), {len(failures)} mismatches; "
                   f"malformed rejected {rejected}/{len(MALFORMED)}")
    assert ok, failures[:5]


def test_c10_determinism():
    first = _trend_runs(0)
    second = _trend_runs(1)
    same_ckpt = all(a.arms[k].checkpoint == b.arms[k].checkpoint
                    for a, b in zip(first, second) for k in a.arms)
    same_report = all(a.arms[k].report == b.arms[k].report for a, b in zip(first, second) for k in a.arms)
    ok = same_ckpt and same_report and len(first) == len(second) == 5
    gate("C10", ok, f"determinism: two runs of C6, checkpoints identical={same_ckpt}, reports identical={same_report}")
    assert ok
