"""Finite-difference gradient verification.

Central differences (f(x+h) - f(x-h)) / 2h are compared against tape
gradients element by element. The relative error uses a small floor in the
denominator so that agreement between two near-zero gradients is not
drowned by floating-point noise in the difference quotient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Tensor

DEFAULT_STEP = 1e-6
_REL_FLOOR = 1e-3


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _REL_FLOOR)


def numeric_grad(f: Callable[[], float], t: Tensor,
                 elements: Iterable[tuple[int, int]] | None = None,
                 h: float = DEFAULT_STEP) -> dict[tuple[int, int], float]:
    """Central finite differences of the scalar ``f()`` w.r.t. entries of ``t``.

    ``f`` must rebuild its forward pass from ``t.data`` on every call; the
    entry under test is perturbed in place and restored afterwards.
    """
    if elements is None:
        rows, cols = t.shape
        elements = [(i, j) for i in range(rows) for j in range(cols)]
    out = {}
    for i, j in elements:
        orig = t.data[i, j]
        t.data[i, j] = orig + h
        fp = f()
        t.data[i, j] = orig - h
        fm = f()
        t.data[i, j] = orig
        out[(i, j)] = (fp - fm) / (2.0 * h)
    return out


@dataclass
class CheckReport:
    checks: int
    max_rel_err: float
    worst: str

    def merge(self, other: "CheckReport") -> "CheckReport":
        if other.max_rel_err > self.max_rel_err:
            return CheckReport(self.checks + other.checks,
                               other.max_rel_err, other.worst)
        return CheckReport(self.checks + other.checks,
                           self.max_rel_err, self.worst)


def compare_gradients(f: Callable[[], float],
                      named_params: Sequence[tuple[str, Tensor]],
                      analytic: dict[str, np.ndarray],
                      elements_per_tensor: int | None = None,
                      rng: np.random.Generator | None = None,
                      h: float = DEFAULT_STEP) -> CheckReport:
    """Compare analytic grads against finite differences of ``f``.

    ``analytic`` maps parameter name to the gradient array captured after a
    backward pass. When ``elements_per_tensor`` is set, a random subset of
    entries is checked per tensor (biased toward entries with non-zero
    analytic gradient, plus a couple of zero entries to catch missing
    gradient paths).
    """
    report = CheckReport(0, 0.0, "")
    for name, t in named_params:
        grad = analytic[name]
        rows, cols = t.shape
        all_elems = [(i, j) for i in range(rows) for j in range(cols)]
        if elements_per_tensor is None or len(all_elems) <= elements_per_tensor:
            elems = all_elems
        else:
            assert rng is not None
            nz = [(i, j) for i, j in all_elems if grad[i, j] != 0.0]
            zs = [(i, j) for i, j in all_elems if grad[i, j] == 0.0]
            take_nz = min(len(nz), max(1, elements_per_tensor - 2))
            picked = [nz[i] for i in rng.choice(len(nz), take_nz, replace=False)] if nz else []
            n_zero = min(len(zs), elements_per_tensor - len(picked))
            if n_zero > 0:
                picked += [zs[i] for i in rng.choice(len(zs), n_zero, replace=False)]
            elems = picked
        numeric = numeric_grad(f, t, elems, h=h)
        for ij, num in numeric.items():
            err = relative_error(grad[ij], num)
            report.checks += 1
            if err > report.max_rel_err:
                report.max_rel_err = err
                report.worst = f"{name}{ij}: analytic={grad[ij]:.6g} numeric={num:.6g}"
    return report


# -- op-level and end-to-end suites (CLI entry point) ---------------------------


def _projected(tape, out, weights) -> Tensor:
    return tape.sum_all(tape.mul(out, Tensor(weights)))


def run_op_suite(base_seed: int = 0, seeds: int = 20) -> CheckReport:
    """Finite-difference every differentiable op on randomized inputs."""
    from .autodiff import Tape, param

    report = CheckReport(0, 0.0, "")
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + 1000 + s)
        a = param(rng.normal(size=(3, 4)))
        b = param(rng.normal(size=(4, 3)))
        x = param(rng.normal(size=(1, 6)))
        w = param(rng.normal(size=(4, 6)))
        bias = param(rng.normal(size=(1, 4)))
        gain = param(rng.normal(size=(1, 4)))
        vs = [param(rng.normal(size=(1, 4))) for _ in range(3)]
        table = param(rng.normal(size=(8, 4)))
        nudged = param(rng.normal(size=(1, 6)))
        nudged.data += np.sign(nudged.data) * 0.01  # keep clear of the relu kink
        p_mat = rng.normal(size=(3, 3))
        p_43 = rng.normal(size=(4, 3))
        p_row4 = rng.normal(size=(1, 4))
        p_row6 = rng.normal(size=(1, 6))
        p_row12 = rng.normal(size=(1, 12))
        p_34 = rng.normal(size=(3, 4))

        cases = [
            ("matmul", [("a", a), ("b", b)],
             lambda t: _projected(t, t.matmul(a, b), p_mat)),
            ("transpose_scale", [("a", a)],
             lambda t: _projected(t, t.scale(t.transpose(a), 1.7), p_43)),
            ("add_sub_mul", [("a", a), ("b", b)],
             lambda t: _projected(
                 t, t.mul(t.add(a, a), t.sub(a, t.transpose(b))), p_34)),
            ("softmax_rows", [("a", a)],
             lambda t: _projected(t, t.softmax_rows(a), p_34)),
            ("layer_norm", [("a", a), ("gain", gain), ("bias", bias)],
             lambda t: _projected(t, t.layer_norm(a, gain, bias), p_34)),
            ("affine", [("x", x), ("w", w), ("bias", bias)],
             lambda t: _projected(t, t.affine(x, w, bias), p_row4)),
            ("tanh", [("x", x)], lambda t: _projected(t, t.tanh(x), p_row6)),
            ("sigmoid", [("x", x)],
             lambda t: _projected(t, t.sigmoid(x), p_row6)),
            ("relu", [("nudged", nudged)],
             lambda t: _projected(t, t.relu(nudged), p_row6)),
            ("stack_vec", [(f"v{i}", v) for i, v in enumerate(vs)],
             lambda t: _projected(t, t.vec_rows(t.stack_rows(vs)), p_row12)),
            ("concat_cols", [(f"v{i}", v) for i, v in enumerate(vs)],
             lambda t: _projected(t, t.concat_cols(vs), p_row12)),
            ("gather_mean", [("table", table)],
             lambda t: _projected(
                 t, t.mean_rows(t.gather_rows(table, [0, 2, 2, 5])), p_row4)),
        ]
        for _name, named, fwd in cases:
            def run(fn=fwd):
                tape = Tape(check_finite=True)
                return fn(tape), tape

            loss, tape = run()
            tape.backward(loss)
            analytic = {n: t.grad.copy() for n, t in named}
            for _n, t in named:
                t.zero_grad()
            case_report = compare_gradients(lambda: run()[0].item(), named,
                                            analytic)
            report = report.merge(case_report)
    return report


def run_pipeline_check(seed: int, dim: int = 8, neighbors: int = 2,
                       heads: int = 2,
                       elements_per_tensor: int = 6) -> CheckReport:
    """End-to-end check: both language branches, encoders, match head, and
    the pairwise hinge, against central differences on every parameter."""
    from .autodiff import Tape
    from .encoders import TokenSequence
    from .model import ModelConfig, QueryKG, Ranker
    from .trainer import hinge_loss

    cfg = ModelConfig(dim=dim, heads=heads, neighbors=neighbors, buckets=1024,
                      source_lang="src", target_lang="tgt", seed=seed)
    model = Ranker(cfg)
    rng = np.random.default_rng(seed)
    s_vocab = [f"sw{i}" for i in range(12)]
    t_vocab = [f"tw{i}" for i in range(12)]

    def seq(vocab, n, lang):
        return TokenSequence([vocab[int(i)] for i in rng.integers(0, 12, n)],
                             lang)

    query = seq(s_vocab, 3, "src")
    doc_pos = seq(t_vocab, 6, "tgt")
    doc_neg = seq(t_vocab, 6, "tgt")
    qkg = QueryKG(
        "e1", False,
        labels={"src": seq(s_vocab, 1, "src"), "tgt": seq(t_vocab, 1, "tgt")},
        descriptions={"src": seq(s_vocab, 4, "src"),
                      "tgt": seq(t_vocab, 4, "tgt")},
        neighbor_labels={"src": [seq(s_vocab, 1, "src") for _ in range(neighbors)],
                         "tgt": [seq(t_vocab, 1, "tgt") for _ in range(neighbors)]},
        neighbor_descriptions={"src": [seq(s_vocab, 3, "src")
                                       for _ in range(neighbors)],
                               "tgt": [seq(t_vocab, 3, "tgt")
                                       for _ in range(neighbors)]})

    def forward():
        tape = Tape(check_finite=True)
        kg_vecs = model.encode_kg(tape, qkg)
        s_pos = model.score_pair(tape, query, doc_pos, kg_vecs)
        s_neg = model.score_pair(tape, query, doc_neg, kg_vecs)
        return hinge_loss(tape, [s_pos], [s_neg]), tape

    loss, tape = forward()
    tape.backward(loss)
    named = model.named_parameters()
    analytic = {name: t.grad.copy() for name, t in named}
    model.zero_grads()
    return compare_gradients(lambda: forward()[0].item(), named, analytic,
                             elements_per_tensor=elements_per_tensor,
                             rng=np.random.default_rng(seed + 99))


def run_full_suite(base_seed: int = 0, dim: int = 8, neighbors: int = 2,
                   heads: int = 2, op_seeds: int = 20,
                   pipeline_seeds: int = 20) -> CheckReport:
    report = run_op_suite(base_seed, seeds=op_seeds)
    for s in range(pipeline_seeds):
        report = report.merge(run_pipeline_check(base_seed + s, dim=dim,
                                                 neighbors=neighbors,
                                                 heads=heads))
    return report

