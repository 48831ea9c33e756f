"""Estimator arithmetic on abstract error instances and numerical checks of the
bias and tail-bound results for the cross-domain doubly robust estimator.

An instance holds, per domain, the true error ``e``, imputed error ``e_hat``,
true propensity ``p`` and learned propensity ``p_hat`` over that domain's
user-item pairs.  Every estimator here is an average of per-domain means.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

MATRICES = ("e", "e_hat", "p", "p_hat")


@dataclass
class DomainErrors:
    e: np.ndarray
    e_hat: np.ndarray
    p: np.ndarray
    p_hat: np.ndarray
    pairs: np.ndarray | None = None  # (n, 2) user/item ids, for serialisation

    def __post_init__(self):
        for name in MATRICES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        n = self.e.size
        if any(getattr(self, name).size != n for name in MATRICES):
            raise ValueError("e, e_hat, p and p_hat must have equal length within a domain")
        if self.pairs is None:
            self.pairs = np.stack([np.arange(n), np.arange(n)], axis=1)

    @property
    def n(self) -> int:
        return self.e.size


@dataclass
class ErrorInstance:
    domains: list[DomainErrors]

    def validate(self) -> None:
        if not self.domains:
            raise ValueError("instance has no domains")
        for z, d in enumerate(self.domains):
            if d.n == 0:
                raise ValueError(f"domain {z} has no pairs")
            if np.any(d.e < 0) or np.any(d.e_hat < 0):
                raise ValueError("errors must be non-negative")
            if np.any(d.p <= 0) or np.any(d.p > 1) or np.any(d.p_hat <= 0) or np.any(d.p_hat > 1):
                raise ValueError("propensities must lie in (0, 1]")

    @property
    def num_pairs(self) -> int:
        return sum(d.n for d in self.domains)

    def flat(self) -> dict[str, np.ndarray]:
        """Concatenated vectors plus per-pair weights 1 / (|Z| |D^Z|)."""
        Z = len(self.domains)
        out = {name: np.concatenate([getattr(d, name) for d in self.domains]) for name in MATRICES}
        out["coef"] = np.concatenate([np.full(d.n, 1.0 / (Z * d.n)) for d in self.domains])
        return out


def _domain_average(values_per_domain) -> float:
    return float(np.mean([np.mean(v) for v in values_per_domain]))


def _split(inst: ErrorInstance, O) -> list[np.ndarray]:
    """Per-domain observation vectors from a flat vector or a per-domain list."""
    if isinstance(O, (list, tuple)) and len(O) == len(inst.domains) and all(np.ndim(x) == 1 for x in O):
        parts = [np.asarray(x, dtype=np.float64) for x in O]
    else:
        flat = np.asarray(O, dtype=np.float64).ravel()
        if flat.size != inst.num_pairs:
            raise ValueError(f"expected {inst.num_pairs} observation indicators, got {flat.size}")
        parts = np.split(flat, np.cumsum([d.n for d in inst.domains])[:-1])
    for d, o in zip(inst.domains, parts):
        if o.size != d.n:
            raise ValueError("observation vector does not match the domain sizes")
    return parts


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------
def prediction_inaccuracy(inst: ErrorInstance) -> float:
    inst.validate()
    return _domain_average(d.e for d in inst.domains)


def dr_estimate(inst: ErrorInstance, O) -> float:
    obs = _split(inst, O)
    return _domain_average(d.e_hat + o * (d.e - d.e_hat) / d.p_hat for d, o in zip(inst.domains, obs))


def ips_estimate(inst: ErrorInstance, O) -> float:
    obs = _split(inst, O)
    return _domain_average(o * d.e / d.p_hat for d, o in zip(inst.domains, obs))


def dr_bias(inst: ErrorInstance) -> float:
    """Closed-form bias: domain average of |sum Delta*delta| / |D^Z|."""
    terms = []
    for d in inst.domains:
        Delta = (d.p_hat - d.p) / d.p_hat
        delta = d.e - d.e_hat
        terms.append(abs(np.sum(Delta * delta)) / d.n)
    return float(np.mean(terms))


def exact_expectation_dr(inst: ErrorInstance) -> float:
    """E_O[E_DR] by linearity over independent Bernoulli(p) observations."""
    return _domain_average(d.e_hat + d.p * (d.e - d.e_hat) / d.p_hat for d in inst.domains)


def exact_expectation_ips(inst: ErrorInstance) -> float:
    return _domain_average(d.p * d.e / d.p_hat for d in inst.domains)


def _estimator_terms(inst: ErrorInstance, estimator: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    f = inst.flat()
    if estimator == "dr":
        base, kappa = f["e_hat"], (f["e"] - f["e_hat"]) / f["p_hat"]
    elif estimator == "ips":
        base, kappa = np.zeros_like(f["e"]), f["e"] / f["p_hat"]
    else:
        raise ValueError(f"estimator must be 'dr' or 'ips', got {estimator!r}")
    return f["coef"], base, kappa, f["p"]


def enumerate_expectation(inst: ErrorInstance, estimator: str = "dr") -> float:
    """E_O[estimator] by summing over all 2^n observation outcomes (n <= 20)."""
    if inst.num_pairs > kernels.MAX_ENUM_PAIRS:
        raise ValueError(f"enumeration refuses instances with more than {kernels.MAX_ENUM_PAIRS} pairs")
    return kernels.enumerate_expectation(*_estimator_terms(inst, estimator))


def _bound_sum(inst: ErrorInstance, estimator: str) -> float:
    total = 0.0
    for d in inst.domains:
        x = d.e - d.e_hat if estimator == "dr" else d.e
        total += float(np.sum((x / d.p_hat) ** 2)) / d.n
    return total


def tail_bound(inst: ErrorInstance, eta: float, estimator: str = "dr") -> float:
    """sqrt( log(2/eta) / (2 |Z| (sum_Z |D^Z|)^2) * sum_Z mean_Z (x/p_hat)^2 ), x = delta or e."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if estimator not in ("dr", "ips"):
        raise ValueError(f"estimator must be 'dr' or 'ips', got {estimator!r}")
    Z = len(inst.domains)
    total = inst.num_pairs
    return math.sqrt(math.log(2.0 / eta) / (2.0 * Z * total**2) * _bound_sum(inst, estimator))


def hoeffding_bound(inst: ErrorInstance, eta: float, estimator: str = "dr") -> float:
    """Hoeffding deviation bound with each pair's range scaled by its weight 1/(|Z||D^Z|).

    Reported next to :func:`tail_bound` for comparison; it is what Hoeffding's
    inequality gives for this weighted average.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    coef, _, kappa, _ = _estimator_terms(inst, estimator)
    return math.sqrt(math.log(2.0 / eta) / 2.0 * float(np.sum((coef * kappa) ** 2)))


def mc_estimates(inst: ErrorInstance, uniforms: np.ndarray, estimator: str = "dr") -> np.ndarray:
    """Estimator value for each row of uniforms, observing pair i when u_i < p_i."""
    return kernels.mc_estimates(*_estimator_terms(inst, estimator), uniforms)


# ---------------------------------------------------------------------------
# Instance sampling and serialisation
# ---------------------------------------------------------------------------
@dataclass
class SamplerConfig:
    num_domains: int = 2
    min_pairs: int = 2
    max_pairs: int = 10
    imputation: str = "scaled"  # scaled: e*U[0,2]; exact: e; adversarial: 3e
    propensity: str = "perturbed"  # perturbed: p*exp(U[-.5,.5]) clipped; exact: p
    p_low: float = 0.1
    p_min: float = 0.05


def sample_instance(rng: np.random.Generator, cfg: SamplerConfig = SamplerConfig()) -> ErrorInstance:
    domains = []
    for _ in range(cfg.num_domains):
        n = int(rng.integers(cfg.min_pairs, cfg.max_pairs + 1))
        e = rng.uniform(0.0, 1.0, n)
        if cfg.imputation == "scaled":
            e_hat = e * rng.uniform(0.0, 2.0, n)
        elif cfg.imputation == "exact":
            e_hat = e.copy()
        elif cfg.imputation == "adversarial":
            e_hat = 3.0 * e
        else:
            raise ValueError(f"unknown imputation mode {cfg.imputation!r}")
        p = rng.uniform(cfg.p_low, 1.0, n)
        if cfg.propensity == "perturbed":
            p_hat = np.clip(p * np.exp(rng.uniform(-0.5, 0.5, n)), cfg.p_min, 1.0)
        elif cfg.propensity == "exact":
            p_hat = p.copy()
        else:
            raise ValueError(f"unknown propensity mode {cfg.propensity!r}")
        domains.append(DomainErrors(e, e_hat, p, p_hat))
    return ErrorInstance(domains)


def premise_subinstance(inst: ErrorInstance) -> ErrorInstance | None:
    """Keep only pairs with 0 <= e_hat <= 2e; None when nothing is left."""
    kept = []
    for d in inst.domains:
        ok = (d.e_hat >= 0) & (d.e_hat <= 2.0 * d.e)
        if ok.any():
            kept.append(DomainErrors(d.e[ok], d.e_hat[ok], d.p[ok], d.p_hat[ok], d.pairs[ok]))
    return ErrorInstance(kept) if kept else None


def save_instance(inst: ErrorInstance, out_dir: str | Path) -> list[Path]:
    """One ``domain,user,item,value`` CSV per vector (e.csv, e_hat.csv, p.csv, p_hat.csv)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in MATRICES:
        path = out / f"{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain", "user", "item", "value"])
            for z, d in enumerate(inst.domains):
                vec = getattr(d, name)
                for (u, v), val in zip(d.pairs.tolist(), vec.tolist()):
                    w.writerow([z, u, v, repr(val)])
        paths.append(path)
    return paths


def load_instance(in_dir: str | Path) -> ErrorInstance:
    columns: dict[str, dict[int, list[tuple[int, int, float]]]] = {}
    for name in MATRICES:
        rows: dict[int, list[tuple[int, int, float]]] = {}
        with (Path(in_dir) / f"{name}.csv").open(newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                rows.setdefault(int(rec["domain"]), []).append((int(rec["user"]), int(rec["item"]), float(rec["value"])))
        columns[name] = rows
    domains = []
    for z in sorted(columns["e"]):
        pairs = np.array([(u, v) for u, v, _ in columns["e"][z]], dtype=np.int64)
        vecs = {name: np.array([val for _, _, val in columns[name][z]]) for name in MATRICES}
        domains.append(DomainErrors(vecs["e"], vecs["e_hat"], vecs["p"], vecs["p_hat"], pairs))
    return ErrorInstance(domains)


# ---------------------------------------------------------------------------
# Verification harness
# ---------------------------------------------------------------------------
@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    skipped: int = 0


@dataclass
class EstimatorReport:
    P: float
    E_DR: float
    E_IPS: float
    analytic_bias_DR: float
    exact_expectation_DR: float
    tail_bound_DR: float
    tail_bound_IPS: float
    eta: float
    trials: int
    coverage: list[dict] = field(default_factory=list)
    checks: list[CheckResult] = field(default_factory=list)
    failing: dict[str, ErrorInstance] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        lines = [
            "theory verification report",
            f"example instance: P={self.P:.6f} E_DR={self.E_DR:.6f} E_IPS={self.E_IPS:.6f}",
            f"  analytic bias={self.analytic_bias_DR:.6e} E_O[E_DR]={self.exact_expectation_DR:.6f}",
            f"  tail bound (eta={self.eta}): dr={self.tail_bound_DR:.6f} ips={self.tail_bound_IPS:.6f}",
            f"monte carlo draws per instance: {self.trials}",
        ]
        for row in self.coverage:
            lines.append(
                "  instance {i}: pairs={n} violation rate={rate:.5f} (stated bound {bound:.5f}); "
                "weighted-Hoeffding rate={hrate:.5f} (bound {hbound:.5f})".format(**row)
            )
        n_pass = sum(c.passed for c in self.checks)
        lines.append(f"checks passed: {n_pass}/{len(self.checks)}")
        for c in self.checks:
            skip = f" (skipped {c.skipped})" if c.skipped else ""
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}{skip}")
        return "\n".join(lines) + "\n"


def coverage_run(inst: ErrorInstance, trials: int, eta: float, rng: np.random.Generator) -> dict:
    """Violation rates of the stated and weighted-Hoeffding bounds over Bernoulli draws."""
    center = exact_expectation_dr(inst)
    uniforms = rng.random((trials, inst.num_pairs))
    dev = np.abs(mc_estimates(inst, uniforms, "dr") - center)
    bound = tail_bound(inst, eta, "dr")
    hbound = hoeffding_bound(inst, eta, "dr")
    return {
        "n": inst.num_pairs,
        "bound": bound,
        "rate": float(np.mean(dev > bound)),
        "hbound": hbound,
        "hrate": float(np.mean(dev > hbound)),
        "max_dev": float(dev.max()),
    }


def replay_checks(inst: ErrorInstance, trials: int, eta: float, seed: int = 0) -> list[CheckResult]:
    """Re-run the per-instance checks on one stored instance."""
    inst.validate()
    out = []
    if inst.num_pairs <= kernels.MAX_ENUM_PAIRS:
        gap = abs(dr_bias(inst) - abs(prediction_inaccuracy(inst) - enumerate_expectation(inst, "dr")))
        out.append(CheckResult("bias equals |P - E_O[E_DR]| (enumeration)", gap <= 1e-10, f"gap {gap:.3e}"))
    allowed = eta + 3.0 * math.sqrt(eta * (1.0 - eta) / trials)
    row = coverage_run(inst, trials, eta, np.random.default_rng(seed))
    out.append(CheckResult("tail-bound violation rate <= eta + 3 s.e.", row["rate"] <= allowed,
                           f"rate {row['rate']:.5f}, allowed {allowed:.5f}"))
    sub = premise_subinstance(inst)
    if sub is not None:
        ok = tail_bound(sub, eta, "dr") <= tail_bound(sub, eta, "ips")
        out.append(CheckResult("dr tail bound <= ips tail bound under 0 <= e_hat <= 2e", ok,
                               "holds" if ok else "violated", skipped=inst.num_pairs - sub.num_pairs))
    return out


def verify_theory(
    cfg: SamplerConfig = SamplerConfig(),
    trials: int = 100_000,
    seed: int = 0,
    eta: float = 0.05,
    n_instances: int = 1000,
    n_coverage_instances: int = 20,
) -> EstimatorReport:
    """Run the four checks: bias exactness, double robustness, tail coverage, bound comparison."""
    if trials < 10_000:
        raise ValueError("need at least 10^4 Monte Carlo trials")
    rng = np.random.default_rng(seed)
    failing: dict[str, ErrorInstance] = {}
    checks = []

    # (a) closed-form bias equals |P - enumerated expectation|
    worst_a = 0.0
    for _ in range(n_instances):
        inst = sample_instance(rng, cfg)
        gap = abs(dr_bias(inst) - abs(prediction_inaccuracy(inst) - enumerate_expectation(inst, "dr")))
        if gap > worst_a:
            worst_a = gap
            if gap > 1e-10:
                failing.setdefault("bias_exactness", inst)
    checks.append(CheckResult("bias equals |P - E_O[E_DR]| (enumeration)", worst_a <= 1e-10, f"max gap {worst_a:.3e}"))

    # (b) double robustness
    worst_b = 0.0
    for _ in range(n_instances):
        inst = sample_instance(rng, cfg)
        for d in inst.domains:
            d.e_hat = d.e.copy()
        b1 = dr_bias(inst)
        inst2 = sample_instance(rng, cfg)
        for d in inst2.domains:
            d.p_hat = d.p.copy()
        b2 = dr_bias(inst2)
        if max(b1, b2) > 1e-12:
            failing.setdefault("double_robustness", inst if b1 > b2 else inst2)
        worst_b = max(worst_b, b1, b2)
    checks.append(CheckResult("zero bias with exact imputation or exact propensity", worst_b <= 1e-12, f"max bias {worst_b:.3e}"))

    # (c) tail-bound coverage
    allowed = eta + 3.0 * math.sqrt(eta * (1.0 - eta) / trials)
    coverage = []
    worst_rate = 0.0
    for i in range(n_coverage_instances):
        inst = sample_instance(rng, cfg)
        row = coverage_run(inst, trials, eta, rng)
        row["i"] = i
        coverage.append(row)
        if row["rate"] > allowed:
            failing.setdefault("tail_coverage", inst)
        worst_rate = max(worst_rate, row["rate"])
    checks.append(
        CheckResult(
            "tail-bound violation rate <= eta + 3 s.e.",
            worst_rate <= allowed,
            f"worst rate {worst_rate:.5f}, allowed {allowed:.5f}",
        )
    )

    # (d) dr bound <= ips bound whenever 0 <= e_hat <= 2e
    violations, skipped = 0, 0
    for _ in range(n_instances):
        inst = sample_instance(rng, cfg)
        sub = premise_subinstance(inst)
        if sub is None or sub.num_pairs < inst.num_pairs:
            skipped += inst.num_pairs - (0 if sub is None else sub.num_pairs)
        if sub is None:
            continue
        if tail_bound(sub, eta, "dr") > tail_bound(sub, eta, "ips"):
            violations += 1
            failing.setdefault("bound_comparison", inst)
    checks.append(
        CheckResult("dr tail bound <= ips tail bound under 0 <= e_hat <= 2e", violations == 0,
                    f"{violations} violations", skipped=skipped)
    )

    example = sample_instance(np.random.default_rng(seed), cfg)
    draw = (np.random.default_rng(seed + 1).random(example.num_pairs) < example.flat()["p"]).astype(float)
    return EstimatorReport(
        P=prediction_inaccuracy(example),
        E_DR=dr_estimate(example, draw),
        E_IPS=ips_estimate(example, draw),
        analytic_bias_DR=dr_bias(example),
        exact_expectation_DR=exact_expectation_dr(example),
        tail_bound_DR=tail_bound(example, eta, "dr"),
        tail_bound_IPS=tail_bound(example, eta, "ips"),
        eta=eta,
        trials=trials,
        coverage=coverage,
        checks=checks,
        failing=failing,
    )
