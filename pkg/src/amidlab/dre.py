"""Hybrid losses, the alternating trainer and model checkpoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datagen import CdsrData, ConfigError, PairBatch, make_batches, pairs_from_batch, sample_full_space
from .model import AmidModel
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

OBJECTIVES = ("naive", "ips", "dr")
CHECKPOINT_MAGIC = "amidlab-checkpoint"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    def __init__(self, phase: int, step: int):
        super().__init__(f"loss became NaN in phase {phase} at step {step}")
        self.phase, self.step = phase, step


@dataclass
class TrainConfig:
    lambda1: float = 0.01
    lambda2: float = 1e-4
    lambda3: float = 1e-4
    lambda4: float = 1e-4
    lambda5: float = 1e-4
    lambda_p: float = 1.0
    lr_phase1: float = 1e-3
    lr_phase2: float = 1e-5
    Q: int = 200
    Q_prime: int = 50
    batch_size: int = 64
    negatives: int = 1
    unobserved_per_context: int = 2
    error_metric: str = "mse"
    objective: str = "dr"
    normalize_imputation_term: bool = False

    def validate(self) -> None:
        lams = (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5, self.lambda_p)
        if any(x < 0 for x in lams):
            raise ConfigError("loss weights must be non-negative")
        if self.Q < 1 or (self.objective != "naive" and self.Q_prime < 1):
            raise ConfigError("Q and Q' must be >= 1")
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise ConfigError("learning rates must be positive")
        if self.error_metric not in ("mse", "mae"):
            raise ConfigError(f"error_metric must be mse or mae, got {self.error_metric!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")


@dataclass
class StepRecord:
    phase: int
    step: int
    loss: float
    grad_norm: float


@dataclass
class TrainingHistory:
    records: list[StepRecord] = field(default_factory=list)

    def losses(self, phase: int) -> list[float]:
        return [r.loss for r in self.records if r.phase == phase]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("phase,step,loss,grad_norm\n")
            for r in self.records:
                fh.write(f"{r.phase},{r.step},{r.loss!r},{r.grad_norm!r}\n")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
def pointwise_error(r_hat, r, metric: str = "mse"):
    """(r_hat - r)^2 or |r_hat - r|; works on floats, arrays and Tensors."""
    if isinstance(r_hat, Tensor):
        diff = r_hat - r
        return ad.square(diff) if metric == "mse" else ad.absolute(diff)
    diff = np.asarray(r_hat, dtype=np.float64) - np.asarray(r, dtype=np.float64)
    out = diff * diff if metric == "mse" else np.abs(diff)
    return float(out) if out.ndim == 0 else out


def domain_weights(domains: np.ndarray) -> np.ndarray:
    """Per-pair weights 1 / (|Z present| * |pairs of that domain|)."""
    domains = np.asarray(domains)
    present, counts = np.unique(domains, return_counts=True)
    lookup = dict(zip(present.tolist(), counts.tolist()))
    return np.array([1.0 / (len(present) * lookup[z]) for z in domains.tolist()])


def sq_norm(params) -> Tensor:
    total = Tensor(0.0)
    for p in params:
        total = total + ad.sum(ad.square(p))
    return total


def propensity_bce(prop_logit: Tensor, observed, p_min: float) -> Tensor:
    """Mean BCE of p_hat = p_min + (1 - p_min) sigmoid(logit) against o."""
    o = np.asarray(observed, dtype=np.float64)
    log_p = ad.log(p_min + (1.0 - p_min) * ad.sigmoid(prop_logit))
    log_not_p = np.log1p(-p_min) - ad.softplus(prop_logit)
    return -ad.mean(log_p * o + log_not_p * (1.0 - o))


def loss_e(
    domains,
    e: Tensor,
    e_hat: Tensor,
    p_hat: Tensor,
    lambda1: float,
    reg_terms: tuple[tuple[float, list[Tensor]], ...] = (),
    propensity_term: Tensor | None = None,
    lambda_p: float = 0.0,
    normalize_imputation_term: bool = False,
) -> Tensor:
    """Observed-data hybrid loss.

    Per domain: mean error over observed pairs plus lambda1 * sum (e_hat - e)^2 / p_hat,
    averaged over the domains present, plus weighted squared norms and the
    propensity supervision term.
    """
    domains = np.asarray(domains)
    w = domain_weights(domains)
    n_dom = len(np.unique(domains))
    loss = ad.sum(e * w)
    if lambda1:
        iw = w if normalize_imputation_term else np.full(domains.shape, 1.0 / n_dom)
        loss = loss + lambda1 * ad.sum(ad.square(e_hat - e) / p_hat * iw)
    for lam, params in reg_terms:
        if lam:
            loss = loss + lam * sq_norm(params)
    if propensity_term is not None and lambda_p:
        loss = loss + lambda_p * propensity_term
    return loss


def loss_r(
    domains,
    e: Tensor,
    e_hat,
    p_hat,
    observed,
    lambda5: float = 0.0,
    theta: list[Tensor] = (),
    estimator: str = "dr",
) -> Tensor:
    """Full-space debiasing loss; e_hat and p_hat are treated as constants."""
    w = domain_weights(domains)
    e_hat = np.asarray(e_hat.data if isinstance(e_hat, Tensor) else e_hat, dtype=np.float64)
    p_hat = np.asarray(p_hat.data if isinstance(p_hat, Tensor) else p_hat, dtype=np.float64)
    o = np.asarray(observed, dtype=np.float64)
    if estimator == "dr":
        loss = ad.sum((e - e_hat) * (o * w / p_hat)) + float(np.sum(e_hat * w))
    elif estimator == "ips":
        loss = ad.sum(e * (o * w / p_hat))
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    if lambda5:
        loss = loss + lambda5 * sq_norm(theta)
    return loss


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------
def forward_pairs(model: AmidModel, pairs: PairBatch) -> tuple[dict[str, Tensor], Tensor]:
    rep, penalty = model.represent(pairs.context)
    out = model.heads(rep, pairs.rows, pairs.domains, pairs.items)
    return out, penalty


def compute_loss_e(model: AmidModel, pairs: PairBatch, side: PairBatch | None, cfg: TrainConfig) -> Tensor:
    out, penalty = forward_pairs(model, pairs)
    e = pointwise_error(out["r_hat"], pairs.ratings, cfg.error_metric)
    naive = cfg.objective == "naive"
    lam1 = 0.0 if naive or cfg.objective == "ips" else cfg.lambda1
    lam_p = 0.0 if naive else cfg.lambda_p
    prop_term = None
    if side is not None and lam_p:
        side_out, _ = forward_pairs(model, side)
        prop_term = propensity_bce(side_out["prop_logit"], side.observed, model.cfg.p_min)
    regs = [(cfg.lambda2, model.theta())]
    if not naive:
        regs += [(cfg.lambda3, model.phi()), (cfg.lambda4, model.psi())]
    loss = loss_e(pairs.domains, e, out["e_hat"], out["p_hat"], lam1, tuple(regs), prop_term, lam_p,
                  cfg.normalize_imputation_term)
    if model.cfg.use_mim and model.cfg.similarity_weight:
        loss = loss + model.cfg.similarity_weight * penalty
    return loss


def compute_loss_r(model: AmidModel, pairs: PairBatch, cfg: TrainConfig) -> Tensor:
    out, _ = forward_pairs(model, pairs)
    e = pointwise_error(out["r_hat"], pairs.ratings, cfg.error_metric)
    return loss_r(pairs.domains, e, out["e_hat"].data, out["p_hat"].data, pairs.observed,
                  cfg.lambda5, model.theta(), estimator=cfg.objective)


def _apply(loss: Tensor, params: list[Tensor], state: AdamState, phase: int, step: int) -> StepRecord:
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(phase, step)
    grads = ad.grad(loss, params)
    named = {p.name: p for p in params}
    adam_step(named, {p.name: g for p, g in grads.items()}, state)
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    return StepRecord(phase, step, value, norm)


def train_alternating(
    data: CdsrData, model: AmidModel, cfg: TrainConfig, seed: int
) -> tuple[AmidModel, TrainingHistory]:
    """Phase 1 fits theta/phi/psi on observed pairs, phase 2 debiases theta on the full space."""
    cfg.validate()
    history = TrainingHistory()
    rng = np.random.default_rng(seed)
    stream = make_batches(data, cfg.batch_size, cfg.negatives, seed)
    params1 = model.theta() + ([] if cfg.objective == "naive" else model.phi() + model.psi())
    state1 = AdamState(lr=cfg.lr_phase1)
    for q in range(1, cfg.Q + 1):
        pairs = pairs_from_batch(next(stream))
        side = None
        if cfg.objective != "naive" and cfg.lambda_p:
            side = sample_full_space(data, cfg.batch_size, cfg.unobserved_per_context, rng)
        rec = _apply(compute_loss_e(model, pairs, side, cfg), params1, state1, 1, q)
        history.records.append(rec)
        if q % 50 == 0:
            log.debug("phase 1 step %d loss %.5f", q, rec.loss)
    if cfg.objective == "naive":
        return model, history
    state2 = AdamState(lr=cfg.lr_phase2)
    theta = model.theta()
    for q in range(1, cfg.Q_prime + 1):
        pairs = sample_full_space(data, cfg.batch_size, cfg.unobserved_per_context, rng)
        rec = _apply(compute_loss_r(model, pairs, cfg), theta, state2, 2, q)
        history.records.append(rec)
    return model, history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def save_checkpoint(model: AmidModel, path: str | Path) -> None:
    """Text dump: a magic/version line, then ``name<TAB>shape<TAB>hex floats`` per tensor."""
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}"]
    for name, p in sorted(model.named_params().items()):
        shape = "x".join(str(s) for s in p.shape) or "scalar"
        lines.append(f"{name}\t{shape}\t" + " ".join(float(v).hex() for v in p.data.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(model: AmidModel, path: str | Path) -> AmidModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: not a v{CHECKPOINT_VERSION} checkpoint")
    params = model.named_params()
    for line in lines[1:]:
        name, shape, values = line.split("\t")
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        if name not in params or params[name].shape != dims:
            raise ValueError(f"{path}: parameter {name} with shape {dims} does not match the model")
        params[name].data[...] = np.array([float.fromhex(v) for v in values.split()]).reshape(dims)
    return model
