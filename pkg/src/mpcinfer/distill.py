"""Teacher training and the two-stage layer-wise distillation that turns
an exact-function teacher into an approximated student.

Stage 1 matches intermediate representations (embedding output, each
layer's post-softmax attention matrix, each layer's hidden state) with
MSE against the frozen teacher; stage 2 matches the prediction-layer
logits.  The student starts from the teacher's weights by default, which
is what lets aggressive approximations train at all.  Baselines train the
same architectures on the task objective without distillation.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .approx import ApproximationSpec
from .errors import TrainingError
from .nn import init_weights, toy_config
from .plaintext import PlainTransformer, evaluate


@dataclass
class DistillConfig:
    stage1_lr: float = 5.0e-4
    stage2_lr: float = 1.0e-4
    stage1_epochs: int = 20
    stage2_epochs: int = 5
    batch_size: int = 32
    init_mode: str = "teacher_weights"  # or "random"
    w_embedding: float = 1.0
    w_attention: float = 1.0
    w_hidden: float = 1.0
    w_logits: float = 1.0
    grad_limit: float = 1.0e4
    seed: int = 0


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start: start + batch_size]


def _guarded_step(opt: ad.Adam, loss, grad_limit: float, context: str):
    if not np.all(np.isfinite(loss.data)):
        raise TrainingError(f"{context}: loss went non-finite")
    ad.backward(loss)
    norm = opt.grad_norm()
    if norm > grad_limit:
        raise TrainingError(
            f"{context}: gradient explosion (norm {norm:.3g}), worst "
            f"parameter {opt.worst_parameter()}"
        )
    opt.step()
    opt.zero_grad()
    return float(loss.data)


def train_task(model: PlainTransformer, xs, ys, epochs: int, lr: float,
               batch_size: int = 32, seed: int = 0,
               grad_limit: float = 1.0e4) -> list:
    """Cross-entropy training on the classification task; returns the
    per-epoch mean loss history."""
    xs, ys = np.asarray(xs), np.asarray(ys)
    opt = ad.Adam(model.params, lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        losses = []
        for idx in _epoch_batches(len(xs), batch_size, rng):
            logits = model.forward(xs[idx])
            loss = ad.cross_entropy(logits, ys[idx])
            losses.append(_guarded_step(opt, loss, grad_limit,
                                        f"task epoch {epoch}"))
        history.append(float(np.mean(losses)))
    return history


def train_teacher(dataset: dict, epochs: int = 40, lr: float = 1.0e-3,
                  batch_size: int = 32, seed: int = 0) -> tuple:
    """Train the exact-function teacher to convergence on the toy task."""
    cfg = toy_config(ApproximationSpec("exact", "exact"))
    model = PlainTransformer.new(cfg, seed=seed)
    history = train_task(model, dataset["train_x"], dataset["train_y"],
                         epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
    return model, history


def init_student(teacher: PlainTransformer, approx: ApproximationSpec,
                 mode: str = "teacher_weights", seed: int = 0) -> PlainTransformer:
    """Same architecture, substituted functions; weights copied from the
    teacher or drawn fresh for the random-init ablation."""
    cfg = replace(teacher.config, approx=approx)
    if mode == "teacher_weights":
        return PlainTransformer.from_arrays(cfg, teacher.arrays())
    if mode == "random":
        return PlainTransformer.from_arrays(cfg, init_weights(cfg, seed))
    raise TrainingError(f"unknown student init mode {mode!r}")


def stage1_loss(teacher: PlainTransformer, student: PlainTransformer,
                batch_x, cfg: DistillConfig):
    """MSE over the embedding, attention-matrix and hidden-state taps."""
    _, t_taps = teacher.frozen().forward_with_taps(batch_x)
    _, s_taps = student.forward_with_taps(batch_x)
    loss = ad.mul(ad.mse(s_taps.embedding, t_taps.embedding.detach()), cfg.w_embedding)
    for t_attn, s_attn in zip(t_taps.attentions, s_taps.attentions):
        loss = ad.add(loss, ad.mul(ad.mse(s_attn, t_attn.detach()), cfg.w_attention))
    for t_hid, s_hid in zip(t_taps.hidden, s_taps.hidden):
        loss = ad.add(loss, ad.mul(ad.mse(s_hid, t_hid.detach()), cfg.w_hidden))
    return loss


def distill_stage1(teacher: PlainTransformer, student: PlainTransformer,
                   dataset: dict, cfg: DistillConfig) -> list:
    """Distill the embedding and transformer layers; teacher stays frozen."""
    xs = np.asarray(dataset["train_x"])
    opt = ad.Adam(student.params, lr=cfg.stage1_lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.stage1_epochs):
        losses = []
        for idx in _epoch_batches(len(xs), cfg.batch_size, rng):
            loss = stage1_loss(teacher, student, xs[idx], cfg)
            losses.append(_guarded_step(opt, loss, cfg.grad_limit,
                                        f"stage1 epoch {epoch}"))
        history.append(float(np.mean(losses)))
    return history


def distill_stage2(teacher: PlainTransformer, student: PlainTransformer,
                   dataset: dict, cfg: DistillConfig) -> list:
    """Distill the prediction layer: MSE between student and teacher logits."""
    xs = np.asarray(dataset["train_x"])
    opt = ad.Adam(student.params, lr=cfg.stage2_lr)
    rng = np.random.default_rng(cfg.seed + 1)
    frozen_teacher = teacher.frozen()
    history = []
    for epoch in range(cfg.stage2_epochs):
        losses = []
        for idx in _epoch_batches(len(xs), cfg.batch_size, rng):
            t_logits = frozen_teacher.forward(xs[idx]).detach()
            s_logits = student.forward(xs[idx])
            loss = ad.mul(ad.mse(s_logits, t_logits), cfg.w_logits)
            losses.append(_guarded_step(opt, loss, cfg.grad_limit,
                                        f"stage2 epoch {epoch}"))
        history.append(float(np.mean(losses)))
    return history


def distill(teacher: PlainTransformer, approx: ApproximationSpec, dataset: dict,
            cfg: DistillConfig) -> tuple:
    """Full conversion: init from teacher, stage 1, then stage 2."""
    student = init_student(teacher, approx, cfg.init_mode, cfg.seed)
    h1 = distill_stage1(teacher, student, dataset, cfg)
    h2 = distill_stage2(teacher, student, dataset, cfg)
    return student, {"stage1": h1, "stage2": h2}


def train_baseline(teacher: PlainTransformer, approx: ApproximationSpec,
                   dataset: dict, init_mode: str, epochs: int, lr: float,
                   batch_size: int = 32, seed: int = 0) -> PlainTransformer:
    """Task-objective training of the approximated architecture, without
    distillation: init_mode teacher_weights is the no-distill baseline,
    random drops the pretrained weights as well."""
    student = init_student(teacher, approx, init_mode, seed)
    if epochs > 0:
        train_task(student, dataset["train_x"], dataset["train_y"],
                   epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
    return student


@dataclass
class AblationRow:
    method: str
    approx: str
    train_accuracy: float
    test_accuracy: float


def downstream_subset(dataset: dict, n: int) -> dict:
    """The conversion pipeline sees only a small downstream slice; the
    teacher's full training set stands in for pretraining resources.
    Distillation is data-efficient enough to work from the slice, task
    training from scratch is not, which is the whole point."""
    down = dict(dataset)
    down["train_x"] = np.asarray(dataset["train_x"])[:n]
    down["train_y"] = np.asarray(dataset["train_y"])[:n]
    return down


def run_ablation(dataset: dict, approx: ApproximationSpec, seeds=(0, 1, 2),
                 teacher_epochs: int = 12, teacher_lr: float = 1.0e-3,
                 baseline_epochs: int = 50, baseline_lr: float = 5.0e-4,
                 n_downstream: int = 150,
                 cfg: DistillConfig | None = None) -> dict:
    """Teacher / distilled / no-distill / no-init-no-distill comparison,
    averaged over seeds."""
    cfg = cfg or DistillConfig(stage1_epochs=40, stage2_epochs=10)
    down = downstream_subset(dataset, n_downstream)
    accum = {"teacher": [], "distilled": [], "no_distill": [], "no_init_no_distill": []}
    train_accum = {k: [] for k in accum}
    tr_x, tr_y = dataset["train_x"], dataset["train_y"]
    te_x, te_y = dataset["test_x"], dataset["test_y"]
    for seed in seeds:
        teacher, _ = train_teacher(dataset, epochs=teacher_epochs, lr=teacher_lr,
                                   batch_size=cfg.batch_size, seed=seed)
        student, _ = distill(teacher, approx, down, replace(cfg, seed=seed))
        wo_d = train_baseline(teacher, approx, down, "teacher_weights",
                              baseline_epochs, baseline_lr, cfg.batch_size, seed)
        wo_pd = train_baseline(teacher, approx, down, "random",
                               baseline_epochs, baseline_lr, cfg.batch_size, seed)
        for key, model in (("teacher", teacher), ("distilled", student),
                           ("no_distill", wo_d), ("no_init_no_distill", wo_pd)):
            train_accum[key].append(evaluate(model, tr_x, tr_y))
            accum[key].append(evaluate(model, te_x, te_y))
    rows = []
    labels = {
        "teacher": ("teacher", "exact+exact"),
        "distilled": ("distilled", approx.label()),
        "no_distill": ("no_distill", approx.label()),
        "no_init_no_distill": ("no_init_no_distill", approx.label()),
    }
    for key, (method, label) in labels.items():
        rows.append(AblationRow(method, label,
                                float(np.mean(train_accum[key])),
                                float(np.mean(accum[key]))))
    return {
        "rows": rows,
        "per_seed_test": {k: list(map(float, v)) for k, v in accum.items()},
        "per_seed_train": {k: list(map(float, v)) for k, v in train_accum.items()},
        "seeds": list(seeds),
    }
