"""Training loops for the feature-alignment backbone and the action agent.

Both trainers share a backbone phase built around a one-step alignment
surrogate: for a pose-perturbed copy of the aligned source, a good feature
space lets one least-squares solve against the template's pose Jacobian
recover the perturbation. The loss drives that solve toward the exact
answer, with auxiliary terms that (a) pull features of truly aligned clouds
together while keeping perturbed ones apart, and (b) feed an optional
classifier or decoder head so features stay descriptive.

Phases: a float phase trains weights and per-channel affines; activation
and weight scales are then calibrated from data, the affines freeze, and a
quantized fine-tuning phase trains the lookup-table entries (and the linear
weights) through the fake-quantization straight-through estimator.

The agent trainer reuses the backbone phase, then collects expert rollouts
(the greedy ladder policy on the true pose, teacher-forced) and fits the two
policy heads by cross entropy, again float first and quantized after.

Nothing is written to disk until every phase has finished; a run that turns
non-finite anywhere raises TrainingDiverged instead of producing a file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import se3
from .config import TrainConfig
from .data import Pair, make_dataset, stack_clouds
from .expert import NOOP_LABEL, apply_action, expert_labels, step_ladder
from .export import write_backbone, write_bundle
from .nets import (
    FEATURE_DIM,
    Actor,
    Adam,
    Backbone,
    MlpHead,
    chamfer_with_grad,
    softmax_cross_entropy,
)
from .quant_sim import ActQuant, QuantPair, WgtQuant

_TRAIN_DTYPE = np.float32
_MIN_SCALE = 1e-3
_CALIBRATION_CLOUDS = 128


class TrainingDiverged(RuntimeError):
    """A training run produced non-finite losses or parameters."""


@dataclass(frozen=True)
class EpochStats:
    """One epoch's mean losses, tagged by phase ('float'/'qat'/...)."""

    phase: str
    epoch: int
    loss: float
    parts: dict[str, float]


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _check_finite(value: float, what: str) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite")


def _check_params_finite(params: dict[str, np.ndarray], what: str) -> None:
    for name, array in params.items():
        if not np.isfinite(array).all():
            raise TrainingDiverged(f"{what} parameter {name!r} became non-finite")


def _normalize_cloud(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    return centered / max(radius, 1e-12)


def _draw_twists(rng: np.random.Generator, count: int,
                 cfg: TrainConfig) -> np.ndarray:
    omega = rng.uniform(-cfg.perturb_rot, cfg.perturb_rot, (count, 3))
    rho = rng.uniform(-cfg.perturb_trans, cfg.perturb_trans, (count, 3))
    return np.concatenate([omega, rho], axis=1)


def _perturb_clouds(clouds: np.ndarray, twists: np.ndarray) -> np.ndarray:
    out = np.empty_like(clouds)
    for i in range(clouds.shape[0]):
        rot, trans = se3.exp_se3(twists[i])
        out[i] = se3.transform(clouds[i], rot, trans)
    return out


def _pose_jacobians(backbone: Backbone, templates: np.ndarray,
                    fd_step: float) -> np.ndarray:
    """Pseudo-inverses of the pose Jacobians, one (6, 1024) block per cloud.

    Column j of the Jacobian is the central difference of the feature map
    under the one-parameter family exp(-s e_j) applied to the template, the
    same construction the deployed solver uses; gradients never flow through
    it (it enters the loss as a constant).
    """
    b, n, _ = templates.shape
    stack = np.empty((b, 6, 2, n, 3), dtype=templates.dtype)
    basis = np.eye(6)
    for j in range(6):
        rot_neg, t_neg = se3.exp_se3(-fd_step * basis[j])
        rot_pos, t_pos = se3.exp_se3(fd_step * basis[j])
        for i in range(b):
            stack[i, j, 0] = se3.transform(templates[i], rot_neg, t_neg)
            stack[i, j, 1] = se3.transform(templates[i], rot_pos, t_pos)
    feats = backbone.features(stack.reshape(b * 12, n, 3))
    feats = feats.reshape(b, 6, 2, FEATURE_DIM).astype(np.float64)
    jac = (feats[:, :, 0] - feats[:, :, 1]) / (2.0 * fd_step)
    if not np.isfinite(jac).all():
        raise TrainingDiverged("feature Jacobian is not finite")
    try:
        return np.stack([np.linalg.pinv(jac[i].T) for i in range(b)])
    except np.linalg.LinAlgError as exc:
        raise TrainingDiverged(f"feature Jacobian inversion failed: {exc}")


# ---------------------------------------------------------------------------
# Backbone phase
# ---------------------------------------------------------------------------


@dataclass
class _Prepared:
    """Dataset tensors shared across epochs."""

    pairs: list[Pair]
    aligned: np.ndarray       # (S, N, 3) sources moved by the ground truth
    templates: np.ndarray     # (S, N, 3)
    labels: np.ndarray        # (S,) shape-class labels
    decoder_targets: np.ndarray | None  # (S, N, 3) normalized templates


def _prepare(cfg: TrainConfig) -> _Prepared:
    pairs = make_dataset(
        shapes=cfg.shapes, samples=cfg.samples, n_points=cfg.points,
        theta_max_deg=cfg.theta_max_deg, t_max=cfg.t_max,
        jitter_std=cfg.jitter_std, jitter_clip=cfg.jitter_clip, seed=cfg.seed,
    )
    aligned = stack_clouds(pairs, "aligned").astype(_TRAIN_DTYPE)
    templates = stack_clouds(pairs, "template").astype(_TRAIN_DTYPE)
    labels = np.array([p.label for p in pairs], dtype=np.intp)
    targets = None
    if cfg.head == "decoder":
        targets = np.stack([_normalize_cloud(t) for t in templates])
        targets = targets.astype(_TRAIN_DTYPE)
    return _Prepared(pairs, aligned, templates, labels, targets)


def _make_head(cfg: TrainConfig, rng: np.random.Generator) -> MlpHead | None:
    if cfg.head == "classifier":
        return MlpHead(rng, out_dim=len(cfg.shapes), tanh_out=False,
                       dtype=_TRAIN_DTYPE)
    if cfg.head == "decoder":
        return MlpHead(rng, out_dim=3 * cfg.points, tanh_out=True,
                       dtype=_TRAIN_DTYPE)
    return None


def _head_loss(head: MlpHead, cfg: TrainConfig, feats: np.ndarray,
               idx: np.ndarray, prep: _Prepared):
    """Auxiliary-head loss on template features: (loss, dfeats, grads)."""
    out, cache = head.forward(feats)
    if cfg.head == "classifier":
        loss, dout = softmax_cross_entropy(out, prep.labels[idx])
    else:
        decoded = out.reshape(-1, cfg.points, 3)
        loss, ddecoded = chamfer_with_grad(decoded, prep.decoder_targets[idx])
        dout = ddecoded.reshape(out.shape)
    grads, dfeats = head.backward(cfg.lambda_head * dout, cache)
    return loss, dfeats, grads


def _backbone_batch(backbone: Backbone, head: MlpHead | None,
                    cfg: TrainConfig, prep: _Prepared, idx: np.ndarray,
                    twists: np.ndarray):
    """One optimization step's losses and gradients for a pair batch."""
    b = len(idx)
    perturbed = _perturb_clouds(prep.aligned[idx], twists)
    jdag = _pose_jacobians(backbone, prep.templates[idx], cfg.fd_step)

    stack = np.concatenate([perturbed, prep.templates[idx], prep.aligned[idx]])
    feats, cache = backbone.forward(stack)
    f_pert, f_tmpl, f_align = feats[:b], feats[b:2 * b], feats[2 * b:]
    dfeats = np.zeros_like(feats)

    # Pose surrogate: the least-squares solve on the perturbed/template
    # feature difference should report exactly the inverse perturbation.
    diff_pt = (f_pert - f_tmpl).astype(np.float64)
    solved = np.einsum("bij,bj->bi", jdag, diff_pt)
    err = solved + twists
    loss_pose = float(np.mean(np.sum(err * err, axis=1)))
    dpose = (2.0 / b) * np.einsum("bij,bi->bj", jdag, err)
    dpose = (cfg.lambda_pose * dpose).astype(feats.dtype)
    dfeats[:b] += dpose
    dfeats[b:2 * b] -= dpose

    # Alignment pull: aligned-source features match template features.
    diff_at = f_align - f_tmpl
    denom = b * FEATURE_DIM
    loss_align = float(np.sum(diff_at.astype(np.float64) ** 2)) / denom
    dalign = (cfg.lambda_feat * 2.0 / denom) * diff_at
    dfeats[2 * b:] += dalign
    dfeats[b:2 * b] -= dalign

    # Separation hinge: perturbed features must stay away from the template,
    # or the pose term could be satisfied by collapsing every feature.
    sq_pt = np.sum(diff_pt * diff_pt, axis=1) / FEATURE_DIM
    active = sq_pt < 1.0
    loss_sep = float(np.sum(1.0 - sq_pt[active])) / b
    dsep = np.zeros_like(dfeats[:b])
    dsep[active] = -(cfg.lambda_feat * 2.0 / denom) * diff_pt[active].astype(feats.dtype)
    dfeats[:b] += dsep
    dfeats[b:2 * b] -= dsep

    loss_head = 0.0
    head_grads = None
    if head is not None:
        loss_head, df_head, head_grads = _head_loss(head, cfg, f_tmpl, idx, prep)
        dfeats[b:2 * b] += df_head

    total = (cfg.lambda_pose * loss_pose
             + cfg.lambda_feat * (loss_align + loss_sep)
             + cfg.lambda_head * loss_head)
    _check_finite(total, "backbone loss")

    grads = backbone.backward(dfeats, cache)
    parts = {"pose": loss_pose, "align": loss_align, "sep": loss_sep,
             "head": loss_head}
    return total, parts, grads, head_grads


def _split_table_grads(grads: dict[str, np.ndarray]):
    table = {k: grads.pop(k) for k in [k for k in grads if k.startswith("q")]}
    return grads, table


def _run_backbone_epochs(backbone: Backbone, head: MlpHead | None,
                         cfg: TrainConfig, prep: _Prepared,
                         rng: np.random.Generator, phase: str, epochs: int,
                         lr0: float, decay: float,
                         history: list[EpochStats]) -> None:
    opt_net = Adam()
    opt_tables = Adam()
    opt_head = Adam()
    count = len(prep.pairs)
    for epoch in range(epochs):
        lr = lr0 * decay ** epoch
        order = rng.permutation(count)
        sums: dict[str, float] = {}
        total_sum = 0.0
        batches = 0
        for start in range(0, count, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            twists = _draw_twists(rng, len(idx), cfg)
            total, parts, grads, head_grads = _backbone_batch(
                backbone, head, cfg, prep, idx, twists)
            net_grads, table_grads = _split_table_grads(grads)
            opt_net.step(backbone.params, net_grads, lr)
            if table_grads:
                tables = backbone.table_params()
                opt_tables.step(tables, table_grads, lr)
                backbone.set_table_params(tables)
                backbone.project_tables()
            if head is not None and head_grads is not None:
                opt_head.step(head.params, head_grads, lr)
            total_sum += total
            for key, value in parts.items():
                sums[key] = sums.get(key, 0.0) + value
            batches += 1
        _check_params_finite(backbone.params, "backbone")
        stats = EpochStats(
            phase=phase, epoch=epoch, loss=total_sum / batches,
            parts={k: v / batches for k, v in sums.items()},
        )
        history.append(stats)
        if cfg.verbose:
            detail = " ".join(f"{k}={v:.5f}" for k, v in stats.parts.items())
            print(f"[{phase}] epoch {epoch + 1}/{epochs} "
                  f"loss={stats.loss:.5f} {detail}", flush=True)


def _calibrate_backbone(backbone: Backbone, cfg: TrainConfig,
                        prep: _Prepared) -> None:
    """Freeze affines and attach quantizers with data-calibrated scales."""
    calib = prep.templates[:_CALIBRATION_CLOUDS]
    max1, max2 = backbone.stage_activations(calib)
    s_a2 = max(max1, _MIN_SCALE)
    s_a3 = max(max2, _MIN_SCALE)
    s_w2 = max(float(np.abs(backbone.params["w2"]).max()), _MIN_SCALE)
    s_w3 = max(float(np.abs(backbone.params["w3"]).max()), _MIN_SCALE)
    backbone.quant2 = QuantPair(
        ActQuant(cfg.bits, s_a2, dtype=_TRAIN_DTYPE),
        WgtQuant(cfg.bits, s_w2, dtype=_TRAIN_DTYPE),
    )
    backbone.quant3 = QuantPair(
        ActQuant(cfg.bits, s_a3, dtype=_TRAIN_DTYPE),
        WgtQuant(cfg.bits, s_w3, dtype=_TRAIN_DTYPE),
    )
    backbone.freeze_affine = True


def _train_backbone(cfg: TrainConfig) -> tuple[Backbone, _Prepared,
                                               list[EpochStats]]:
    prep = _prepare(cfg)
    net_rng = np.random.default_rng([cfg.seed, 1])
    batch_rng = np.random.default_rng([cfg.seed, 2])
    backbone = Backbone(net_rng, dtype=_TRAIN_DTYPE)
    head = _make_head(cfg, net_rng)
    history: list[EpochStats] = []
    _run_backbone_epochs(backbone, head, cfg, prep, batch_rng, "float",
                         cfg.epochs, cfg.lr, cfg.lr_decay, history)
    _calibrate_backbone(backbone, cfg, prep)
    _run_backbone_epochs(backbone, head, cfg, prep, batch_rng, "qat",
                         cfg.qat_epochs, cfg.qat_lr, 1.0, history)
    return backbone, prep, history


# ---------------------------------------------------------------------------
# Built-in evaluation (iterative feature alignment with the trained net)
# ---------------------------------------------------------------------------


def lk_register(backbone: Backbone, source: np.ndarray, template: np.ndarray,
                iters: int = 10, fd_step: float = 0.01):
    """Iterative least-squares alignment using the backbone's features.

    Mirrors the deployed solver's structure (fixed template Jacobian,
    left-composed exponential updates) for quick in-package quality checks.
    Returns the estimated (rotation, translation).
    """
    src = np.asarray(source, dtype=_TRAIN_DTYPE)
    tmpl = np.asarray(template, dtype=_TRAIN_DTYPE)
    jdag = _pose_jacobians(backbone, tmpl[None], fd_step)[0]
    feat_t = backbone.features(tmpl[None])[0].astype(np.float64)
    rot = np.eye(3)
    trans = np.zeros(3)
    for _ in range(iters):
        moved = se3.transform(src, rot, trans).astype(_TRAIN_DTYPE)
        feat_m = backbone.features(moved[None])[0].astype(np.float64)
        delta = jdag @ (feat_m - feat_t)
        if not np.isfinite(delta).all():
            break
        d_rot, d_trans = se3.exp_se3(delta)
        rot, trans = d_rot @ rot, d_rot @ trans + d_trans
    return rot, trans


def mean_rotation_error(backbone: Backbone, pairs: list[Pair],
                        iters: int = 10) -> float:
    """Mean rotation error (degrees) of lk_register over a pair list."""
    errors = [
        se3.rotation_angle_deg(lk_register(backbone, p.source, p.template,
                                           iters=iters)[0], p.R_star)
        for p in pairs
    ]
    return float(np.mean(errors))


# ---------------------------------------------------------------------------
# Agent rollouts and actor training
# ---------------------------------------------------------------------------


def _rollout_poses(pair: Pair, steps: int):
    """Teacher-forced expert trajectory for one pair.

    The expert depends only on poses, so the pose sequence is computed
    first and features are extracted afterwards in one batch. The state is
    parameterized the way the deployed agent composes it: rotations pivot
    on the source centroid and translations accumulate separately, so the
    ground truth is re-expressed in that convention before comparison.
    Recording stops after the first all-no-op step (the pose is frozen from
    there on, so later states would be exact duplicates).
    """
    ladder = step_ladder()
    mu = pair.source.mean(axis=0)
    t_target = pair.t_star - mu + pair.R_star @ mu
    rot = np.eye(3)
    trans = np.zeros(3)
    poses = []
    trans_labels = []
    rot_labels = []
    for _ in range(steps):
        lab_t, lab_r = expert_labels(rot, trans, pair.R_star, t_target, ladder)
        poses.append((rot, trans))
        trans_labels.append(lab_t)
        rot_labels.append(lab_r)
        if (lab_t == NOOP_LABEL).all() and (lab_r == NOOP_LABEL).all():
            break
        rot, trans = apply_action(rot, trans, lab_t, lab_r, ladder)
    return mu, poses, trans_labels, rot_labels


def _collect_states(backbone: Backbone, pairs: list[Pair], cfg: TrainConfig):
    """Expert-rollout states and labels for actor training.

    Features come from the hardened (integer-valued-table) backbone so the
    actors see the same state distribution the deployed pipeline produces.
    """
    clouds = []
    trans_labels = []
    rot_labels = []
    owners = []
    for k, pair in enumerate(pairs):
        mu, poses, labs_t, labs_r = _rollout_poses(pair, cfg.rollout_steps)
        for (rot, trans), lab_t, lab_r in zip(poses, labs_t, labs_r):
            clouds.append(se3.transform(pair.source, rot, trans, pivot=mu))
            trans_labels.append(lab_t)
            rot_labels.append(lab_r)
            owners.append(k)
    moved = np.asarray(np.stack(clouds), dtype=_TRAIN_DTYPE)
    templates = stack_clouds(pairs, "template").astype(_TRAIN_DTYPE)
    feat_moved = backbone.features(moved)
    feat_tmpl = backbone.features(templates)
    states = np.concatenate([feat_moved, feat_tmpl[np.asarray(owners)]], axis=1)
    return (states.astype(_TRAIN_DTYPE),
            np.asarray(trans_labels, dtype=np.intp),
            np.asarray(rot_labels, dtype=np.intp))


def _run_actor_epochs(actor: Actor, states: np.ndarray, labels: np.ndarray,
                      cfg: TrainConfig, rng: np.random.Generator, phase: str,
                      epochs: int, lr0: float, decay: float,
                      history: list[EpochStats], tag: str) -> None:
    opt_net = Adam()
    opt_tables = Adam()
    count = states.shape[0]
    for epoch in range(epochs):
        lr = lr0 * decay ** epoch
        order = rng.permutation(count)
        loss_sum = 0.0
        batches = 0
        for start in range(0, count, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = actor.forward(states[idx])
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            _check_finite(loss, f"{tag} actor loss")
            grads = actor.backward(dlogits, cache)
            net_grads, table_grads = _split_table_grads(grads)
            opt_net.step(actor.params, net_grads, lr)
            if table_grads:
                tables = actor.table_params()
                opt_tables.step(tables, table_grads, lr)
                actor.set_table_params(tables)
                actor.project_tables()
            loss_sum += loss
            batches += 1
        _check_params_finite(actor.params, f"{tag} actor")
        stats = EpochStats(phase=f"{tag}-{phase}", epoch=epoch,
                           loss=loss_sum / batches, parts={})
        history.append(stats)
        if cfg.verbose:
            print(f"[{tag}-{phase}] epoch {epoch + 1}/{epochs} "
                  f"loss={stats.loss:.5f}", flush=True)


def _calibrate_actor(actor: Actor, states: np.ndarray, cfg: TrainConfig) -> None:
    s_a1 = max(float(states.max(initial=0.0)), _MIN_SCALE)
    s_a2 = max(actor.hidden_max(states), _MIN_SCALE)
    s_w1 = max(float(np.abs(actor.params["w1"]).max()), _MIN_SCALE)
    s_w2 = max(float(np.abs(actor.params["w2"]).max()), _MIN_SCALE)
    actor.quant1 = QuantPair(ActQuant(cfg.bits, s_a1, dtype=_TRAIN_DTYPE),
                             WgtQuant(cfg.bits, s_w1, dtype=_TRAIN_DTYPE))
    actor.quant2 = QuantPair(ActQuant(cfg.bits, s_a2, dtype=_TRAIN_DTYPE),
                             WgtQuant(cfg.bits, s_w2, dtype=_TRAIN_DTYPE))


def _train_actor(states: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                 rng: np.random.Generator, history: list[EpochStats],
                 tag: str) -> Actor:
    actor = Actor(rng, dtype=_TRAIN_DTYPE)
    _run_actor_epochs(actor, states, labels, cfg, rng, "float", cfg.epochs,
                      cfg.lr, cfg.lr_decay, history, tag)
    _calibrate_actor(actor, states, cfg)
    _run_actor_epochs(actor, states, labels, cfg, rng, "qat", cfg.qat_epochs,
                      cfg.qat_lr, 1.0, history, tag)
    return actor


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def run_pointlk(cfg: TrainConfig):
    """Train the alignment backbone; returns (backbone, history)."""
    backbone, _, history = _train_backbone(cfg)
    return backbone, history


def train_pointlk(cfg: TrainConfig, out_path) -> Path:
    """Train the alignment backbone and write its weight file.

    The file appears only after every phase has finished; a diverging run
    raises TrainingDiverged and writes nothing.
    """
    backbone, history = run_pointlk(cfg)
    del history
    return write_backbone(out_path, backbone)


def run_reagent(cfg: TrainConfig):
    """Train backbone plus both policy heads; returns them with history."""
    backbone, prep, history = _train_backbone(cfg)
    for pair_quant in (backbone.quant2, backbone.quant3):
        pair_quant.harden()
    states, trans_labels, rot_labels = _collect_states(backbone, prep.pairs, cfg)
    actor_rng = np.random.default_rng([cfg.seed, 3])
    actor_trans = _train_actor(states, trans_labels, cfg, actor_rng, history,
                               "trans")
    actor_rot = _train_actor(states, rot_labels, cfg, actor_rng, history,
                             "rot")
    return backbone, actor_trans, actor_rot, history


def train_reagent(cfg: TrainConfig, out_path) -> Path:
    """Train the agent stack and write the bundled weight file."""
    backbone, actor_trans, actor_rot, _ = run_reagent(cfg)
    return write_bundle(out_path, backbone, actor_trans, actor_rot)
