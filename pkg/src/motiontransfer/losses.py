"""Training objectives: adversarial, feature-matching, perceptual, pose/parsing.

The adversarial objective is a relativistic average least-squares GAN: the
discriminator scores each sample relative to the mean score of the opposite
class over the same batch, with a gradient penalty pushing the input-gradient
norm toward 1 at real/fake interpolates.  Plain least-squares terms are kept
as the ablation reference.  With multi-scale discriminators every loss is
computed per scale and averaged.

Discriminator convention: D(img, cond) returns a list (one per scale) of
per-layer feature lists whose last element is the patch-score map.  Plain
callables returning a tensor or a flat list are normalized transparently.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch


@dataclass
class LossWeights:
    w_rela: float = 1.0
    w_fm: float = 10.0
    w_vgg: float = 10.0
    w_sp: float = 10.0
    w_gp: float = 10.0
    w_s: float = 0.01

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


def _scale_feature_lists(out) -> list[list[torch.Tensor]]:
    """Normalize discriminator output to [scale][layer] tensor lists."""
    if isinstance(out, torch.Tensor):
        return [[out]]
    if isinstance(out, (list, tuple)):
        if all(isinstance(o, torch.Tensor) for o in out):
            return [list(out)]
        return [list(scale) for scale in out]
    raise TypeError(f"unsupported discriminator output type {type(out)!r}")


def run_discriminator(d, img, cond) -> list[list[torch.Tensor]]:
    """Evaluate D once and normalize its output to [scale][layer] lists."""
    if img.shape[0] == 0:
        raise ValueError("empty batch")
    return _scale_feature_lists(d(img, cond))


def patch_scores(feats: list[list[torch.Tensor]]) -> list[torch.Tensor]:
    return [scale[-1] for scale in feats]


def _patch_scores(d, img, cond) -> list[torch.Tensor]:
    return patch_scores(run_discriminator(d, img, cond))


def lsgan_d_loss(d, y, x, p) -> torch.Tensor:
    """Least-squares discriminator loss: 1/2 E[(D(y,p)-1)^2] + 1/2 E[D(x,p)^2]."""
    real = _patch_scores(d, y, p)
    fake = _patch_scores(d, x, p)
    per_scale = [0.5 * ((r - 1.0) ** 2).mean() + 0.5 * (f**2).mean() for r, f in zip(real, fake)]
    return torch.stack(per_scale).mean()


def lsgan_g_loss(d, x, p) -> torch.Tensor:
    """Least-squares generator loss: 1/2 E[(D(x,p)-1)^2]."""
    fake = _patch_scores(d, x, p)
    return torch.stack([0.5 * ((f - 1.0) ** 2).mean() for f in fake]).mean()


def _check_same_batch(y, x):
    if y.shape[0] != x.shape[0]:
        raise ValueError(f"real batch {y.shape[0]} vs fake batch {x.shape[0]}")


def rela_d_terms(real: list[torch.Tensor], fake: list[torch.Tensor]) -> torch.Tensor:
    per_scale = [
        0.5 * ((r - f.mean() - 1.0) ** 2).mean() + 0.5 * ((f - r.mean()) ** 2).mean()
        for r, f in zip(real, fake)
    ]
    return torch.stack(per_scale).mean()


def rela_g_terms(real: list[torch.Tensor], fake: list[torch.Tensor]) -> torch.Tensor:
    per_scale = [
        0.5 * ((f - r.mean() - 1.0) ** 2).mean() + 0.5 * ((r - f.mean()) ** 2).mean()
        for r, f in zip(real, fake)
    ]
    return torch.stack(per_scale).mean()


def rela_d_loss(d, y, x, p) -> torch.Tensor:
    """Relativistic average LS discriminator terms (gradient penalty excluded).

    1/2 E[(D(y,p) - mu(D(x,p)) - 1)^2] + 1/2 E[(D(x,p) - mu(D(y,p)))^2],
    with mu the mean over the batch's patch scores at the same scale.
    """
    _check_same_batch(y, x)
    return rela_d_terms(_patch_scores(d, y, p), _patch_scores(d, x, p))


def rela_g_loss(d, y, x, p) -> torch.Tensor:
    """Relativistic average LS generator terms.

    1/2 E[(D(x,p) - mu(D(y,p)) - 1)^2] + 1/2 E[(D(y,p) - mu(D(x,p)))^2].
    """
    _check_same_batch(y, x)
    return rela_g_terms(_patch_scores(d, y, p), _patch_scores(d, x, p))


def gradient_penalty(
    d,
    y: torch.Tensor,
    x: torch.Tensor,
    p: torch.Tensor,
    eps: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Unweighted penalty E[(||grad D(x_hat, p)||_2 - 1)^2].

    x_hat = eps*y + (1-eps)*x with per-sample eps ~ U(0,1); the condition is
    passed through unmodified and the inner gradient is taken w.r.t. x_hat
    only.  The caller applies the w_gp weight (and detaches x when the
    penalty should not reach the generator, as the discriminator step does).
    """
    _check_same_batch(y, x)
    b = x.shape[0]
    if eps is None:
        eps = torch.rand((b,) + (1,) * (x.dim() - 1), dtype=x.dtype, generator=generator)
    x_hat = eps * y + (1.0 - eps) * x
    if not x_hat.requires_grad:
        x_hat.requires_grad_(True)
    scores = _patch_scores(d, x_hat, p)
    penalties = []
    for s in scores:
        grads = torch.autograd.grad(
            outputs=s.sum(),
            inputs=x_hat,
            create_graph=True,
            retain_graph=True,
            allow_unused=True,
        )[0]
        if grads is None:
            grads = torch.zeros_like(x_hat)
        norms = grads.reshape(b, -1).norm(2, dim=1)
        penalties.append(((norms - 1.0) ** 2).mean())
    return torch.stack(penalties).mean()


def _layer_l1(real_feats: list[torch.Tensor], fake_feats: list[torch.Tensor], detach_real: bool) -> torch.Tensor:
    total = None
    for fr, ff in zip(real_feats, fake_feats):
        if detach_real:
            fr = fr.detach()
        term = (fr - ff).abs().mean()  # mean == (1/N_i) * ||.||_1 averaged over batch
        total = term if total is None else total + term
    return total


def feature_matching_terms(
    real: list[list[torch.Tensor]], fake: list[list[torch.Tensor]]
) -> torch.Tensor:
    per_scale = [_layer_l1(r, f, detach_real=True) for r, f in zip(real, fake)]
    return torch.stack(per_scale).mean()


def feature_matching_loss(d, y, x, p) -> torch.Tensor:
    """Per-layer L1 between discriminator features of real and fake frames.

    sum_i (1/N_i) ||D_i(y,p) - D_i(x,p)||_1, averaged over scales; real
    features are constants (no gradient through the real branch).
    """
    if y.shape[0] == 0 or x.shape[0] == 0:
        raise ValueError("empty batch")
    return feature_matching_terms(run_discriminator(d, y, p), run_discriminator(d, x, p))


def perceptual_loss(phi, y, x) -> torch.Tensor:
    """sum_i (1/N_i) ||phi_i(y) - phi_i(x)||_1 over the extractor's layers."""
    fy = phi(y)
    fx = phi(x)
    if isinstance(fy, torch.Tensor):
        fy, fx = [fy], [fx]
    return _layer_l1(list(fy), list(fx), detach_real=True)


def semantic_pose_loss(phi_p, phi_s, y, x, w_s: float = 0.01) -> torch.Tensor:
    """Pose-feature L1 plus w_s-weighted parsing-feature L1.

    Per-element normalization follows the feature-matching convention.
    """
    loss = perceptual_loss(phi_p, y, x)
    if w_s != 0:
        loss = loss + w_s * perceptual_loss(phi_s, y, x)
    return loss


_COMPONENT_KEYS = ("rela_g", "fm", "vgg", "sp")


def total_generator_loss(weights: LossWeights, components: dict) -> torch.Tensor:
    """Weighted sum of the four generator terms; missing components fail."""
    missing = [k for k in _COMPONENT_KEYS if k not in components]
    if missing:
        raise ValueError(f"missing loss components: {missing}")
    return (
        weights.w_rela * components["rela_g"]
        + weights.w_fm * components["fm"]
        + weights.w_vgg * components["vgg"]
        + weights.w_sp * components["sp"]
    )
