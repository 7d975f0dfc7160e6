"""Complex Gaussian mixture spatial model: mixture SCMs built from rank-1
direction templates, maximum-likelihood power spectral densities, the
profiled observation log-likelihood, and time-frequency responsibilities.

The numerical core runs on float64/complex128 torch tensors so the same
code path serves both diagnostics here and gradient-based fitting in the
variational module.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .arrays import SteeringField
from .dsp import MultichannelSpectrogram

LAMBDA_FLOOR = 1e-12
DEFAULT_BAND = (100.0, 7600.0)
DEFAULT_EPS = 0.01


@dataclass
class MixtureState:
    """Direction weights W (K, D), mixing levels pi (K,), and ridge eps."""

    W: np.ndarray
    pi: np.ndarray
    field: SteeringField
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != self.pi.shape[0]:
            raise ValueError("W must be (K, D) with K matching pi")
        if np.any(self.W < 0):
            raise ValueError("direction weights must be nonnegative")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-9:
            raise ValueError("pi must lie on the simplex")
        if self.eps <= 0:
            raise ValueError("eps must be positive for positive definiteness")

    @property
    def n_components(self) -> int:
        return self.W.shape[0]


def mixture_scm(w_k: np.ndarray, field: SteeringField, f: int, eps: float) -> np.ndarray:
    """S_fk = sum_d w_kd a_fd a_fd^H + eps I; Hermitian with min eigenvalue >= eps."""
    w_k = np.asarray(w_k, dtype=np.float64)
    if np.any(w_k < 0):
        raise ValueError("direction weights must be nonnegative")
    if eps <= 0:
        raise ValueError("eps must be positive")
    a = field.vectors[f]                              # (D, M)
    S = np.einsum("d,dm,dn->mn", w_k, a, a.conj())
    return S + eps * np.eye(field.n_mics)


def psd_ml(x: np.ndarray, S: np.ndarray) -> float:
    """Maximum-likelihood PSD lambda = x^H S^-1 x / M, clamped at the floor."""
    x = np.asarray(x, dtype=np.complex128)
    S = np.asarray(S, dtype=np.complex128)
    M = x.shape[0]
    val = np.real(x.conj() @ np.linalg.solve(S, x)) / M
    return max(float(val), LAMBDA_FLOOR)


def _scm_stack(A: torch.Tensor, W: torch.Tensor, eps) -> torch.Tensor:
    """Mixture SCMs for all (f, k): (F, K, M, M) from steering A (F, D, M)."""
    Wc = W.to(A.dtype)
    S = torch.einsum("kd,fdm,fdn->fkmn", Wc, A, A.conj())
    eye = torch.eye(A.shape[-1], dtype=A.dtype, device=A.device)
    if not torch.is_tensor(eps):
        eps = torch.tensor(float(eps), dtype=torch.float64)
    return S + eps.to(A.dtype) * eye


def component_log_densities(X: torch.Tensor, A: torch.Tensor, W: torch.Tensor,
                            eps) -> torch.Tensor:
    """Per-bin log-densities of the profiled complex Gaussian components.

    X: (T, F, M) complex; A: (F, D, M) complex; W: (K, D) real positive.
    Returns (T, F, K) real: -M log(lambda) - log|S| - x^H S^-1 x / lambda,
    with lambda the clamped ML estimate x^H S^-1 x / M.
    """
    T, F, M = X.shape
    K = W.shape[0]
    S = _scm_stack(A, W, eps)                         # (F, K, M, M)
    L = torch.linalg.cholesky(S)
    logdet = 2.0 * torch.log(torch.diagonal(L, dim1=-2, dim2=-1).real).sum(-1)  # (F, K)
    B = X.permute(1, 2, 0).unsqueeze(1).expand(F, K, M, T)
    Y = torch.cholesky_solve(B, L)                    # (F, K, M, T)
    q = torch.einsum("fkmt,fkmt->fkt", B.conj(), Y).real  # x^H S^-1 x
    lam = torch.clamp(q / M, min=LAMBDA_FLOOR)
    logdens = -M * torch.log(lam) - logdet.unsqueeze(-1) - q / lam
    return logdens.permute(2, 0, 1)                   # (T, F, K)


def isotropic_log_densities(X: torch.Tensor) -> torch.Tensor:
    """Profiled log-density of an identity-SCM (spatially white) component."""
    M = X.shape[-1]
    lam = torch.clamp((X.conj() * X).real.sum(-1) / M, min=LAMBDA_FLOOR)
    return -M * torch.log(lam) - M


def log_likelihood_core(X: torch.Tensor, A: torch.Tensor, W: torch.Tensor,
                        pi: torch.Tensor, eps,
                        diffuse_weight: torch.Tensor | None = None) -> torch.Tensor:
    """sum_tf logsumexp_k [log pi_k + component log-density].

    With `diffuse_weight` rho, the mixture becomes
    (1 - rho) * sum_k pi_k N_k + rho * N_iso with an identity-SCM class.
    """
    logdens = component_log_densities(X, A, W, eps)
    if diffuse_weight is None:
        return torch.logsumexp(torch.log(pi) + logdens, dim=-1).sum()
    rho = diffuse_weight
    terms = torch.cat([
        torch.log1p(-rho) + torch.log(pi) + logdens,
        (torch.log(rho) + isotropic_log_densities(X)).unsqueeze(-1),
    ], dim=-1)
    return torch.logsumexp(terms, dim=-1).sum()


def _band_tensors(X: MultichannelSpectrogram, field: SteeringField,
                  fmin: float, fmax: float) -> tuple[torch.Tensor, torch.Tensor]:
    band = field.band_indices(fmin, fmax)
    Xt = torch.from_numpy(np.ascontiguousarray(X.data[:, band, :]))
    At = torch.from_numpy(np.ascontiguousarray(field.vectors[band]))
    return Xt, At


def log_likelihood(X: MultichannelSpectrogram, state: MixtureState,
                   fmin: float = DEFAULT_BAND[0], fmax: float = DEFAULT_BAND[1]) -> float:
    """Profiled cGMM log-likelihood over the configured frequency band."""
    if not np.all(np.isfinite(X.data)):
        raise ValueError("non-finite observations")
    Xt, At = _band_tensors(X, state.field, fmin, fmax)
    with torch.no_grad():
        val = log_likelihood_core(Xt, At, torch.from_numpy(state.W),
                                  torch.from_numpy(state.pi), state.eps)
    return float(val)


def tf_responsibilities(X: MultichannelSpectrogram, state: MixtureState,
                        fmin: float = DEFAULT_BAND[0],
                        fmax: float = DEFAULT_BAND[1]) -> np.ndarray:
    """Posterior component responsibilities per (t, f) bin in the band; rows sum to 1."""
    Xt, At = _band_tensors(X, state.field, fmin, fmax)
    with torch.no_grad():
        logdens = component_log_densities(Xt, At, torch.from_numpy(state.W), state.eps)
        logits = torch.log(torch.from_numpy(state.pi)) + logdens
        resp = torch.softmax(logits, dim=-1)
    return resp.numpy()
