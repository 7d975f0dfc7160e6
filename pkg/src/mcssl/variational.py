"""Variational posteriors over direction weights and mixing levels, the
Monte-Carlo ELBO with reparameterized sampling, and per-scene fitting by
Adam gradient ascent.

Posterior family: q(w_kd) log-normal with mean mu_kd and per-component
scale sigma_k; q(pi) Dirichlet with concentration beta * pibar. During
fitting the likelihood term uses reparameterized draws of both the
direction weights and the mixing levels; the sampled mixing levels are
what drive redundant components toward zero mass, because a component
whose bins are covered by another costs nothing when its sampled mixing
level dips. Fixed-draw ELBO evaluation uses the Dirichlet mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import torch
from scipy.special import digamma, gammaln

from .arrays import SteeringField
from .cgmm import DEFAULT_BAND, DEFAULT_EPS, log_likelihood_core
from .dsp import MultichannelSpectrogram
from .features import beam_power_profile


@dataclass
class VariationalParams:
    """Free parameters of the variational posterior."""

    mu: np.ndarray            # (K, D) log-normal location
    log_sigma: np.ndarray     # (K,) log of per-component scale
    pibar_logits: np.ndarray  # (K,) softmax gives the Dirichlet mean
    log_beta: float           # log Dirichlet concentration scale

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_sigma = np.asarray(self.log_sigma, dtype=np.float64)
        self.pibar_logits = np.asarray(self.pibar_logits, dtype=np.float64)
        if self.mu.ndim != 2:
            raise ValueError("mu must be (K, D)")
        K = self.mu.shape[0]
        if self.log_sigma.shape != (K,) or self.pibar_logits.shape != (K,):
            raise ValueError("log_sigma and pibar_logits must be (K,)")

    @property
    def n_components(self) -> int:
        return self.mu.shape[0]

    @property
    def n_directions(self) -> int:
        return self.mu.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def pibar(self) -> np.ndarray:
        z = self.pibar_logits - self.pibar_logits.max()
        e = np.exp(z)
        return e / e.sum()

    @property
    def beta(self) -> float:
        return math.exp(self.log_beta)

    def doa_indicator(self) -> np.ndarray:
        """Row-stochastic DoA indicator: softmax of mu per component."""
        z = self.mu - self.mu.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass
class Priors:
    alpha0: float = 0.01
    sigma0: float = 1.0

    def __post_init__(self):
        if self.alpha0 <= 0 or self.sigma0 <= 0:
            raise ValueError("alpha0 and sigma0 must be positive")


@dataclass
class FitConfig:
    iters: int = 600
    lr: float = 0.05
    n_mc: int = 1
    seed: int = 0
    eps: float = 0.05                  # SCM regularizer; looser than the
                                       # diagnostic DEFAULT_EPS, which suits
                                       # fits with the diffuse class enabled
    init_mode: str = "beam-power"      # or "random"
    n_components: int = 4
    fmin: float = DEFAULT_BAND[0]
    fmax: float = DEFAULT_BAND[1]
    fix_pi: bool = False               # ablation: mixing levels pinned to 1/K
    common_noise: bool = False         # reuse one noise draw across iterations
    diffuse: bool = True               # add an identity-SCM noise class to the fit
    freq_stride: int = 2               # likelihood bin decimation during fitting
    sample_pi: bool = True             # draw mixing levels from q(pi) during fitting
    pi_stagger: float = 0.5            # initial mixing-logit offset between components

    def __post_init__(self):
        if self.iters < 1 or self.n_mc < 1 or self.lr <= 0:
            raise ValueError("require iters >= 1, n_mc >= 1, lr > 0")
        if self.init_mode not in ("beam-power", "random"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")


@dataclass
class FitResult:
    params: VariationalParams
    elbo_trace: list
    diffuse_weight: float | None = None

    def to_dict(self) -> dict:
        return {
            "mu": self.params.mu.tolist(),
            "sigma": self.params.sigma.tolist(),
            "pibar": self.params.pibar.tolist(),
            "beta": self.params.beta,
            "diffuse_weight": self.diffuse_weight,
            "elbo_trace": list(self.elbo_trace),
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "FitResult":
        sigma = np.asarray(doc["sigma"], dtype=float)
        pibar = np.asarray(doc["pibar"], dtype=float)
        params = VariationalParams(
            mu=np.asarray(doc["mu"], dtype=float),
            log_sigma=np.log(sigma),
            pibar_logits=np.log(pibar),
            log_beta=math.log(doc["beta"]),
        )
        return cls(params, list(doc.get("elbo_trace", [])),
                   doc.get("diffuse_weight"))

    @classmethod
    def load(cls, path) -> "FitResult":
        with open(path) as f:
            return cls.from_dict(json.load(f))


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def sample_w(params: VariationalParams, noise: np.ndarray) -> np.ndarray:
    """Reparameterized draw from q(W): w_kd = exp(mu_kd + sigma_k * noise_kd)."""
    noise = np.asarray(noise, dtype=np.float64)
    if not np.all(np.isfinite(noise)):
        raise ValueError("noise must be finite")
    return np.exp(params.mu + params.sigma[:, None] * noise)


def kl_lognormal(params: VariationalParams, priors: Priors) -> float:
    """KL[q(W) || p(W)] between factorized log-normals, in closed form."""
    s2 = params.sigma[:, None] ** 2
    terms = (params.mu ** 2 + s2 - priors.sigma0 ** 2) / (2.0 * priors.sigma0 ** 2) \
        + np.log(priors.sigma0) - params.log_sigma[:, None]
    return float(terms.sum())


def kl_dirichlet(pibar: np.ndarray, beta: float, alpha0: float) -> float:
    """KL[Dir(beta*pibar) || Dir(alpha0, ..., alpha0)] in closed form."""
    a = beta * np.asarray(pibar, dtype=np.float64)
    if np.any(a <= 0):
        raise ValueError("beta * pibar must be positive")
    K = a.shape[0]
    a_sum = a.sum()
    val = gammaln(a_sum) - gammaln(K * alpha0) \
        - np.sum(gammaln(a) - gammaln(alpha0)) \
        + np.sum((a - alpha0) * (digamma(a) - digamma(a_sum)))
    return float(val)


# ---------------------------------------------------------------------------
# torch core

def _kl_lognormal_t(mu, log_sigma, sigma0):
    s2 = torch.exp(2.0 * log_sigma)[:, None]
    return ((mu ** 2 + s2 - sigma0 ** 2) / (2.0 * sigma0 ** 2)
            + math.log(sigma0) - log_sigma[:, None]).sum()


def _kl_dirichlet_t(pibar, log_beta, alpha0):
    a = torch.exp(log_beta) * pibar
    K = a.shape[0]
    a_sum = a.sum()
    return (torch.lgamma(a_sum) - math.lgamma(K * alpha0)
            - (torch.lgamma(a) - math.lgamma(alpha0)).sum()
            + ((a - alpha0) * (torch.digamma(a) - torch.digamma(a_sum))).sum())


def _elbo_t(Xt, At, mu, log_sigma, pibar_logits, log_beta, noise,
            priors: Priors, eps: float, fix_pi: bool, rho_logit=None,
            sample_pi: bool = False):
    """ELBO averaged over the leading axis of noise (n_mc, K, D).

    With sample_pi the likelihood uses pathwise Dirichlet draws of the
    mixing levels (one per MC sample); otherwise the Dirichlet mean.
    """
    sigma = torch.exp(log_sigma)
    if fix_pi:
        K = mu.shape[0]
        pibar = torch.full((K,), 1.0 / K, dtype=mu.dtype)
    else:
        pibar = torch.softmax(pibar_logits, dim=0)
    rho = torch.sigmoid(rho_logit) if rho_logit is not None else None
    lik = 0.0
    for i in range(noise.shape[0]):
        W = torch.exp(mu + sigma[:, None] * noise[i])
        if sample_pi and not fix_pi:
            conc = torch.clamp(torch.exp(log_beta) * pibar, min=1e-4)
            pi_use = torch.clamp(torch.distributions.Dirichlet(conc).rsample(),
                                 min=1e-30)
        else:
            pi_use = pibar
        lik = lik + log_likelihood_core(Xt, At, W, pi_use, eps, rho)
    lik = lik / noise.shape[0]
    elbo = lik - _kl_lognormal_t(mu, log_sigma, priors.sigma0)
    if not fix_pi:
        elbo = elbo - _kl_dirichlet_t(pibar, log_beta, priors.alpha0)
    return elbo


def _scene_tensors(X: MultichannelSpectrogram, field: SteeringField,
                   config: FitConfig, stride: int = 1):
    band = field.band_indices(config.fmin, config.fmax)[::max(stride, 1)]
    if band.size == 0:
        raise ValueError("frequency band selects no bins")
    Xt = torch.from_numpy(np.ascontiguousarray(X.data[:, band, :]))
    At = torch.from_numpy(np.ascontiguousarray(field.vectors[band]))
    return Xt, At


def elbo(X: MultichannelSpectrogram, params: VariationalParams, priors: Priors,
         field: SteeringField, config: FitConfig,
         noise: np.ndarray | None = None,
         rng: np.random.Generator | None = None) -> float:
    """Monte-Carlo ELBO estimate. Pass `noise` (n_mc, K, D) for a fixed-draw
    evaluation, or `rng` to sample; defaults to a generator seeded from config."""
    K, D = params.mu.shape
    if noise is None:
        if rng is None:
            rng = np.random.default_rng(config.seed)
        noise = rng.standard_normal((config.n_mc, K, D))
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 2:
        noise = noise[None]
    Xt, At = _scene_tensors(X, field, config)
    with torch.no_grad():
        val = _elbo_t(Xt, At,
                      torch.from_numpy(params.mu),
                      torch.from_numpy(params.log_sigma),
                      torch.from_numpy(params.pibar_logits),
                      torch.tensor(params.log_beta, dtype=torch.float64),
                      torch.from_numpy(noise), priors, config.eps, config.fix_pi)
    if not torch.isfinite(val):
        raise FloatingPointError("non-finite ELBO estimate")
    return float(val)


# ---------------------------------------------------------------------------
# initialization

def _circular_peaks(profile: np.ndarray, n_peaks: int, min_sep_bins: int) -> list:
    """Greedy selection of the strongest well-separated bins."""
    D = profile.shape[0]
    order = np.argsort(profile)[::-1]
    chosen = []
    for d in order:
        if all(min(abs(d - p), D - abs(d - p)) >= min_sep_bins for p in chosen):
            chosen.append(int(d))
        if len(chosen) == n_peaks:
            break
    return chosen


def init_params(X: MultichannelSpectrogram, field: SteeringField,
                priors: Priors, config: FitConfig) -> VariationalParams:
    """Starting point for the fit: beam-power peaks (default) or random logits.

    Peak selection uses the phase-whitened steered power (sharper than raw
    beam power, whose sidelobes can mask a weaker source)."""
    from .baselines import srp_phat

    K, D = config.n_components, field.n_directions
    rng = np.random.default_rng(config.seed)
    mu = rng.normal(0.0, 0.1, size=(K, D))
    if config.init_mode == "beam-power":
        profile = srp_phat(X, field, config.fmin, config.fmax).values
        min_sep = max(1, int(round(D * 30.0 / 360.0)))
        peaks = _circular_peaks(profile, K, min_sep)
        d_idx = np.arange(D)
        for k, pk in enumerate(peaks):
            dist = np.minimum(np.abs(d_idx - pk), D - np.abs(d_idx - pk))
            mu[k] += 3.0 * np.exp(-0.5 * (dist / 1.5) ** 2)
    log_sigma = np.full(K, math.log(priors.sigma0))
    # A small descending offset breaks the symmetry between components that
    # would otherwise split one source's mass indefinitely.
    pibar_logits = -config.pi_stagger * np.arange(K, dtype=np.float64)
    log_beta = math.log(10.0 * K * priors.alpha0)
    return VariationalParams(mu, log_sigma, pibar_logits, log_beta)


# ---------------------------------------------------------------------------
# fitting

def fit(X: MultichannelSpectrogram, field: SteeringField, priors: Priors,
        config: FitConfig, init: VariationalParams | None = None,
        noise_stream=None) -> FitResult:
    """Per-scene gradient ascent on the ELBO with Adam.

    Deterministic given config.seed. `noise_stream(i)` may be supplied by
    tests to inject the (n_mc, K, D) standard-normal draw for iteration i.
    """
    if init is None:
        init = init_params(X, field, priors, config)
    K, D = init.mu.shape
    Xt, At = _scene_tensors(X, field, config, config.freq_stride)

    mu = torch.from_numpy(init.mu.copy()).requires_grad_()
    log_sigma = torch.from_numpy(init.log_sigma.copy()).requires_grad_()
    pibar_logits = torch.from_numpy(init.pibar_logits.copy()).requires_grad_()
    log_beta = torch.tensor(init.log_beta, dtype=torch.float64, requires_grad=True)
    rho_logit = torch.zeros((), dtype=torch.float64, requires_grad=True) \
        if config.diffuse else None
    leaves = [mu, log_sigma] if config.fix_pi else [mu, log_sigma, pibar_logits, log_beta]
    if rho_logit is not None:
        leaves.append(rho_logit)
    opt = torch.optim.Adam(leaves, lr=config.lr, betas=(0.9, 0.999))

    gen = torch.Generator().manual_seed(config.seed)
    torch.manual_seed(config.seed)  # Dirichlet draws use the global stream
    fixed_noise = None
    trace = []
    for i in range(config.iters):
        if noise_stream is not None:
            noise = torch.from_numpy(np.asarray(noise_stream(i), dtype=np.float64))
        elif config.common_noise:
            if fixed_noise is None:
                fixed_noise = torch.randn((config.n_mc, K, D), generator=gen,
                                          dtype=torch.float64)
            noise = fixed_noise
        else:
            noise = torch.randn((config.n_mc, K, D), generator=gen, dtype=torch.float64)
        opt.zero_grad()
        val = _elbo_t(Xt, At, mu, log_sigma, pibar_logits, log_beta, noise,
                      priors, config.eps, config.fix_pi, rho_logit,
                      sample_pi=config.sample_pi)
        if not torch.isfinite(val):
            raise DivergenceError(f"non-finite ELBO at iteration {i}", trace)
        (-val).backward()
        opt.step()
        trace.append(float(val.detach()))

    params = VariationalParams(
        mu.detach().numpy(), log_sigma.detach().numpy(),
        pibar_logits.detach().numpy(), float(log_beta.detach()),
    )
    if config.fix_pi:
        params = replace(params, pibar_logits=np.zeros(K))
    rho = float(torch.sigmoid(rho_logit.detach())) if rho_logit is not None else None
    return FitResult(params, trace, rho)


# ---------------------------------------------------------------------------
# gradient verification

def gradient_check(seed: int = 0, n_configs: int = 10, fd_step: float = 1e-5,
                   max_mu_coords: int = 24, corrupt: bool = False) -> dict:
    """Compare autograd ELBO gradients against central finite differences on
    random small problems. Returns per-field max relative errors.

    `corrupt` is a negative-control hook that biases one gradient entry.
    """
    rng = np.random.default_rng(seed)
    sizes = [(K, D, M) for K in (2, 4) for D in (12, 72) for M in (2, 4)]
    results = []
    for c in range(n_configs):
        K, D, M = sizes[c % len(sizes)]
        T, F = 4, 8
        Xc = (rng.standard_normal((T, F, M)) + 1j * rng.standard_normal((T, F, M)))
        Ac = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(F, D, M)))
        Xt, At = torch.from_numpy(Xc), torch.from_numpy(Ac)
        priors = Priors(alpha0=0.05, sigma0=1.0)
        eps = 0.05
        noise = torch.from_numpy(rng.standard_normal((1, K, D)))

        theta = {
            "mu": rng.normal(0, 0.5, size=(K, D)),
            "log_sigma": rng.normal(0, 0.2, size=K),
            "pibar_logits": rng.normal(0, 0.5, size=K),
            "log_beta": np.array([rng.normal(0.5, 0.2)]),
        }

        def eval_elbo(th):
            return float(_elbo_t(
                Xt, At,
                torch.from_numpy(th["mu"]),
                torch.from_numpy(th["log_sigma"]),
                torch.from_numpy(th["pibar_logits"]),
                torch.from_numpy(th["log_beta"])[0],
                noise, priors, eps, False))

        tensors = {k: torch.from_numpy(v.copy()).requires_grad_() for k, v in theta.items()}
        val = _elbo_t(Xt, At, tensors["mu"], tensors["log_sigma"],
                      tensors["pibar_logits"], tensors["log_beta"][0],
                      noise, priors, eps, False)
        val.backward()
        grads = {k: t.grad.numpy().copy() for k, t in tensors.items()}
        if corrupt:
            grads["mu"][0, 0] += 1.0

        cfg_report = {"K": K, "D": D, "M": M, "fields": {}}
        for name, arr in theta.items():
            flat_idx = list(np.ndindex(arr.shape))
            if name == "mu" and len(flat_idx) > max_mu_coords:
                sel = rng.choice(len(flat_idx), size=max_mu_coords, replace=False)
                flat_idx = [flat_idx[i] for i in sel]
            max_rel = 0.0
            for idx in flat_idx:
                th_p = {k: v.copy() for k, v in theta.items()}
                th_m = {k: v.copy() for k, v in theta.items()}
                th_p[name][idx] += fd_step
                th_m[name][idx] -= fd_step
                fd = (eval_elbo(th_p) - eval_elbo(th_m)) / (2 * fd_step)
                an = grads[name][idx]
                rel = abs(an - fd) / max(abs(fd), abs(an), 1e-8)
                max_rel = max(max_rel, rel)
            cfg_report["fields"][name] = max_rel
        results.append(cfg_report)

    worst = {name: max(r["fields"][name] for r in results)
             for name in ("mu", "log_sigma", "pibar_logits", "log_beta")}
    return {"configs": results, "max_rel_error": worst,
            "passed": all(v < 1e-4 for v in worst.values())}
