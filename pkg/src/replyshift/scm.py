"""Gumbel-Max structural causal model over autoregressive decoding.

The generation of a response is cast as y_t = argmax_k(log p_tk + u_tk)
with i.i.d. Gumbel(0,1) noise u. Abduction recovers a posterior sample of
the noise that is consistent with an observed response (per step: the max
of the shifted Gumbels is a fresh standard Gumbel at the observed token,
the other coordinates are shifted Gumbels truncated below that max).
Re-decoding under the same noise with a substituted reply perspective
yields the counterfactual response.

Noise is derived from a counter-based RNG keyed by (master seed, sample
key, step), so augmentation is reproducible and order-independent across
workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .seqmodel import GENERATOR_LAYOUT

_MASK64 = (1 << 64) - 1


class AbductionDegenerateError(ValueError):
    """Observed token has zero probability under the abducting model."""

    def __init__(self, step: int, token_id: int):
        super().__init__(f"observed token {token_id} has zero probability at step {step}")
        self.step = step
        self.token_id = token_id


@dataclass(frozen=True)
class SeedTrail:
    """Identifies the noise streams of one sample: master seed plus a
    per-sample key; per-step counters are appended on draw."""
    master_seed: int
    sample_key: int = 0


def stream(master_seed: int, sample_key: int, step: int) -> np.random.Generator:
    """Counter-based RNG stream for one (sample, step); order-independent."""
    bg = np.random.Philox(counter=[step & _MASK64, 0, 0, 0],
                          key=[master_seed & _MASK64, sample_key & _MASK64])
    return np.random.Generator(bg)


def _uniform_to_gumbel(u: np.ndarray | float):
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def sample_gumbel(rng: np.random.Generator, size=None):
    """Standard Gumbel(0,1) draw(s): -ln(-ln U) for U uniform on (0,1)."""
    return _uniform_to_gumbel(rng.random(size))


def sample_truncated_gumbel(location, bound, rng: np.random.Generator, size=None):
    """Gumbel(location, 1) conditioned to lie at or below the bound.

    Uses the closed form -ln(exp(-g') + exp(-b)) with g' an unconstrained
    Gumbel(location, 1) draw, evaluated through logaddexp for stability.
    """
    g = location + sample_gumbel(rng, size)
    return -np.logaddexp(-g, -bound)


def gumbel_max_sample(dist, rng: np.random.Generator, size=None):
    """Categorical sampling via argmax(log p + Gumbel noise).

    With size=None returns a single token id; otherwise an id array.
    """
    lp = dist.logprobs
    if size is None:
        return int(np.argmax(lp + sample_gumbel(rng, lp.shape[0])))
    noise = sample_gumbel(rng, (size, lp.shape[0]))
    return np.argmax(lp[None, :] + noise, axis=1)


def abduct_row(logprobs: np.ndarray, k_star: int, uniforms: np.ndarray) -> np.ndarray:
    """Posterior noise for one decoding step, given 1 + |V| uniforms.

    uniforms[0] drives the max Gumbel placed at the observed index k_star;
    uniforms[1:] drive the remaining coordinates, truncated below that max.
    Zero-probability coordinates keep unconstrained noise (they can never
    win the argmax). The argmax of logprobs + returned noise is k_star.
    """
    v = logprobs.shape[0]
    if uniforms.shape[0] != v + 1:
        raise ValueError("need 1 + |V| uniform draws")
    g_star = float(_uniform_to_gumbel(uniforms[0]))
    fresh = _uniform_to_gumbel(uniforms[1:])
    with np.errstate(invalid="ignore"):
        g = -np.logaddexp(-(logprobs + fresh), -g_star)
        # keep the observed index strictly maximal even under float rounding
        g = np.minimum(g, np.nextafter(g_star, -np.inf))
        u = g - logprobs
    infinite = np.isneginf(logprobs)
    u[infinite] = fresh[infinite]
    u[k_star] = g_star - logprobs[k_star]
    return u


def _prior_row(uniforms: np.ndarray) -> np.ndarray:
    return np.asarray(_uniform_to_gumbel(uniforms[1:]))


class GumbelNoise:
    """Per-step, per-vocabulary-entry posterior noise for one sample.

    Rows for steps beyond the observed length are fresh prior Gumbels.
    Rows are stored densely up to dense_limit vocabulary entries; above
    that only the seed trail is kept and rows are regenerated on demand,
    bitwise identically.
    """

    def __init__(self, model, x_ids, z_ids, y_ids, seed: SeedTrail,
                 dense_limit: int = 50_000):
        self.model = model
        self.x_ids = list(x_ids)
        self.z_ids = list(z_ids)
        self.y_ids = list(y_ids)
        self.seed = seed
        self.vocab_size = len(model.vocab)
        self.observed_ids = self.y_ids + [model.vocab.eos]
        self.length = len(self.observed_ids)
        self._dense = None
        if self.vocab_size <= dense_limit:
            self._dense = np.empty((self.length, self.vocab_size))
            for t in range(self.length):
                self._dense[t] = self._posterior_row(t)
        else:
            for t in range(self.length):  # still validate observability
                self._abduction_logprobs(t)

    def _abduction_logprobs(self, t: int) -> np.ndarray:
        ctx = GENERATOR_LAYOUT.context_ids(self.model.vocab, self.x_ids,
                                           self.z_ids, self.y_ids[:t])
        lp = self.model.next_logprobs(ctx).logprobs
        k_star = self.observed_ids[t]
        if np.isneginf(lp[k_star]):
            raise AbductionDegenerateError(t, k_star)
        return lp

    def _posterior_row(self, t: int) -> np.ndarray:
        lp = self._abduction_logprobs(t)
        rng = stream(self.seed.master_seed, self.seed.sample_key, t)
        return abduct_row(lp, self.observed_ids[t], rng.random(self.vocab_size + 1))

    def row(self, t: int) -> np.ndarray:
        """Noise row for step t: posterior within the observed length,
        fresh prior beyond it."""
        if t < self.length:
            if self._dense is not None:
                return self._dense[t]
            return self._posterior_row(t)
        rng = stream(self.seed.master_seed, self.seed.sample_key, t)
        return _prior_row(rng.random(self.vocab_size + 1))

    def dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        return np.stack([self.row(t) for t in range(self.length)])

    def dump(self, path) -> None:
        """Debug dump: 8-byte header (T, |V|) then float64 rows, row-major."""
        u = self.dense()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", self.length, self.vocab_size))
            fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())


def read_noise_dump(path):
    with open(path, "rb") as fh:
        t, v = struct.unpack("<II", fh.read(8))
        u = np.frombuffer(fh.read(), dtype="<f8").reshape(t, v)
    return u


def abduct(model, x_ids, z_ids, y_ids, seed: SeedTrail,
           dense_limit: int = 50_000) -> GumbelNoise:
    """Posterior noise sample consistent with the observed response.

    For every step over y + EOS, conditioned on (x, z, y_<t): place a fresh
    standard Gumbel at the observed token index and truncated shifted
    Gumbels elsewhere, then subtract off the location parameters. By
    construction argmax_k(log p_tk + u_tk) equals the observed token at
    every step.
    """
    if not y_ids:
        raise ValueError("observed response must be non-empty")
    return GumbelNoise(model, x_ids, z_ids, y_ids, seed, dense_limit=dense_limit)


def counterfactual_predict(model, x_ids, z_ids, noise: GumbelNoise,
                           temperature: float = 0.5, max_len: int = 50,
                           ) -> tuple[list[int], bool]:
    """Re-decode under fixed noise with a (possibly substituted) perspective.

    Per step: argmax_k(log p_tk / temperature + u_tk) with the model
    conditioned on (x, z, generated prefix). Noise rows beyond the observed
    length come from the noise's seed trail. The prompt-control ids BOS and
    SEP are never decodable (EOS terminates); they structure the prompt and
    may occur exactly once there. Returns (token ids including the terminal
    EOS when reached, truncated flag). With the observed perspective and
    temperature 1 this reproduces the observed response.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be > 0")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    vocab = model.vocab
    out: list[int] = []
    prefix: list[int] = []
    for t in range(max_len):
        ctx = GENERATOR_LAYOUT.context_ids(vocab, x_ids, z_ids, prefix)
        lp = model.next_logprobs(ctx).logprobs
        score = lp / temperature + noise.row(t)
        score[[vocab.bos, vocab.sep]] = -np.inf
        tok = int(np.argmax(score))
        out.append(tok)
        if tok == vocab.eos:
            return out, False
        prefix.append(tok)
    return out, True
