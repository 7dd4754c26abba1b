"""End-to-end federated simulation: round loop, baselines, datasets, metrics.

Schemes:

* ``ours``        -- masked model + distributed DP noise, exact recovery.
* ``fedavg``      -- plain clipped gradient averaging, no privacy machinery.
* ``mp_cdp``      -- masked pipeline with zero client noise; a single
                     central Gaussian noise of variance sigma_eta^2 / K is
                     added to the recovered aggregate (trusted-curator
                     reference point).
* ``mp_dp_naive`` -- the broken composition: clients add plain Gaussian
                     noise to gradients computed under ratio-structured
                     masking (no transitional layers), so the noise the
                     server is left with after unmasking is a scale mixture
                     rather than Gaussian.  Simulated at the recovered level
                     through the unmasking identity.

Metrics are written as newline-delimited JSON plus a CSV summary.  Phase
wall-clock timings go to a separate sidecar so the metrics files stay
byte-for-byte reproducible for a fixed config and seed.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import client as client_mod
from . import dist, nn, privacy, server, topology
from .rng import RngStream

__all__ = [
    "RunConfig",
    "RoundMetrics",
    "RunResult",
    "load_dataset",
    "init_model",
    "run_federated",
    "naive_mask_matrices",
    "stats_suite",
]

SCHEMES = ("ours", "fedavg", "mp_cdp", "mp_dp_naive")


def _default_dataset() -> dict:
    return {
        "type": "synthetic",
        "n_samples": 2000,
        "n_features": 20,
        "n_classes": 2,
        "cluster_std": 1.0,
    }


@dataclass
class RunConfig:
    """Declarative description of one simulation run."""

    scheme: str = "ours"
    layer_dims: tuple = (20, 16, 12, 2)
    num_clients: int = 5
    rounds: int = 40
    client_fraction: float = 1.0
    learning_rate: float = 0.1
    clip_threshold: float = 1e9
    sigma_eta: float | None = None
    sigma_delta: float | None = None
    epsilon: float | None = None
    delta: float | None = None
    sigma_ratio: float = 10.0
    graph_mode: str = "complete"
    n_out: int | None = None
    master_seed: int = 0
    dataset: dict = field(default_factory=_default_dataset)
    eval_fraction: float = 0.25
    truncation_len: int = 512
    shadow_telemetry: bool = True
    out_dir: str | None = None
    dump_transcript: bool = False
    unsafe_dump_secrets: bool = False

    def __post_init__(self):
        self.layer_dims = tuple(self.layer_dims)
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not 0 < self.client_fraction <= 1:
            raise ValueError("client_fraction must be in (0, 1]")
        if self.graph_mode not in ("complete", "random_n_out"):
            raise ValueError(f"unknown graph_mode {self.graph_mode!r}")
        if self.graph_mode == "random_n_out" and not self.n_out:
            raise ValueError("graph_mode 'random_n_out' requires n_out")
        if self.dataset.get("type") == "synthetic":
            n_classes = self.dataset.get("n_classes", 2)
            if self.layer_dims[-1] != n_classes:
                raise ValueError(
                    f"model output dim {self.layer_dims[-1]} != number of "
                    f"classes {n_classes}"
                )
        has_explicit = self.sigma_eta is not None
        has_budget = self.epsilon is not None and self.delta is not None
        if self.scheme in ("ours", "mp_cdp", "mp_dp_naive"):
            if not has_explicit and not has_budget:
                raise ValueError(
                    f"scheme {self.scheme!r} needs sigma_eta or (epsilon, delta)"
                )

    @property
    def k_selected(self) -> int:
        return max(1, round(self.client_fraction * self.num_clients))

    def resolve_sigmas(self) -> tuple[float, float]:
        """Effective (sigma_eta, sigma_delta), solving the budget if needed."""
        if self.sigma_eta is not None:
            return float(self.sigma_eta), float(self.sigma_delta or 0.0)
        if self.epsilon is None or self.delta is None:
            return 0.0, 0.0
        return privacy.solve_sigmas(
            self.epsilon, self.delta, k=self.k_selected,
            regime=self.graph_mode, n=self.n_out, ratio=self.sigma_ratio,
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["layer_dims"] = list(self.layer_dims)
        return doc


@dataclass
class RoundMetrics:
    """Per-round telemetry; the variance estimate is present only when the
    scheme injects independent noise and shadow telemetry is enabled."""

    round_index: int
    train_loss: float
    eval_accuracy: float
    noise_variance_estimate: float | None = None
    timings: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "round": self.round_index,
            "train_loss": self.train_loss,
            "eval_accuracy": self.eval_accuracy,
            "noise_variance_estimate": self.noise_variance_estimate,
        }


@dataclass
class RunResult:
    metrics: list
    final_model: nn.ModelParams


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def _scale_unit(x: np.ndarray) -> np.ndarray:
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span[span == 0] = 1.0
    return (x - lo) / span


def _synthetic_blobs(spec: dict, rng: RngStream):
    n = int(spec.get("n_samples", 2000))
    d = int(spec.get("n_features", 20))
    c = int(spec.get("n_classes", 2))
    std = float(spec.get("cluster_std", 1.0))
    gen = rng.gen
    centers = gen.standard_normal((c, d)) * 2.0
    labels = gen.integers(0, c, size=n)
    x = centers[labels] + std * gen.standard_normal((n, d))
    return _scale_unit(x), labels, c


def _read_csv(path: str, label_column):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if label_column is None:
            label_column = header[-1]
        if isinstance(label_column, str):
            if label_column not in header:
                raise ValueError(f"{path}: no column named {label_column!r}")
            label_idx = header.index(label_column)
        else:
            label_idx = int(label_column)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            feats = []
            for col, value in enumerate(row):
                if col == label_idx:
                    continue
                try:
                    feats.append(float(value))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric value {value!r} in "
                        f"column {header[col]!r}"
                    ) from None
            try:
                label = int(row[label_idx])
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-integer label {row[label_idx]!r}"
                ) from None
            rows.append((feats, label))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    x = np.asarray([r[0] for r in rows], dtype=np.float64)
    labels = np.asarray([r[1] for r in rows], dtype=np.int64)
    return x, labels


def load_dataset(source: dict, num_clients: int, rng: RngStream,
                 eval_fraction: float = 0.25):
    """Build per-client datasets plus a held-out evaluation set.

    Features are scaled to [0, 1] and labels one-hot encoded.  The training
    pool is partitioned IID across clients by shuffled round-robin.
    Returns (clients, eval_set) where clients is a list of (X, Y) pairs and
    eval_set an (X, Y) pair.
    """
    kind = source.get("type", "synthetic")
    if kind == "synthetic":
        x, labels, n_classes = _synthetic_blobs(source, rng.child("blobs"))
    elif kind == "csv":
        x, labels = _read_csv(source["path"], source.get("label_column"))
        x = _scale_unit(x)
        n_classes = int(source.get("n_classes", labels.max() + 1))
    else:
        raise ValueError(f"unknown dataset type {kind!r}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels out of range for the given class count")
    y = np.eye(n_classes)[labels]
    order = rng.child("partition").gen.permutation(len(x))
    n_eval = int(round(eval_fraction * len(x)))
    eval_idx, train_idx = order[:n_eval], order[n_eval:]
    clients = []
    for k in range(num_clients):
        idx = train_idx[k::num_clients]
        if idx.size == 0:
            raise ValueError(
                f"not enough samples to give client {k + 1} any data"
            )
        clients.append((x[idx], y[idx]))
    return clients, (x[eval_idx], y[eval_idx])


def init_model(layer_dims, rng: RngStream) -> nn.ModelParams:
    """Gaussian init scaled by 1/sqrt(fan-in)."""
    dims = tuple(layer_dims)
    weights = [
        rng.gen.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i])
        for i in range(len(dims) - 1)
    ]
    return nn.ModelParams(dims, weights, expanded=False)


def _accuracy(model: nn.ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    out = nn.forward(model, x)[-1]
    return float(np.mean(np.argmax(out, axis=1) == np.argmax(y, axis=1)))


def _plain_clipped_gradients(model: nn.ModelParams, x, y, b: float) -> list:
    grads = nn.plain_gradients(model, x, y)
    out = []
    for g in grads:
        factor = 1.0 / max(1.0, float(np.linalg.norm(g)) / b)
        out.append(g * factor)
    return out


def naive_mask_matrices(layer_dims, rng: RngStream,
                        truncation_len: int = 512) -> list:
    """Ratio-structured masking matrices of the scheme without transitional
    layers: row scalings on the first layer, r_i/r_j ratios in between, and
    reciprocal column scalings on the last layer.  Entry magnitudes follow
    |DN*(1)|."""
    dims = tuple(layer_dims)
    big_l = len(dims) - 1
    if big_l == 1:
        return [np.ones((dims[1], dims[0]))]
    spec = dist.DnStarSpec(m=1, truncation_len=truncation_len)
    r = [
        np.abs(dist.sample_dn_star(spec, rng.child("naive_r", l), size=dims[l]))
        for l in range(1, big_l)
    ]
    masks = [np.repeat(r[0][:, None], dims[0], axis=1)]
    for l in range(2, big_l):
        masks.append(np.outer(r[l - 1], 1.0 / r[l - 2]))
    masks.append(np.repeat((1.0 / r[big_l - 2])[None, :], dims[big_l], axis=0))
    return masks


# ---------------------------------------------------------------------------
# round loop
# ---------------------------------------------------------------------------

class _PhaseTimer:
    def __init__(self):
        self.timings = {}

    def add(self, phase: str, t0: float):
        self.timings[phase] = self.timings.get(phase, 0.0) + (
            time.perf_counter() - t0
        )


def _pooled_variance(diff_layers) -> float:
    flat = np.concatenate([d.ravel() for d in diff_layers])
    return float(np.mean(flat**2))


def run_federated(cfg: RunConfig) -> RunResult:
    """Run the configured scheme for cfg.rounds and return metrics + model."""
    root = RngStream(cfg.master_seed)
    clients, eval_set = load_dataset(cfg.dataset, cfg.num_clients,
                                     root.child("data"), cfg.eval_fraction)
    model = init_model(cfg.layer_dims, root.child("init"))
    sigma_eta, sigma_delta = (0.0, 0.0) if cfg.scheme == "fedavg" \
        else cfg.resolve_sigmas()
    metrics: list[RoundMetrics] = []
    transcript: list[dict] = []
    pool_x = np.concatenate([c[0] for c in clients])
    pool_y = np.concatenate([c[1] for c in clients])

    for t in range(1, cfg.rounds + 1):
        timer = _PhaseTimer()
        sel_gen = root.child("select", t).gen
        selected = sorted(
            int(i) + 1
            for i in sel_gen.choice(cfg.num_clients, size=cfg.k_selected,
                                    replace=False)
        )
        k = len(selected)
        round_entry = {"round": t, "clients": selected}

        if cfg.scheme in ("ours", "mp_cdp"):
            t0 = time.perf_counter()
            w_hat, secret = server.mp_server(
                model, root.child("secret", t), round_tag=t,
                truncation_len=cfg.truncation_len,
            )
            timer.add("perturb", t0)
            if k < 2:
                graph = None
            elif cfg.graph_mode == "complete":
                graph = topology.build_complete(k, nodes=selected)
            else:
                n_eff = min(cfg.n_out, k - 1)
                graph = topology.build_random_n_out(
                    k, n_eff, root.child("graph", t), nodes=selected
                )
            seeds = topology.pairwise_seeds(graph, t, cfg.master_seed) \
                if graph is not None else {}
            eta = sigma_eta if cfg.scheme == "ours" else 0.0
            delta_noise = sigma_delta if cfg.scheme == "ours" else 0.0
            bundles, clean_bundles = [], []
            for cid in selected:
                x, y = clients[cid - 1]
                t0 = time.perf_counter()
                clean = client_mod.local_gradients(w_hat, x, y,
                                                   cfg.clip_threshold)
                timer.add("train", t0)
                t0 = time.perf_counter()
                neighbors = []
                if graph is not None:
                    neighbors = [
                        (v, seeds[(min(cid, v), max(cid, v))])
                        for v in graph.neighbors(cid)
                    ]
                noisy = client_mod.apply_ddp_noise(
                    clean, cid, t, neighbors, eta, delta_noise,
                    root.child("client", cid, t),
                )
                timer.add("noise", t0)
                bundles.append(client_mod.ClientBundle(
                    client_id=cid, round=t, grads=noisy, psi=clean.psi,
                    phi=clean.phi,
                ))
                if cfg.shadow_telemetry:
                    clean_bundles.append(client_mod.ClientBundle(
                        client_id=cid, round=t, grads=clean.grads,
                        psi=clean.psi, phi=clean.phi,
                    ))
            t0 = time.perf_counter()
            agg = server.aggregate(bundles)
            timer.add("aggregate", t0)
            t0 = time.perf_counter()
            recovered = server.recover_aggregate(agg, secret)
            if cfg.scheme == "mp_cdp" and sigma_eta > 0:
                cdp_gen = root.child("cdp_noise", t).gen
                recovered = [
                    g + cdp_gen.standard_normal(g.shape) * sigma_eta / np.sqrt(k)
                    for g in recovered
                ]
            timer.add("recover", t0)
            noise_var = None
            if cfg.shadow_telemetry and cfg.scheme == "ours" and sigma_eta > 0:
                shadow = server.recover_aggregate(
                    server.aggregate(clean_bundles), secret
                )
                noise_var = _pooled_variance(
                    [a - b for a, b in zip(recovered, shadow)]
                )
            if cfg.dump_transcript:
                round_entry["w_hat_norms"] = [
                    float(np.linalg.norm(w)) for w in w_hat.weights
                ]
                round_entry["aggregate_norms"] = [
                    float(np.linalg.norm(g)) for g in agg.grads
                ]
                round_entry["recovered_norms"] = [
                    float(np.linalg.norm(g)) for g in recovered
                ]
                if cfg.unsafe_dump_secrets:
                    round_entry["secret"] = {
                        "r_mags": [v.tolist() for v in secret.r_mags],
                        "s_mags": [v.tolist() for v in secret.s_mags],
                        "gamma": secret.gamma.tolist(),
                        "r_add": secret.r_add.tolist(),
                    }

        elif cfg.scheme == "fedavg":
            noise_var = None
            t0 = time.perf_counter()
            grad_sets = [
                _plain_clipped_gradients(model, *clients[cid - 1],
                                         cfg.clip_threshold)
                for cid in selected
            ]
            timer.add("train", t0)
            t0 = time.perf_counter()
            recovered = [
                sum(gs[i] for gs in grad_sets) / k
                for i in range(len(grad_sets[0]))
            ]
            timer.add("aggregate", t0)

        else:  # mp_dp_naive
            t0 = time.perf_counter()
            masks = naive_mask_matrices(cfg.layer_dims,
                                        root.child("naive_secret", t),
                                        cfg.truncation_len)
            timer.add("perturb", t0)
            t0 = time.perf_counter()
            grad_sets = [
                _plain_clipped_gradients(model, *clients[cid - 1],
                                         cfg.clip_threshold)
                for cid in selected
            ]
            timer.add("train", t0)
            t0 = time.perf_counter()
            noisy_sets = []
            for cid, gs in zip(selected, grad_sets):
                gen = root.child("naive_eta", cid, t).gen
                noisy_sets.append([
                    g + m * (gen.standard_normal(g.shape) * sigma_eta)
                    for g, m in zip(gs, masks)
                ])
            timer.add("noise", t0)
            t0 = time.perf_counter()
            recovered = [
                sum(gs[i] for gs in noisy_sets) / k
                for i in range(len(noisy_sets[0]))
            ]
            timer.add("aggregate", t0)
            noise_var = None
            if cfg.shadow_telemetry and sigma_eta > 0:
                shadow = [
                    sum(gs[i] for gs in grad_sets) / k
                    for i in range(len(grad_sets[0]))
                ]
                noise_var = _pooled_variance(
                    [a - b for a, b in zip(recovered, shadow)]
                )

        t0 = time.perf_counter()
        model = server.mu_server(model, recovered, cfg.learning_rate)
        timer.add("update", t0)

        metrics.append(RoundMetrics(
            round_index=t,
            train_loss=nn.batch_loss(model, pool_x, pool_y),
            eval_accuracy=_accuracy(model, *eval_set),
            noise_variance_estimate=noise_var,
            timings=dict(timer.timings),
        ))
        if cfg.dump_transcript:
            transcript.append(round_entry)

    result = RunResult(metrics=metrics, final_model=model)
    if cfg.out_dir:
        _write_outputs(cfg, result, transcript)
    return result


def _write_outputs(cfg: RunConfig, result: RunResult, transcript: list) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    with open(out / "metrics.ndjson", "w") as fh:
        for m in result.metrics:
            fh.write(json.dumps(m.to_json_dict(), sort_keys=True) + "\n")
    with open(out / "timings.ndjson", "w") as fh:
        for m in result.metrics:
            fh.write(json.dumps(
                {"round": m.round_index, **m.timings}, sort_keys=True) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "train_loss", "eval_accuracy",
                         "noise_variance_estimate"])
        for m in result.metrics:
            writer.writerow([
                m.round_index, repr(m.train_loss), repr(m.eval_accuracy),
                "" if m.noise_variance_estimate is None
                else repr(m.noise_variance_estimate),
            ])
    if cfg.dump_transcript:
        with open(out / "transcript.ndjson", "w") as fh:
            for entry in transcript:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# statistical property suite
# ---------------------------------------------------------------------------

def _product_samples(m: int, n: int, sigma: float, count: int,
                     rng: RngStream, truncation_len: int,
                     break_tail: bool) -> np.ndarray:
    star = dist.DnStarSpec(m=m, truncation_len=truncation_len)
    prod = np.ones(count)
    for i in range(m):
        stream = rng.child("x", i)
        if break_tail:
            log_mag = dist._dn_star_log_magnitude(
                star, stream, count, _mismatched_compensation=True
            )
            draws = dist.sample_rademacher(stream, size=count) * np.exp(log_mag)
        else:
            draws = dist.sample_dn_star(star, stream, size=count)
        prod = prod * draws
    for j in range(n):
        prod = prod * dist.sample_dn(dist.DnSpec(sigma=sigma, n=n),
                                     rng.child("y", j), size=count)
    return prod


def stats_suite(seed: int = 20240, samples: int = 100_000,
                truncation_len: int = 128, break_tail_correction: bool = False,
                break_antisymmetry: bool = False) -> list:
    """Run the named statistical/equivalence properties and return verdicts.

    The two ``break_*`` flags inject known faults so the corresponding check
    can be seen to catch them; with both off all properties should pass.
    """
    root = RngStream(seed)
    verdicts = []

    def record(name: str, passed: bool, **details):
        verdicts.append({"name": name, "passed": bool(passed),
                         "details": details})

    # product normality across factor counts
    for m, n in ((1, 1), (2, 1), (2, 2)):
        z = _product_samples(m, n, 1.0, samples, root.child("prod", m, n),
                             truncation_len, break_tail_correction)
        rep = dist.normality_report(z, 1.0)
        record(f"product_normality_m{m}_n{n}", rep.passes(),
               variance=rep.variance, p_value=rep.p_value)

    # masked-noise normality for the three layer positions
    for case, spec_ms in (("first", (1,)), ("middle", (2, 2)), ("last", (1,))):
        stream = root.child("layer", case)
        factor = np.ones(samples)
        for i, m in enumerate(spec_ms):
            star = dist.DnStarSpec(m=m, truncation_len=truncation_len)
            factor = factor * dist.sample_dn_star(star, stream.child(i),
                                                  size=samples)
        eta = dist.sample_dn(dist.DnSpec(sigma=1.0, n=1), stream.child("eta"),
                             size=samples)
        rep = dist.normality_report(factor * eta, 1.0)
        record(f"layer_case_normality_{case}", rep.passes(),
               variance=rep.variance, p_value=rep.p_value)

    # pairwise cancellation
    graph = topology.build_random_n_out(100, 5, root.child("graph"))
    seeds = topology.pairwise_seeds(graph, 1, seed)
    shapes = [(4, 3)]
    sigma_delta = 10.0
    anti_ok = True
    sums = {u: np.zeros(shapes[0]) for u in graph.nodes}
    for (u, v) in sorted(graph.edges):
        s = seeds[(u, v)]
        d_uv = client_mod.draw_pairwise_noise(u, v, 1, s, sigma_delta, shapes)
        # the fault mode hands the second endpoint a different seed, so its
        # draw is independent instead of the negation of the first
        seed_vu = s + 1 if break_antisymmetry else s
        d_vu = client_mod.draw_pairwise_noise(v, u, 1, seed_vu, sigma_delta,
                                              shapes)
        anti_ok &= bool(np.all(d_uv[0] == -d_vu[0]))
        sums[u] += d_uv[0]
        sums[v] += d_vu[0]
    residual = float(np.max(np.abs(sum(sums.values()) / len(graph.nodes))))
    record("pairwise_cancellation", anti_ok and residual <= 1e-9,
           antisymmetric=anti_ok, aggregate_residual=residual)

    # exact gradient recovery
    worst = 0.0
    for trial in range(10):
        rng = root.child("recovery", trial)
        model = init_model((5, 8, 6, 3), rng.child("model"))
        x = rng.child("x").gen.standard_normal((16, 5))
        y = rng.child("y").gen.standard_normal((16, 3))
        w_hat, secret = server.mp_server(model, rng.child("secret"),
                                         truncation_len=truncation_len)
        rec = server.recover_aggregate(nn.batch_gradients(w_hat, x, y), secret)
        plain = nn.plain_gradients(model, x, y)
        for a, b in zip(rec, plain):
            scale = max(np.max(np.abs(b)), 1e-12)
            worst = max(worst, float(np.max(np.abs(a - b)) / scale))
    record("gradient_recovery", worst <= 1e-6, worst_rel_error=worst)

    # masked-output identity
    worst = 0.0
    for trial in range(10):
        rng = root.child("output", trial)
        model = init_model((5, 8, 6, 3), rng.child("model"))
        x = rng.child("x").gen.standard_normal((8, 5))
        w_hat, secret = server.mp_server(model, rng.child("secret"),
                                         truncation_len=truncation_len)
        acts = nn.forward(nn.expand_model(model), x)
        acts_hat = nn.forward(w_hat, x)
        big_l = model.num_layers
        for l in range(1, big_l):
            worst = max(worst, float(np.max(np.abs(
                acts_hat[2 * l - 2] - secret.r_mags[l - 1] * acts[2 * l - 2]
            ))))
        alpha = acts_hat[-2].sum(axis=1)
        worst = max(worst, float(np.max(np.abs(
            acts_hat[-1] - (acts[-1] + alpha[:, None] * secret.r[None, :])
        ))))
    record("masked_output_identity", worst <= 1e-10, worst_abs_error=worst)

    # unrecoverability witness
    worst = 0.0
    min_model_gap = np.inf
    for trial in range(10):
        rng = root.child("forge", trial)
        model = init_model((5, 8, 6, 3), rng.child("model"))
        w_hat, _ = server.mp_server(model, rng.child("secret"),
                                    truncation_len=truncation_len)
        alt, alt_secret = server.forge_consistent_model(w_hat,
                                                        rng.child("alt"))
        w_hat2 = server.apply_perturbation(alt, alt_secret)
        worst = max(worst, max(
            float(np.max(np.abs(a - b)))
            for a, b in zip(w_hat2.weights, w_hat.weights)
        ))
        min_model_gap = min(min_model_gap, max(
            float(np.max(np.abs(a - b)))
            for a, b in zip(alt.weights, model.weights)
        ))
    record("unrecoverability_witness", worst <= 1e-10 and min_model_gap > 1e-3,
           worst_reconstruction_error=worst, min_model_gap=min_model_gap)

    # broken composition: masked plain-Gaussian noise is visibly non-Gaussian
    rngn = root.child("naive")
    sigma = 1.0
    pooled = []
    per_round_entries = sum(
        a * b for a, b in zip((16, 12, 2), (20, 16, 12))
    )
    n_rounds = max(1, samples // per_round_entries + 1)
    for t in range(n_rounds):
        masks = naive_mask_matrices((20, 16, 12, 2), rngn.child("mask", t),
                                    truncation_len)
        gen = rngn.child("eta", t).gen
        for mk in masks:
            pooled.append((mk * gen.standard_normal(mk.shape) * sigma).ravel())
    pooled = np.concatenate(pooled)[:max(samples, 10_000)]
    rep = dist.normality_report(pooled, sigma)
    ratio = rep.variance / sigma**2
    record("naive_composition_failure",
           ratio >= 1.5 and rep.p_value < 1e-4,
           variance_ratio=ratio, p_value=rep.p_value)

    # zero-noise end-to-end equivalence
    base = dict(layer_dims=(8, 6, 2), num_clients=4, rounds=5,
                learning_rate=0.2, master_seed=seed,
                dataset={"type": "synthetic", "n_samples": 200,
                         "n_features": 8, "n_classes": 2, "cluster_std": 1.0},
                shadow_telemetry=False)
    ours = run_federated(RunConfig(scheme="ours", sigma_eta=0.0,
                                   sigma_delta=0.0, **base))
    ref = run_federated(RunConfig(scheme="fedavg", **base))
    rel = max(
        float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))
        for a, b in zip(ours.final_model.weights, ref.final_model.weights)
    )
    record("zero_noise_equivalence", rel <= 1e-6, rel_error=rel)

    return verdicts
